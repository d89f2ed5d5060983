//! Structure-aware warm start.
//!
//! The default random initialization starts the encoder from an arbitrary
//! geometry, and the small supervised learning rate recovers structure
//! slowly. The warm start instead fits the attention weight matrices and the
//! recurrent candidate maps so that the fused embedding reconstructs the
//! training-span adjacency under a logistic dot-product decoder before the
//! main optimization begins — a self-supervised link-reconstruction
//! pre-fit computed from training snapshots only.
//!
//! The fit exploits a configuration in which the full forward pass is cheap
//! and dense: attention vectors at zero (uniform neighbor weights), semantic
//! attention vectors at zero (uniform type weights), gate weight matrices at
//! zero (gates reduce to per-dimension constants from their biases). Under
//! that configuration the model's forward pass factors into sparse
//! neighborhood averaging, per-type linear maps, and element-wise
//! nonlinearities, all of which this module reproduces exactly; a unit test
//! pins the equivalence against the tape-built forward.

use rand::Rng;

use crate::config::TrainConfig;
use crate::error::Result;
use crate::graph::{build_typed_subgraphs, rng_for, FeatureTable, TemporalNetwork};
use crate::params::{ModelDims, ParamStore};

/// Above this node count the dense pair decoder is too expensive and the
/// warm start falls back to the random initialization.
pub const WARM_START_MAX_NODES: usize = 1200;

const FIT_ITERS: usize = 3000;
const KAPPA: f64 = 5.0;
const FIT_LR: f64 = 2e-2;
/// RNG stream for the fit's starting matrices.
const STREAM_FIT: u64 = 30;
/// RNG stream for the symmetry-breaking per-head noise.
const STREAM_HEADS: u64 = 31;
const HEAD_NOISE: f64 = 1e-3;

/// Uniform-attention neighborhood averaging for one typed subgraph:
/// row a of the output is the mean of the input rows over 𝒩_a (self
/// inclusive), zero for absent nodes.
struct Averager {
    /// (start, inv_degree) per node; `cols` holds the concatenated lists.
    starts: Vec<usize>,
    cols: Vec<u32>,
    inv: Vec<f64>,
}

impl Averager {
    fn from_neighbors(neighbors: &[Vec<u32>]) -> Self {
        let mut starts = Vec::with_capacity(neighbors.len() + 1);
        let mut cols = Vec::new();
        let mut inv = Vec::with_capacity(neighbors.len());
        starts.push(0);
        for list in neighbors {
            cols.extend_from_slice(list);
            starts.push(cols.len());
            inv.push(if list.is_empty() { 0.0 } else { 1.0 / list.len() as f64 });
        }
        Averager { starts, cols, inv }
    }

    /// out = P · m
    fn apply(&self, m: &[f64], d: usize, out: &mut [f64]) {
        for a in 0..self.inv.len() {
            let row = &mut out[a * d..(a + 1) * d];
            row.iter_mut().for_each(|v| *v = 0.0);
            let w = self.inv[a];
            if w == 0.0 {
                continue;
            }
            for &b in &self.cols[self.starts[a]..self.starts[a + 1]] {
                let src = &m[b as usize * d..(b as usize + 1) * d];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }

    /// dm += Pᵀ · dz
    fn apply_transpose(&self, dz: &[f64], d: usize, dm: &mut [f64]) {
        for a in 0..self.inv.len() {
            let w = self.inv[a];
            if w == 0.0 {
                continue;
            }
            let src = &dz[a * d..(a + 1) * d];
            for &b in &self.cols[self.starts[a]..self.starts[a + 1]] {
                let dst = &mut dm[b as usize * d..(b as usize + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }
}

/// Structures of one training snapshot used by the fit.
struct SnapFit {
    /// (edge type, averager) for types with at least one participant.
    types: Vec<(usize, Averager)>,
    /// 1 / number of participating types per node (0 for absent nodes).
    count_inv: Vec<f64>,
    /// Per present type: participation flags.
    member: Vec<Vec<bool>>,
}

fn snapshot_structures(thn: &TemporalNetwork, n: usize, r_total: usize) -> Result<Vec<SnapFit>> {
    let mut out = Vec::with_capacity(thn.train_len());
    for snap in thn.train_snapshots() {
        let subs = build_typed_subgraphs(snap, r_total, n)?;
        let mut types = Vec::new();
        let mut member = Vec::new();
        let mut counts = vec![0usize; n];
        for sub in &subs {
            if sub.nodes.is_empty() {
                continue;
            }
            let mut flags = vec![false; n];
            for &a in &sub.nodes {
                flags[a as usize] = true;
                counts[a as usize] += 1;
            }
            types.push((sub.edge_type, Averager::from_neighbors(&sub.neighbors)));
            member.push(flags);
        }
        let count_inv =
            counts.iter().map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect();
        out.push(SnapFit { types, count_inv, member });
    }
    Ok(out)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out = X · G  (X: n×d, G: d×d row-major)
fn matmul(x: &[f64], g: &[f64], n: usize, d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for a in 0..n {
        let row = &x[a * d..(a + 1) * d];
        let dst = &mut out[a * d..(a + 1) * d];
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let grow = &g[i * d..(i + 1) * d];
            for (o, gv) in dst.iter_mut().zip(grow) {
                *o += xi * gv;
            }
        }
    }
}

/// dg += Xᵀ · dm
fn matmul_accum_t(x: &[f64], dm: &[f64], n: usize, d: usize, dg: &mut [f64]) {
    for a in 0..n {
        let row = &x[a * d..(a + 1) * d];
        let src = &dm[a * d..(a + 1) * d];
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let dst = &mut dg[i * d..(i + 1) * d];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += xi * s;
            }
        }
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, t: u64) {
        let bc1 = 1.0 - 0.9f64.powi(t as i32);
        let bc2 = 1.0 - 0.999f64.powi(t as i32);
        for k in 0..p.len() {
            self.m[k] = 0.9 * self.m[k] + 0.1 * g[k];
            self.v[k] = 0.999 * self.v[k] + 0.001 * g[k] * g[k];
            p[k] -= lr * (self.m[k] / bc1) / ((self.v[k] / bc2).sqrt() + 1e-8);
        }
    }
}

/// All tensors the fit optimizes.
struct FitParams {
    /// Per (time slot, edge type): d×d linear map applied to the features.
    g: Vec<Vec<f64>>,
    /// LSTM / GRU candidate maps.
    cl: Vec<f64>,
    cg: Vec<f64>,
    /// Per-dimension gate biases: input, forget, output, LSTM candidate,
    /// GRU update, GRU candidate.
    bi: Vec<f64>,
    bf: Vec<f64>,
    bo: Vec<f64>,
    blc: Vec<f64>,
    bz: Vec<f64>,
    bgc: Vec<f64>,
}

impl FitParams {
    fn new(slots: usize, r: usize, d: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, STREAM_FIT);
        let g = (0..slots * r)
            .map(|_| (0..d * d).map(|_| rng.gen_range(-0.08..0.08)).collect())
            .collect();
        let eye = |d: usize| {
            let mut m = vec![0.0; d * d];
            (0..d).for_each(|i| m[i * d + i] = 1.0);
            m
        };
        FitParams {
            g,
            cl: eye(d),
            cg: eye(d),
            bi: vec![0.0; d],
            bf: vec![0.0; d],
            bo: vec![0.0; d],
            blc: vec![0.0; d],
            bz: vec![0.0; d],
            bgc: vec![0.0; d],
        }
    }
}

/// Scratch of one forward pass, kept for the backward sweep.
struct ForwardPass {
    /// Pre-activation Z per (t, present-type index).
    z: Vec<Vec<Vec<f64>>>,
    /// Fused per-snapshot embeddings u^t.
    ut: Vec<Vec<f64>>,
    /// tanh candidates per channel and snapshot.
    gl: Vec<Vec<f64>>,
    gs: Vec<Vec<f64>>,
    /// LSTM cell states per snapshot.
    cells: Vec<Vec<f64>>,
    /// GRU hidden states per snapshot.
    hs: Vec<Vec<f64>>,
    /// tanh of the final cell state.
    tc: Vec<f64>,
    /// Final fused embedding.
    u: Vec<f64>,
}

fn forward(
    p: &FitParams,
    snaps: &[SnapFit],
    x: &[f64],
    n: usize,
    d: usize,
    r_total: usize,
    slot_of: &dyn Fn(usize) -> usize,
) -> ForwardPass {
    let t_len = snaps.len();
    let mut z = Vec::with_capacity(t_len);
    let mut ut = Vec::with_capacity(t_len);
    let mut m = vec![0.0; n * d];
    for (t, snap) in snaps.iter().enumerate() {
        let mut zt = Vec::with_capacity(snap.types.len());
        let mut fused = vec![0.0; n * d];
        for (r, avg) in &snap.types {
            let gi = slot_of(t) * r_total + r;
            matmul(x, &p.g[gi], n, d, &mut m);
            let mut za = vec![0.0; n * d];
            avg.apply(&m, d, &mut za);
            // ELU aggregate feeds the fused view
            for a in 0..n {
                if snap.count_inv[a] == 0.0 {
                    continue;
                }
                let w = snap.count_inv[a];
                for j in 0..d {
                    let v = za[a * d + j];
                    let e = if v > 0.0 { v } else { v.exp_m1() };
                    fused[a * d + j] += w * e;
                }
            }
            zt.push(za);
        }
        z.push(zt);
        ut.push(fused);
    }

    let i_g: Vec<f64> = p.bi.iter().map(|&b| sigmoid(b)).collect();
    let f_g: Vec<f64> = p.bf.iter().map(|&b| sigmoid(b)).collect();
    let o_g: Vec<f64> = p.bo.iter().map(|&b| sigmoid(b)).collect();
    let z_g: Vec<f64> = p.bz.iter().map(|&b| sigmoid(b)).collect();

    let mut gl = Vec::with_capacity(t_len);
    let mut gs = Vec::with_capacity(t_len);
    let mut cells = Vec::with_capacity(t_len);
    let mut hs = Vec::with_capacity(t_len);
    let mut c = vec![0.0; n * d];
    let mut h = vec![0.0; n * d];
    let mut cand = vec![0.0; n * d];
    for u_t in &ut {
        matmul(u_t, &transpose(&p.cl, d), n, d, &mut cand);
        let gl_t: Vec<f64> =
            cand.iter().enumerate().map(|(k, &v)| (v + p.blc[k % d]).tanh()).collect();
        for k in 0..n * d {
            c[k] = f_g[k % d] * c[k] + i_g[k % d] * gl_t[k];
        }
        cells.push(c.clone());
        gl.push(gl_t);

        matmul(u_t, &transpose(&p.cg, d), n, d, &mut cand);
        let gs_t: Vec<f64> =
            cand.iter().enumerate().map(|(k, &v)| (v + p.bgc[k % d]).tanh()).collect();
        for k in 0..n * d {
            h[k] = (1.0 - z_g[k % d]) * gs_t[k] + z_g[k % d] * h[k];
        }
        hs.push(h.clone());
        gs.push(gs_t);
    }
    let tc: Vec<f64> = c.iter().map(|&v| v.tanh()).collect();
    let u: Vec<f64> =
        (0..n * d).map(|k| 0.5 * (o_g[k % d] * tc[k] + h[k])).collect();
    ForwardPass { z, ut, gl, gs, cells, hs, tc, u }
}

fn transpose(m: &[f64], d: usize) -> Vec<f64> {
    let mut t = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            t[j * d + i] = m[i * d + j];
        }
    }
    t
}

/// Mean logistic reconstruction loss over all ordered off-diagonal pairs.
#[cfg(test)]
fn fit_loss(u: &[f64], adj: &[bool], n: usize, d: usize) -> f64 {
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let s: f64 = (0..d).map(|j| u[a * d + j] * u[b * d + j]).sum();
            let p = sigmoid(KAPPA * s);
            total -= if adj[a * n + b] { p.ln() } else { (1.0 - p).ln() };
        }
    }
    total / (n * (n - 1)) as f64
}

/// dU of the mean logistic reconstruction loss.
fn decoder_grad(u: &[f64], adj: &[bool], n: usize, d: usize) -> Vec<f64> {
    let mut du = vec![0.0; n * d];
    let norm = 1.0 / (n * (n - 1)) as f64;
    for a in 0..n {
        for b in (a + 1)..n {
            let ua = &u[a * d..(a + 1) * d];
            let ub = &u[b * d..(b + 1) * d];
            let s: f64 = ua.iter().zip(ub).map(|(x, y)| x * y).sum();
            let y = if adj[a * n + b] { 1.0 } else { 0.0 };
            // both ordered pairs (a,b) and (b,a) contribute the same term
            let coef = 2.0 * KAPPA * (sigmoid(KAPPA * s) - y) * norm;
            for j in 0..d {
                du[a * d + j] += coef * ub[j];
                du[b * d + j] += coef * ua[j];
            }
        }
    }
    du
}

struct FitGrads {
    g: Vec<Vec<f64>>,
    cl: Vec<f64>,
    cg: Vec<f64>,
    bi: Vec<f64>,
    bf: Vec<f64>,
    bo: Vec<f64>,
    blc: Vec<f64>,
    bz: Vec<f64>,
    bgc: Vec<f64>,
}

fn backward(
    p: &FitParams,
    fp: &ForwardPass,
    du: &[f64],
    snaps: &[SnapFit],
    x: &[f64],
    n: usize,
    d: usize,
    r_total: usize,
    slot_of: &dyn Fn(usize) -> usize,
) -> FitGrads {
    let t_len = snaps.len();
    let i_g: Vec<f64> = p.bi.iter().map(|&b| sigmoid(b)).collect();
    let f_g: Vec<f64> = p.bf.iter().map(|&b| sigmoid(b)).collect();
    let o_g: Vec<f64> = p.bo.iter().map(|&b| sigmoid(b)).collect();
    let z_g: Vec<f64> = p.bz.iter().map(|&b| sigmoid(b)).collect();

    let mut grads = FitGrads {
        g: p.g.iter().map(|g| vec![0.0; g.len()]).collect(),
        cl: vec![0.0; d * d],
        cg: vec![0.0; d * d],
        bi: vec![0.0; d],
        bf: vec![0.0; d],
        bo: vec![0.0; d],
        blc: vec![0.0; d],
        bz: vec![0.0; d],
        bgc: vec![0.0; d],
    };

    // u = 0.5 (o ⊙ tanh(c_T) + h_T)
    let mut dc: Vec<f64> = (0..n * d)
        .map(|k| 0.5 * du[k] * o_g[k % d] * (1.0 - fp.tc[k] * fp.tc[k]))
        .collect();
    let mut dh: Vec<f64> = (0..n * d).map(|k| 0.5 * du[k]).collect();
    for k in 0..n * d {
        grads.bo[k % d] += 0.5 * du[k] * fp.tc[k] * o_g[k % d] * (1.0 - o_g[k % d]);
    }

    let mut d_gl = vec![vec![0.0; n * d]; t_len];
    let mut d_gs = vec![vec![0.0; n * d]; t_len];
    for t in (0..t_len).rev() {
        for k in 0..n * d {
            let j = k % d;
            // c_t = f ⊙ c_{t-1} + i ⊙ gl_t
            grads.bi[j] += dc[k] * fp.gl[t][k] * i_g[j] * (1.0 - i_g[j]);
            d_gl[t][k] = dc[k] * i_g[j];
            if t > 0 {
                grads.bf[j] += dc[k] * fp.cells[t - 1][k] * f_g[j] * (1.0 - f_g[j]);
            }
            // h_t = (1-z) ⊙ gs_t + z ⊙ h_{t-1}
            let prev_h = if t > 0 { fp.hs[t - 1][k] } else { 0.0 };
            grads.bz[j] += dh[k] * (prev_h - fp.gs[t][k]) * z_g[j] * (1.0 - z_g[j]);
            d_gs[t][k] = dh[k] * (1.0 - z_g[j]);
        }
        for k in 0..n * d {
            let j = k % d;
            dc[k] *= f_g[j];
            dh[k] *= z_g[j];
        }
    }

    let mut dut = vec![0.0; n * d];
    let mut dm = vec![0.0; n * d];
    let mut scratch = vec![0.0; n * d];
    for t in 0..t_len {
        dut.iter_mut().for_each(|v| *v = 0.0);
        // gl_t = tanh(u_t · clᵀ + blc)
        let a1: Vec<f64> = (0..n * d)
            .map(|k| d_gl[t][k] * (1.0 - fp.gl[t][k] * fp.gl[t][k]))
            .collect();
        matmul_accum_t(&a1, &fp.ut[t], n, d, &mut grads.cl);
        for k in 0..n * d {
            grads.blc[k % d] += a1[k];
        }
        matmul(&a1, &p.cl, n, d, &mut scratch);
        for k in 0..n * d {
            dut[k] += scratch[k];
        }
        let a2: Vec<f64> = (0..n * d)
            .map(|k| d_gs[t][k] * (1.0 - fp.gs[t][k] * fp.gs[t][k]))
            .collect();
        matmul_accum_t(&a2, &fp.ut[t], n, d, &mut grads.cg);
        for k in 0..n * d {
            grads.bgc[k % d] += a2[k];
        }
        matmul(&a2, &p.cg, n, d, &mut scratch);
        for k in 0..n * d {
            dut[k] += scratch[k];
        }

        // spatial stage
        for (pi, (r, avg)) in snaps[t].types.iter().enumerate() {
            let gi = slot_of(t) * r_total + r;
            let za = &fp.z[t][pi];
            let member = &snaps[t].member[pi];
            let mut dz = vec![0.0; n * d];
            for a in 0..n {
                if !member[a] {
                    continue;
                }
                let w = snaps[t].count_inv[a];
                for j in 0..d {
                    let v = za[a * d + j];
                    let elu_d = if v > 0.0 { 1.0 } else { v.exp() };
                    dz[a * d + j] = dut[a * d + j] * w * elu_d;
                }
            }
            dm.iter_mut().for_each(|v| *v = 0.0);
            avg.apply_transpose(&dz, d, &mut dm);
            matmul_accum_t(x, &dm, n, d, &mut grads.g[gi]);
        }
    }
    grads
}

/// Dense adjacency flags of the last training snapshot (union over types).
fn last_snapshot_adjacency(thn: &TemporalNetwork, n: usize) -> Vec<bool> {
    let mut adj = vec![false; n * n];
    if let Some(snap) = thn.train_snapshots().last() {
        for &(a, b, _) in &snap.edges {
            if a != b {
                adj[a as usize * n + b as usize] = true;
                adj[b as usize * n + a as usize] = true;
            }
        }
    }
    adj
}

/// Build the warm-started parameter store; falls back to the random
/// initialization when the dense fit is not applicable.
pub fn warm_start(
    dims: ModelDims,
    features: &FeatureTable,
    thn: &TemporalNetwork,
    cfg: &TrainConfig,
) -> Result<ParamStore> {
    warm_start_with_limit(dims, features, thn, cfg, WARM_START_MAX_NODES)
}

pub fn warm_start_with_limit(
    dims: ModelDims,
    features: &FeatureTable,
    thn: &TemporalNetwork,
    cfg: &TrainConfig,
    max_nodes: usize,
) -> Result<ParamStore> {
    let mut store = ParamStore::init(dims, features, cfg.seed);
    let (n, d) = (dims.n_nodes, dims.d);
    let adj = last_snapshot_adjacency(thn, n);
    if n > max_nodes || !adj.iter().any(|&v| v) {
        return Ok(store);
    }
    let r_total = dims.edge_types;
    let snaps = snapshot_structures(thn, n, r_total)?;
    let slots = dims.time_slots();
    let slot_of = |t: usize| dims.slot(t);

    let mut p = FitParams::new(slots, r_total, d, cfg.seed);
    let mut adam_g: Vec<AdamState> = p.g.iter().map(|g| AdamState::new(g.len())).collect();
    let mut adam_cl = AdamState::new(d * d);
    let mut adam_cg = AdamState::new(d * d);
    let mut adam_b: Vec<AdamState> = (0..6).map(|_| AdamState::new(d)).collect();

    let x = &features.data;
    for it in 1..=FIT_ITERS as u64 {
        let fp = forward(&p, &snaps, x, n, d, r_total, &slot_of);
        let du = decoder_grad(&fp.u, &adj, n, d);
        let grads = backward(&p, &fp, &du, &snaps, x, n, d, r_total, &slot_of);
        for (gi, g) in p.g.iter_mut().enumerate() {
            adam_g[gi].step(g, &grads.g[gi], FIT_LR, it);
        }
        adam_cl.step(&mut p.cl, &grads.cl, FIT_LR, it);
        adam_cg.step(&mut p.cg, &grads.cg, FIT_LR, it);
        for (bs, (param, grad)) in adam_b.iter_mut().zip([
            (&mut p.bi, &grads.bi),
            (&mut p.bf, &grads.bf),
            (&mut p.bo, &grads.bo),
            (&mut p.blc, &grads.blc),
            (&mut p.bz, &grads.bz),
            (&mut p.bgc, &grads.bgc),
        ]) {
            bs.step(param, grad, FIT_LR, it);
        }
    }

    install(&mut store, &p, dims, cfg.seed);
    Ok(store)
}

/// Write the fitted tensors into the parameter store layout.
fn install(store: &mut ParamStore, p: &FitParams, dims: ModelDims, seed: u64) {
    let d = dims.d;
    let mut rng = rng_for(seed, STREAM_HEADS);
    for t in 0..dims.time_slots() {
        for r in 0..dims.edge_types {
            // the fit applies X·G; the model applies X·Wᵀ, so W = Gᵀ
            let wt = transpose(&p.g[t * dims.edge_types + r], d);
            for k in 0..dims.heads {
                let idx = store.index_of(&format!("node.w.t{t}.r{r}.h{k}"));
                let noise: Vec<f64> =
                    (0..d * d).map(|_| rng.gen_range(-HEAD_NOISE..HEAD_NOISE)).collect();
                store.entries[idx].data =
                    wt.iter().zip(&noise).map(|(a, b)| a + b).collect();
                let idx = store.index_of(&format!("node.a.t{t}.r{r}.h{k}"));
                store.entries[idx].data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let idx = store.index_of(&format!("edge.w.t{t}"));
        let mut eye = vec![0.0; d * d];
        (0..d).for_each(|i| eye[i * d + i] = 1.0);
        store.entries[idx].data = eye;
        for name in [format!("edge.b.t{t}"), format!("edge.z.t{t}")] {
            let idx = store.index_of(&name);
            store.entries[idx].data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    // LSTM: gate rows [input, forget, output, candidate]; only the candidate
    // block carries the fitted map, gate weights stay zero so the gates are
    // the per-dimension constants the fit assumed.
    let set = |store: &mut ParamStore, name: &str, data: Vec<f64>| {
        let idx = store.index_of(name);
        store.entries[idx].data = data;
    };
    let mut wx = vec![0.0; 4 * d * d];
    wx[3 * d * d..4 * d * d].copy_from_slice(&p.cl);
    set(store, "lstm.wx", wx);
    set(store, "lstm.wh", vec![0.0; 4 * d * d]);
    let mut b = vec![0.0; 4 * d];
    b[..d].copy_from_slice(&p.bi);
    b[d..2 * d].copy_from_slice(&p.bf);
    b[2 * d..3 * d].copy_from_slice(&p.bo);
    b[3 * d..].copy_from_slice(&p.blc);
    set(store, "lstm.b", b);
    // GRU: gate rows [update, reset, candidate].
    let mut wx = vec![0.0; 3 * d * d];
    wx[2 * d * d..3 * d * d].copy_from_slice(&p.cg);
    set(store, "gru.wx", wx);
    set(store, "gru.wh", vec![0.0; 3 * d * d]);
    let mut b = vec![0.0; 3 * d];
    b[..d].copy_from_slice(&p.bz);
    b[2 * d..].copy_from_slice(&p.bgc);
    set(store, "gru.b", b);
}
