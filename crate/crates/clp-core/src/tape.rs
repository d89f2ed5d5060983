//! A small reverse-mode differentiation tape.
//!
//! The model is rebuilt as a fresh tape every forward pass. Ops are
//! coarse-grained (whole attention layers, whole contrastive sums) so the
//! per-op backward rules stay hand-checkable while keeping training close to
//! hand-written speed. All arithmetic is f64.

use std::collections::HashMap;
use std::rc::Rc;

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Elu,
    LeakyRelu, // slope 0.2
    OneMinus,
}

/// Fixed sparse row-major matrix used for the linear aggregation stages.
#[derive(Debug, Clone, Default)]
pub struct SparseMat {
    /// Per output row: (input row, coefficient).
    pub rows: Vec<Vec<(u32, f64)>>,
}

/// Contrastive sum description: each term contributes
/// `logsumexp_{j in cands} (anchor . den_key_j / tau) - anchor . pos_key / tau`.
#[derive(Debug, Clone)]
pub struct NceTerms {
    pub terms: Vec<(u32, u32, u32)>, // (anchor row, positive-key row, candidate list id)
    pub cand_lists: Vec<Vec<u32>>,
    pub tau: f64,
}

enum Op {
    Leaf,
    /// X (n,k) * W (m,k)^T -> (n,m)
    MatMulT { x: Var, w: Var },
    AddRowBroadcast { x: Var, b: Var },
    Unary { x: Var, kind: Unary },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddList { xs: Vec<Var> },
    MeanList { xs: Vec<Var> },
    MatVec { x: Var, v: Var },
    StackCols { xs: Vec<Var> },
    /// Row-wise softmax over unmasked columns; masked entries output 0.
    MaskedSoftmaxRows { x: Var },
    SparseMM { x: Var, mat: Rc<SparseMat> },
    RowScale { x: Var, scale: Rc<Vec<f64>> },
    /// beta_i = a[..d] . m[src_i] + a[d..] . m[dst_i]
    AttnScores { m: Var, a: Var, edges: Rc<Vec<(u32, u32)>> },
    /// Softmax within contiguous segments; `starts` has len n_segments + 1.
    SegmentSoftmax { x: Var, starts: Rc<Vec<usize>> },
    /// out[src_i] += alpha_i * m[dst_i]
    EdgeWeightedSum { alpha: Var, m: Var, edges: Rc<Vec<(u32, u32)>> },
    /// out[a] = sum_r w[a,r] * xs[r][a]
    ConvexCombine { w: Var, xs: Vec<Var> },
    Nce { anchors: Var, pos_keys: Var, den_keys: Var, terms: Rc<NceTerms>, label: &'static str },
    /// Binary cross-entropy over positive/negative row pairs of x.
    BceLink { x: Var, pos: Rc<Vec<(u32, u32)>>, neg: Rc<Vec<(u32, u32)>>, flip_neg: bool },
    /// Weighted sum of scalars.
    WeightedSum { xs: Vec<Var>, weights: Vec<f64> },
    SliceCols { x: Var, from: usize, width: usize },
}

pub struct Tape {
    values: Vec<Vec<f64>>,
    shapes: Vec<(usize, usize)>,
    ops: Vec<Op>,
    /// Backward invocations per labelled contrastive op; used to assert that
    /// ablated losses never propagate gradients.
    pub nce_backward_counts: HashMap<&'static str, usize>,
}

// Four independent accumulators so the reduction vectorizes; falls back to
// the plain ordering for lengths below one chunk.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let split = a.len() - a.len() % 4;
    let mut acc = [0.0f64; 4];
    for (x, y) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        s += x * y;
    }
    s
}

fn apply_unary(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Unary::Elu => {
            if x > 0.0 {
                x
            } else {
                x.exp() - 1.0
            }
        }
        Unary::LeakyRelu => {
            if x > 0.0 {
                x
            } else {
                0.2 * x
            }
        }
        Unary::OneMinus => 1.0 - x,
    }
}

/// Derivative in terms of input x and output y.
fn unary_grad(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Tanh => 1.0 - y * y,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Elu => {
            if x > 0.0 {
                1.0
            } else {
                y + 1.0
            }
        }
        Unary::LeakyRelu => {
            if x > 0.0 {
                1.0
            } else {
                0.2
            }
        }
        Unary::OneMinus => -1.0,
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-(x.abs())).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            shapes: Vec::new(),
            ops: Vec::new(),
            nce_backward_counts: HashMap::new(),
        }
    }

    fn push(&mut self, value: Vec<f64>, shape: (usize, usize), op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.0 * shape.1);
        self.values.push(value);
        self.shapes.push(shape);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shapes[v.0], (1, 1));
        self.values[v.0][0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.shapes[v.0]
    }

    pub fn leaf(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(data, (rows, cols), Op::Leaf)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(vec![0.0; rows * cols], rows, cols)
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (n, k) = self.shapes[x.0];
        let (m, k2) = self.shapes[w.0];
        assert_eq!(k, k2, "matmul_t inner dims");
        let mut out = vec![0.0; n * m];
        {
            let xs = &self.values[x.0];
            let ws = &self.values[w.0];
            for i in 0..n {
                let xi = &xs[i * k..(i + 1) * k];
                for j in 0..m {
                    out[i * m + j] = dot(xi, &ws[j * k..(j + 1) * k]);
                }
            }
        }
        self.push(out, (n, m), Op::MatMulT { x, w })
    }

    pub fn add_row_broadcast(&mut self, x: Var, b: Var) -> Var {
        let (n, d) = self.shapes[x.0];
        assert_eq!(self.values[b.0].len(), d);
        let mut out = self.values[x.0].clone();
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] += self.values[b.0][j];
            }
        }
        self.push(out, (n, d), Op::AddRowBroadcast { x, b })
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let shape = self.shapes[x.0];
        let out = self.values[x.0].iter().map(|&v| apply_unary(kind, v)).collect();
        self.push(out, shape, Op::Unary { x, kind })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let shape = self.shapes[a.0];
        assert_eq!(shape, self.shapes[b.0]);
        let out = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x + y)
            .collect();
        self.push(out, shape, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let shape = self.shapes[a.0];
        assert_eq!(shape, self.shapes[b.0]);
        let out = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x * y)
            .collect();
        self.push(out, shape, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let shape = self.shapes[x.0];
        let out = self.values[x.0].iter().map(|v| v * c).collect();
        self.push(out, shape, Op::Scale { x, c })
    }

    pub fn add_list(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let shape = self.shapes[xs[0].0];
        let mut out = vec![0.0; shape.0 * shape.1];
        for &x in xs {
            assert_eq!(self.shapes[x.0], shape);
            for (o, v) in out.iter_mut().zip(&self.values[x.0]) {
                *o += v;
            }
        }
        self.push(out, shape, Op::AddList { xs: xs.to_vec() })
    }

    pub fn mean_list(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let shape = self.shapes[xs[0].0];
        let inv = 1.0 / xs.len() as f64;
        let mut out = vec![0.0; shape.0 * shape.1];
        for &x in xs {
            for (o, v) in out.iter_mut().zip(&self.values[x.0]) {
                *o += v * inv;
            }
        }
        self.push(out, shape, Op::MeanList { xs: xs.to_vec() })
    }

    pub fn matvec(&mut self, x: Var, v: Var) -> Var {
        let (n, d) = self.shapes[x.0];
        assert_eq!(self.values[v.0].len(), d);
        let out = (0..n)
            .map(|i| dot(&self.values[x.0][i * d..(i + 1) * d], &self.values[v.0]))
            .collect();
        self.push(out, (n, 1), Op::MatVec { x, v })
    }

    pub fn stack_cols(&mut self, xs: &[Var]) -> Var {
        let n = self.shapes[xs[0].0].0;
        let r = xs.len();
        let mut out = vec![0.0; n * r];
        for (j, &x) in xs.iter().enumerate() {
            assert_eq!(self.shapes[x.0], (n, 1));
            for i in 0..n {
                out[i * r + j] = self.values[x.0][i];
            }
        }
        self.push(out, (n, r), Op::StackCols { xs: xs.to_vec() })
    }

    pub fn masked_softmax_rows(&mut self, x: Var, mask: Rc<Vec<bool>>) -> Var {
        let (n, r) = self.shapes[x.0];
        assert_eq!(mask.len(), n * r);
        let mut out = vec![0.0; n * r];
        for i in 0..n {
            let row = &self.values[x.0][i * r..(i + 1) * r];
            let m = &mask[i * r..(i + 1) * r];
            let mut max = f64::NEG_INFINITY;
            for j in 0..r {
                if m[j] && row[j] > max {
                    max = row[j];
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut denom = 0.0;
            for j in 0..r {
                if m[j] {
                    let e = (row[j] - max).exp();
                    out[i * r + j] = e;
                    denom += e;
                }
            }
            for j in 0..r {
                out[i * r + j] /= denom;
            }
        }
        self.push(out, (n, r), Op::MaskedSoftmaxRows { x })
    }

    pub fn sparse_mm(&mut self, mat: Rc<SparseMat>, x: Var) -> Var {
        let (n, d) = self.shapes[x.0];
        assert_eq!(mat.rows.len(), n);
        let mut out = vec![0.0; n * d];
        for (i, row) in mat.rows.iter().enumerate() {
            for &(j, c) in row {
                let src = &self.values[x.0][j as usize * d..(j as usize + 1) * d];
                for k in 0..d {
                    out[i * d + k] += c * src[k];
                }
            }
        }
        self.push(out, (n, d), Op::SparseMM { x, mat })
    }

    pub fn row_scale(&mut self, x: Var, scale: Rc<Vec<f64>>) -> Var {
        let (n, d) = self.shapes[x.0];
        assert_eq!(scale.len(), n);
        let mut out = self.values[x.0].clone();
        for i in 0..n {
            for k in 0..d {
                out[i * d + k] *= scale[i];
            }
        }
        self.push(out, (n, d), Op::RowScale { x, scale })
    }

    pub fn attn_scores(&mut self, m: Var, a: Var, edges: Rc<Vec<(u32, u32)>>) -> Var {
        let (_, d) = self.shapes[m.0];
        assert_eq!(self.values[a.0].len(), 2 * d);
        let av = &self.values[a.0];
        let mv = &self.values[m.0];
        let out = edges
            .iter()
            .map(|&(s, t)| {
                dot(&av[..d], &mv[s as usize * d..(s as usize + 1) * d])
                    + dot(&av[d..], &mv[t as usize * d..(t as usize + 1) * d])
            })
            .collect();
        let e = edges.len();
        self.push(out, (e, 1), Op::AttnScores { m, a, edges })
    }

    pub fn segment_softmax(&mut self, x: Var, starts: Rc<Vec<usize>>) -> Var {
        let e = self.values[x.0].len();
        assert_eq!(*starts.last().unwrap(), e);
        let mut out = vec![0.0; e];
        for w in starts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if lo == hi {
                continue;
            }
            let seg = &self.values[x.0][lo..hi];
            let max = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (i, &s) in seg.iter().enumerate() {
                let v = (s - max).exp();
                out[lo + i] = v;
                denom += v;
            }
            for o in &mut out[lo..hi] {
                *o /= denom;
            }
        }
        self.push(out, (e, 1), Op::SegmentSoftmax { x, starts })
    }

    pub fn edge_weighted_sum(
        &mut self,
        alpha: Var,
        m: Var,
        edges: Rc<Vec<(u32, u32)>>,
        n_rows: usize,
    ) -> Var {
        let (_, d) = self.shapes[m.0];
        assert_eq!(self.values[alpha.0].len(), edges.len());
        let mut out = vec![0.0; n_rows * d];
        for (i, &(s, t)) in edges.iter().enumerate() {
            let a = self.values[alpha.0][i];
            let src = &self.values[m.0][t as usize * d..(t as usize + 1) * d];
            let dst = s as usize * d;
            for k in 0..d {
                out[dst + k] += a * src[k];
            }
        }
        self.push(out, (n_rows, d), Op::EdgeWeightedSum { alpha, m, edges })
    }

    pub fn convex_combine(&mut self, w: Var, xs: &[Var]) -> Var {
        let (n, r) = self.shapes[w.0];
        assert_eq!(r, xs.len());
        let d = self.shapes[xs[0].0].1;
        let mut out = vec![0.0; n * d];
        for (j, &x) in xs.iter().enumerate() {
            assert_eq!(self.shapes[x.0], (n, d));
            for i in 0..n {
                let c = self.values[w.0][i * r + j];
                if c == 0.0 {
                    continue;
                }
                for k in 0..d {
                    out[i * d + k] += c * self.values[x.0][i * d + k];
                }
            }
        }
        self.push(out, (n, d), Op::ConvexCombine { w, xs: xs.to_vec() })
    }

    /// Stable logsumexp-based contrastive sum; see `NceTerms`.
    pub fn nce(
        &mut self,
        anchors: Var,
        pos_keys: Var,
        den_keys: Var,
        terms: Rc<NceTerms>,
        label: &'static str,
    ) -> Var {
        let d = self.shapes[anchors.0].1;
        let tau = terms.tau;
        let mut total = 0.0;
        // Terms sharing an (anchor, candidate-list) pair form contiguous runs;
        // compute the logsumexp denominator once per run.
        let list = &terms.terms;
        let mut i = 0;
        while i < list.len() {
            let (a, _, c) = list[i];
            let mut j = i + 1;
            while j < list.len() && list[j].0 == a && list[j].2 == c {
                j += 1;
            }
            let anchor = &self.values[anchors.0][a as usize * d..(a as usize + 1) * d];
            let cands = &terms.cand_lists[c as usize];
            let scores: Vec<f64> = cands
                .iter()
                .map(|&k| dot(anchor, &self.values[den_keys.0][k as usize * d..(k as usize + 1) * d]) / tau)
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            total += (j - i) as f64 * lse;
            for &(_, p, _) in &list[i..j] {
                let pos = &self.values[pos_keys.0][p as usize * d..(p as usize + 1) * d];
                total -= dot(anchor, pos) / tau;
            }
            i = j;
        }
        self.push(vec![total], (1, 1), Op::Nce { anchors, pos_keys, den_keys, terms, label })
    }

    pub fn bce_link(
        &mut self,
        x: Var,
        pos: Rc<Vec<(u32, u32)>>,
        neg: Rc<Vec<(u32, u32)>>,
        flip_neg: bool,
    ) -> Var {
        let d = self.shapes[x.0].1;
        let row = |i: u32| &self.values[x.0][i as usize * d..(i as usize + 1) * d];
        let mut total = 0.0;
        for &(a, i) in pos.iter() {
            total += softplus(-dot(row(a), row(i)));
        }
        let sign = if flip_neg { -1.0 } else { 1.0 };
        for &(a, j) in neg.iter() {
            total += softplus(-sign * dot(row(a), row(j)));
        }
        self.push(vec![total], (1, 1), Op::BceLink { x, pos, neg, flip_neg })
    }

    pub fn weighted_sum(&mut self, xs: &[Var], weights: &[f64]) -> Var {
        assert_eq!(xs.len(), weights.len());
        let total = xs.iter().zip(weights).map(|(&x, &w)| w * self.values[x.0][0]).sum();
        self.push(vec![total], (1, 1), Op::WeightedSum { xs: xs.to_vec(), weights: weights.to_vec() })
    }

    pub fn slice_cols(&mut self, x: Var, from: usize, width: usize) -> Var {
        let (n, d) = self.shapes[x.0];
        assert!(from + width <= d);
        let mut out = vec![0.0; n * width];
        for i in 0..n {
            out[i * width..(i + 1) * width]
                .copy_from_slice(&self.values[x.0][i * d + from..i * d + from + width]);
        }
        self.push(out, (n, width), Op::SliceCols { x, from, width })
    }

    /// Reverse sweep from `out` (a scalar). Returns one gradient buffer per
    /// tape node; `None` where no gradient flowed.
    pub fn backward(&mut self, out: Var) -> Vec<Option<Vec<f64>>> {
        let n = self.values.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[out.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads
    }

    fn accumulate(grads: &mut Vec<Option<Vec<f64>>>, var: Var, len: usize) -> &mut Vec<f64> {
        if grads[var.0].is_none() {
            grads[var.0] = Some(vec![0.0; len]);
        }
        grads[var.0].as_mut().unwrap()
    }

    fn backward_op(&mut self, idx: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        // Split borrows: values/shapes are read-only here.
        match &self.ops[idx] {
            Op::Leaf => {}
            Op::MatMulT { x, w } => {
                let (x, w) = (*x, *w);
                let (n, k) = self.shapes[x.0];
                let (m, _) = self.shapes[w.0];
                {
                    let ws = &self.values[w.0];
                    let gx = Self::accumulate(grads, x, n * k);
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for l in 0..k {
                                gx[i * k + l] += gij * ws[j * k + l];
                            }
                        }
                    }
                }
                {
                    let xs = &self.values[x.0];
                    let gw = Self::accumulate(grads, w, m * k);
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for l in 0..k {
                                gw[j * k + l] += gij * xs[i * k + l];
                            }
                        }
                    }
                }
            }
            Op::AddRowBroadcast { x, b } => {
                let (x, b) = (*x, *b);
                let (n, d) = self.shapes[x.0];
                {
                    let gx = Self::accumulate(grads, x, n * d);
                    for (gi, gv) in gx.iter_mut().zip(g) {
                        *gi += gv;
                    }
                }
                let gb = Self::accumulate(grads, b, d);
                for i in 0..n {
                    for j in 0..d {
                        gb[j] += g[i * d + j];
                    }
                }
            }
            Op::Unary { x, kind } => {
                let (x, kind) = (*x, *kind);
                let xs = self.values[x.0].clone();
                let ys = &self.values[idx];
                let gx = Self::accumulate(grads, x, xs.len());
                for i in 0..xs.len() {
                    gx[i] += g[i] * unary_grad(kind, xs[i], ys[i]);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                for v in [a, b] {
                    let gv = Self::accumulate(grads, v, g.len());
                    for (gi, gg) in gv.iter_mut().zip(g) {
                        *gi += gg;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let av = self.values[a.0].clone();
                let bv = self.values[b.0].clone();
                {
                    let ga = Self::accumulate(grads, a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                let gb = Self::accumulate(grads, b, g.len());
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let gx = Self::accumulate(grads, x, g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * c;
                }
            }
            Op::AddList { xs } => {
                for &x in &xs.clone() {
                    let gx = Self::accumulate(grads, x, g.len());
                    for (gi, gg) in gx.iter_mut().zip(g) {
                        *gi += gg;
                    }
                }
            }
            Op::MeanList { xs } => {
                let xs = xs.clone();
                let inv = 1.0 / xs.len() as f64;
                for &x in &xs {
                    let gx = Self::accumulate(grads, x, g.len());
                    for (gi, gg) in gx.iter_mut().zip(g) {
                        *gi += gg * inv;
                    }
                }
            }
            Op::MatVec { x, v } => {
                let (x, v) = (*x, *v);
                let (n, d) = self.shapes[x.0];
                let vv = self.values[v.0].clone();
                let xv = self.values[x.0].clone();
                {
                    let gx = Self::accumulate(grads, x, n * d);
                    for i in 0..n {
                        for k in 0..d {
                            gx[i * d + k] += g[i] * vv[k];
                        }
                    }
                }
                let gv = Self::accumulate(grads, v, d);
                for i in 0..n {
                    for k in 0..d {
                        gv[k] += g[i] * xv[i * d + k];
                    }
                }
            }
            Op::StackCols { xs } => {
                let xs = xs.clone();
                let r = xs.len();
                let n = self.shapes[xs[0].0].0;
                for (j, &x) in xs.iter().enumerate() {
                    let gx = Self::accumulate(grads, x, n);
                    for i in 0..n {
                        gx[i] += g[i * r + j];
                    }
                }
            }
            Op::MaskedSoftmaxRows { x } => {
                let x = *x;
                let (n, r) = self.shapes[idx];
                let y = self.values[idx].clone();
                let gx = Self::accumulate(grads, x, n * r);
                for i in 0..n {
                    let yi = &y[i * r..(i + 1) * r];
                    let gi = &g[i * r..(i + 1) * r];
                    let s: f64 = yi.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for j in 0..r {
                        gx[i * r + j] += yi[j] * (gi[j] - s);
                    }
                }
            }
            Op::SparseMM { x, mat } => {
                let x = *x;
                let mat = mat.clone();
                let (n, d) = self.shapes[x.0];
                let gx = Self::accumulate(grads, x, n * d);
                for (i, row) in mat.rows.iter().enumerate() {
                    for &(j, c) in row {
                        for k in 0..d {
                            gx[j as usize * d + k] += c * g[i * d + k];
                        }
                    }
                }
            }
            Op::RowScale { x, scale } => {
                let x = *x;
                let scale = scale.clone();
                let (n, d) = self.shapes[x.0];
                let gx = Self::accumulate(grads, x, n * d);
                for i in 0..n {
                    for k in 0..d {
                        gx[i * d + k] += g[i * d + k] * scale[i];
                    }
                }
            }
            Op::AttnScores { m, a, edges } => {
                let (m, a) = (*m, *a);
                let edges = edges.clone();
                let (_, d) = self.shapes[m.0];
                let av = self.values[a.0].clone();
                let mv = self.values[m.0].clone();
                {
                    let gm = Self::accumulate(grads, m, mv.len());
                    for (i, &(s, t)) in edges.iter().enumerate() {
                        let gi = g[i];
                        for k in 0..d {
                            gm[s as usize * d + k] += gi * av[k];
                            gm[t as usize * d + k] += gi * av[d + k];
                        }
                    }
                }
                let ga = Self::accumulate(grads, a, 2 * d);
                for (i, &(s, t)) in edges.iter().enumerate() {
                    let gi = g[i];
                    for k in 0..d {
                        ga[k] += gi * mv[s as usize * d + k];
                        ga[d + k] += gi * mv[t as usize * d + k];
                    }
                }
            }
            Op::SegmentSoftmax { x, starts } => {
                let x = *x;
                let starts = starts.clone();
                let y = self.values[idx].clone();
                let gx = Self::accumulate(grads, x, y.len());
                for w in starts.windows(2) {
                    let (lo, hi) = (w[0], w[1]);
                    let s: f64 = (lo..hi).map(|i| y[i] * g[i]).sum();
                    for i in lo..hi {
                        gx[i] += y[i] * (g[i] - s);
                    }
                }
            }
            Op::EdgeWeightedSum { alpha, m, edges } => {
                let (alpha, m) = (*alpha, *m);
                let edges = edges.clone();
                let (_, d) = self.shapes[m.0];
                let av = self.values[alpha.0].clone();
                let mv = self.values[m.0].clone();
                {
                    let ga = Self::accumulate(grads, alpha, av.len());
                    for (i, &(s, t)) in edges.iter().enumerate() {
                        ga[i] += dot(
                            &g[s as usize * d..(s as usize + 1) * d],
                            &mv[t as usize * d..(t as usize + 1) * d],
                        );
                    }
                }
                let gm = Self::accumulate(grads, m, mv.len());
                for (i, &(s, t)) in edges.iter().enumerate() {
                    for k in 0..d {
                        gm[t as usize * d + k] += av[i] * g[s as usize * d + k];
                    }
                }
            }
            Op::ConvexCombine { w, xs } => {
                let w = *w;
                let xs = xs.clone();
                let (n, r) = self.shapes[w.0];
                let d = self.shapes[xs[0].0].1;
                let wv = self.values[w.0].clone();
                {
                    let gw = Self::accumulate(grads, w, n * r);
                    for (j, &x) in xs.iter().enumerate() {
                        let xv = &self.values[x.0];
                        for i in 0..n {
                            gw[i * r + j] +=
                                dot(&g[i * d..(i + 1) * d], &xv[i * d..(i + 1) * d]);
                        }
                    }
                }
                for (j, &x) in xs.iter().enumerate() {
                    let gx = Self::accumulate(grads, x, n * d);
                    for i in 0..n {
                        let c = wv[i * r + j];
                        if c == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            gx[i * d + k] += c * g[i * d + k];
                        }
                    }
                }
            }
            Op::Nce { anchors, pos_keys, den_keys, terms, label } => {
                let (anchors, pos_keys, den_keys) = (*anchors, *pos_keys, *den_keys);
                let terms = terms.clone();
                let label = *label;
                *self.nce_backward_counts.entry(label).or_insert(0) += 1;
                let d = self.shapes[anchors.0].1;
                let tau = terms.tau;
                let gout = g[0];
                let anchor_vals = self.values[anchors.0].clone();
                let pos_vals = self.values[pos_keys.0].clone();
                let den_vals = self.values[den_keys.0].clone();
                let n_anchor = anchor_vals.len();
                let mut ga = vec![0.0; n_anchor];
                let mut gp = vec![0.0; pos_vals.len()];
                let mut gd = vec![0.0; den_vals.len()];
                // Mirror the forward grouping: the softmax over a candidate
                // list is shared by every term in a contiguous (anchor, list)
                // run, so its gradient is applied once with multiplicity.
                let list = &terms.terms;
                let mut i = 0;
                while i < list.len() {
                    let (a, _, c) = list[i];
                    let mut j = i + 1;
                    while j < list.len() && list[j].0 == a && list[j].2 == c {
                        j += 1;
                    }
                    let ai = a as usize * d;
                    let anchor = &anchor_vals[ai..ai + d];
                    let cands = &terms.cand_lists[c as usize];
                    let scores: Vec<f64> = cands
                        .iter()
                        .map(|&m| dot(anchor, &den_vals[m as usize * d..(m as usize + 1) * d]) / tau)
                        .collect();
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                    let mult = (j - i) as f64;
                    for (ci, &m) in cands.iter().enumerate() {
                        let coeff = mult * gout * (scores[ci] - max).exp() / denom / tau;
                        let mi = m as usize * d;
                        for k in 0..d {
                            ga[ai + k] += coeff * den_vals[mi + k];
                            gd[mi + k] += coeff * anchor[k];
                        }
                    }
                    for &(_, p, _) in &list[i..j] {
                        let pi = p as usize * d;
                        for k in 0..d {
                            ga[ai + k] -= gout * pos_vals[pi + k] / tau;
                            gp[pi + k] -= gout * anchor[k] / tau;
                        }
                    }
                    i = j;
                }
                for (var, buf) in [(anchors, ga), (pos_keys, gp), (den_keys, gd)] {
                    let gv = Self::accumulate(grads, var, buf.len());
                    for (a, b) in gv.iter_mut().zip(&buf) {
                        *a += b;
                    }
                }
            }
            Op::BceLink { x, pos, neg, flip_neg } => {
                let x = *x;
                let (pos, neg, flip_neg) = (pos.clone(), neg.clone(), *flip_neg);
                let (n, d) = self.shapes[x.0];
                let xv = self.values[x.0].clone();
                let gout = g[0];
                let gx = Self::accumulate(grads, x, n * d);
                let mut apply = |a: u32, b: u32, sign: f64| {
                    let (ai, bi) = (a as usize * d, b as usize * d);
                    let s = dot(&xv[ai..ai + d], &xv[bi..bi + d]);
                    // d/ds softplus(-sign*s) = -sign * sigmoid(-sign*s)
                    let ds = gout * (-sign) * sigmoid(-sign * s);
                    for k in 0..d {
                        gx[ai + k] += ds * xv[bi + k];
                        gx[bi + k] += ds * xv[ai + k];
                    }
                };
                for &(a, i) in pos.iter() {
                    apply(a, i, 1.0);
                }
                let sign = if flip_neg { -1.0 } else { 1.0 };
                for &(a, j) in neg.iter() {
                    apply(a, j, sign);
                }
            }
            Op::WeightedSum { xs, weights } => {
                let (xs, weights) = (xs.clone(), weights.clone());
                let gout = g[0];
                for (&x, &w) in xs.iter().zip(&weights) {
                    let gx = Self::accumulate(grads, x, 1);
                    gx[0] += gout * w;
                }
            }
            Op::SliceCols { x, from, width } => {
                let (x, from, width) = (*x, *from, *width);
                let (n, d) = self.shapes[x.0];
                let gx = Self::accumulate(grads, x, n * d);
                for i in 0..n {
                    for k in 0..width {
                        gx[i * d + from + k] += g[i * width + k];
                    }
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Finite-difference check for an arbitrary tape program. `build` maps
    /// leaf values to (tape, output); the analytic gradient of every leaf is
    /// compared against central differences.
    fn check_grads(inputs: &[Vec<f64>], build: &dyn Fn(&mut Tape, &[Vec<f64>]) -> Var) {
        let mut tape = Tape::new();
        let out = build(&mut tape, inputs);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (li, input) in inputs.iter().enumerate() {
            let analytic = grads[li].clone().unwrap_or_else(|| vec![0.0; input.len()]);
            for k in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[li][k] += h;
                let mut minus = inputs.to_vec();
                minus[li][k] -= h;
                let mut tp = Tape::new();
                let vp = build(&mut tp, &plus);
                let mut tm = Tape::new();
                let vm = build(&mut tm, &minus);
                let numeric = (tp.scalar(vp) - tm.scalar(vm)) / (2.0 * h);
                let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic[k] - numeric).abs() / denom;
                assert!(
                    rel < 1e-5,
                    "leaf {li} index {k}: analytic {} vs numeric {numeric}",
                    analytic[k]
                );
            }
        }
    }

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn grad_matmul_unary_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![rand_vec(6, &mut rng), rand_vec(6, &mut rng)];
        check_grads(&inputs, &|t, vals| {
            let x = t.leaf(vals[0].clone(), 3, 2);
            let w = t.leaf(vals[1].clone(), 3, 2);
            let m = t.matmul_t(x, w);
            let e = t.unary(m, Unary::Elu);
            let s = t.unary(e, Unary::Tanh);
            // reduce to scalar through a weighted sum of bce with itself
            let ones = Rc::new(vec![(0u32, 1u32), (1, 2)]);
            t.bce_link(s, ones, Rc::new(vec![(0, 2)]), true)
        });
    }

    #[test]
    fn grad_attention_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // 3-node path 0-1-2 with self loops
        let edges = Rc::new(vec![
            (0u32, 0u32),
            (0, 1),
            (1, 0),
            (1, 1),
            (1, 2),
            (2, 1),
            (2, 2),
        ]);
        let starts = Rc::new(vec![0usize, 2, 5, 7]);
        let inputs = vec![rand_vec(6, &mut rng), rand_vec(4, &mut rng)];
        let e2 = edges.clone();
        let s2 = starts.clone();
        check_grads(&inputs, &move |t, vals| {
            let m = t.leaf(vals[0].clone(), 3, 2);
            let a = t.leaf(vals[1].clone(), 1, 4);
            let beta = t.attn_scores(m, a, e2.clone());
            let act = t.unary(beta, Unary::LeakyRelu);
            let alpha = t.segment_softmax(act, s2.clone());
            let u = t.edge_weighted_sum(alpha, m, e2.clone(), 3);
            let u = t.unary(u, Unary::Elu);
            t.bce_link(u, Rc::new(vec![(0, 2)]), Rc::new(vec![(1, 2)]), true)
        });
    }

    #[test]
    fn grad_nce_with_aliased_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![rand_vec(8, &mut rng)];
        let terms = Rc::new(NceTerms {
            terms: vec![(0, 0, 0), (1, 2, 1), (2, 3, 0)],
            cand_lists: vec![vec![0, 1, 2, 3], vec![1, 3]],
            tau: 0.5,
        });
        let t2 = terms.clone();
        check_grads(&inputs, &move |t, vals| {
            let u = t.leaf(vals[0].clone(), 4, 2);
            t.nce(u, u, u, t2.clone(), "test")
        });
    }

    #[test]
    fn grad_semantic_attention_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask = Rc::new(vec![true, true, true, false, false, true]);
        let inputs = vec![
            rand_vec(6, &mut rng), // u type 0: 3x2
            rand_vec(6, &mut rng), // u type 1
            rand_vec(4, &mut rng), // Wsem 2x2
            rand_vec(2, &mut rng), // bias
            rand_vec(2, &mut rng), // z
        ];
        let m2 = mask.clone();
        check_grads(&inputs, &move |t, vals| {
            let u0 = t.leaf(vals[0].clone(), 3, 2);
            let u1 = t.leaf(vals[1].clone(), 3, 2);
            let w = t.leaf(vals[2].clone(), 2, 2);
            let b = t.leaf(vals[3].clone(), 1, 2);
            let z = t.leaf(vals[4].clone(), 1, 2);
            let gammas: Vec<Var> = [u0, u1]
                .iter()
                .map(|&u| {
                    let m = t.matmul_t(u, w);
                    let m = t.add_row_broadcast(m, b);
                    let m = t.unary(m, Unary::Tanh);
                    t.matvec(m, z)
                })
                .collect();
            let stacked = t.stack_cols(&gammas);
            let delta = t.masked_softmax_rows(stacked, m2.clone());
            let fused = t.convex_combine(delta, &[u0, u1]);
            t.bce_link(fused, Rc::new(vec![(0, 1)]), Rc::new(vec![(0, 2)]), true)
        });
    }

    #[test]
    fn grad_recurrence_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = vec![
            rand_vec(4, &mut rng),  // x: 2 nodes x 2
            rand_vec(16, &mut rng), // Wx: 8x2 (4 gates)
            rand_vec(16, &mut rng), // Wh
            rand_vec(8, &mut rng),  // bias
        ];
        check_grads(&inputs, &|t, vals| {
            let x = t.leaf(vals[0].clone(), 2, 2);
            let wx = t.leaf(vals[1].clone(), 8, 2);
            let wh = t.leaf(vals[2].clone(), 8, 2);
            let b = t.leaf(vals[3].clone(), 1, 8);
            let h0 = t.zeros(2, 2);
            let c0 = t.zeros(2, 2);
            let mut h = h0;
            let mut c = c0;
            for _ in 0..2 {
                let gx = t.matmul_t(x, wx);
                let gh = t.matmul_t(h, wh);
                let gates = t.add(gx, gh);
                let gates = t.add_row_broadcast(gates, b);
                let i = t.slice_cols(gates, 0, 2);
                let f = t.slice_cols(gates, 2, 2);
                let o = t.slice_cols(gates, 4, 2);
                let cand = t.slice_cols(gates, 6, 2);
                let i = t.unary(i, Unary::Sigmoid);
                let f = t.unary(f, Unary::Sigmoid);
                let o = t.unary(o, Unary::Sigmoid);
                let cand = t.unary(cand, Unary::Tanh);
                let fc = t.mul(f, c);
                let ic = t.mul(i, cand);
                c = t.add(fc, ic);
                let tc = t.unary(c, Unary::Tanh);
                h = t.mul(o, tc);
            }
            t.bce_link(h, Rc::new(vec![(0, 1)]), Rc::new(vec![]), true)
        });
    }

    #[test]
    fn grad_sparse_and_rowscale() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mat = Rc::new(SparseMat {
            rows: vec![vec![(0, 1.0), (1, 0.5)], vec![(1, 1.0)], vec![(0, 0.3), (2, 1.0)]],
        });
        let scale = Rc::new(vec![1.0, 0.5, 2.0]);
        let inputs = vec![rand_vec(6, &mut rng)];
        let (m2, s2) = (mat.clone(), scale.clone());
        check_grads(&inputs, &move |t, vals| {
            let x = t.leaf(vals[0].clone(), 3, 2);
            let y = t.sparse_mm(m2.clone(), x);
            let y = t.row_scale(y, s2.clone());
            t.bce_link(y, Rc::new(vec![(0, 1)]), Rc::new(vec![(1, 2)]), false)
        });
    }

    #[test]
    fn masked_softmax_rows_normalize() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0, -5.0, 0.0], 2, 2);
        let y = t.masked_softmax_rows(x, Rc::new(vec![true, true, true, false]));
        let v = t.value(y);
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
        assert!((v[2] - 1.0).abs() < 1e-12);
        assert_eq!(v[3], 0.0);
    }

    #[test]
    fn backward_skips_unreached_ops() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0, 0.5], 1, 2);
        let b = t.leaf(vec![2.0, 0.1, 0.3, 1.0], 2, 2);
        let terms = Rc::new(NceTerms { terms: vec![(0, 0, 0)], cand_lists: vec![vec![0, 1]], tau: 1.0 });
        let _unused = t.nce(b, b, b, terms, "unused");
        let loss = t.bce_link(a, Rc::new(vec![(0, 0)]), Rc::new(vec![]), true);
        let grads = t.backward(loss);
        assert!(grads[b.0].is_none());
        assert_eq!(t.nce_backward_counts.get("unused"), None);
    }
}
