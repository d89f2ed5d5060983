//! Temporal information modeling: long-term (LSTM) and short-term (GRU)
//! channels over the per-snapshot embedding sequence, the time-level
//! contrastive terms, and the mean-pooled final embedding.

use std::rc::Rc;

use crate::error::{ClpError, Result};
use crate::tape::{NceTerms, Tape, Unary, Var};

/// Gate parameter block for one recurrent channel; gates are stacked
/// row-wise (LSTM: input, forget, output, candidate; GRU: update, reset,
/// candidate).
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub dim: usize,
    pub gates: usize,
    /// (gates*d) x d
    pub wx: Vec<f64>,
    /// (gates*d) x d
    pub wh: Vec<f64>,
    /// gates*d
    pub bias: Vec<f64>,
}

impl GateParams {
    pub fn zeros(dim: usize, gates: usize) -> Self {
        GateParams {
            dim,
            gates,
            wx: vec![0.0; gates * dim * dim],
            wh: vec![0.0; gates * dim * dim],
            bias: vec![0.0; gates * dim],
        }
    }
}

/// Both channels' parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentParams {
    pub lstm: GateParams,
    pub gru: GateParams,
}

pub struct RecurrentVars {
    pub wx: Var,
    pub wh: Var,
    pub bias: Var,
}

/// One LSTM step over an N x d input matrix; returns (cell, hidden).
pub fn lstm_step(tape: &mut Tape, x: Var, h: Var, c: Var, p: &RecurrentVars, d: usize) -> (Var, Var) {
    let gx = tape.matmul_t(x, p.wx);
    let gh = tape.matmul_t(h, p.wh);
    let pre = tape.add(gx, gh);
    let pre = tape.add_row_broadcast(pre, p.bias);
    let i = tape.slice_cols(pre, 0, d);
    let f = tape.slice_cols(pre, d, d);
    let o = tape.slice_cols(pre, 2 * d, d);
    let cand = tape.slice_cols(pre, 3 * d, d);
    let i = tape.unary(i, Unary::Sigmoid);
    let f = tape.unary(f, Unary::Sigmoid);
    let o = tape.unary(o, Unary::Sigmoid);
    let cand = tape.unary(cand, Unary::Tanh);
    let fc = tape.mul(f, c);
    let ic = tape.mul(i, cand);
    let c_next = tape.add(fc, ic);
    let ct = tape.unary(c_next, Unary::Tanh);
    let h_next = tape.mul(o, ct);
    (c_next, h_next)
}

/// One GRU step; the reset gate modulates the hidden contribution of the
/// candidate only.
pub fn gru_step(tape: &mut Tape, x: Var, h: Var, p: &RecurrentVars, d: usize) -> Var {
    let gx = tape.matmul_t(x, p.wx); // N x 3d
    let gh = tape.matmul_t(h, p.wh);
    let zx = tape.slice_cols(gx, 0, d);
    let zh = tape.slice_cols(gh, 0, d);
    let rx = tape.slice_cols(gx, d, d);
    let rh = tape.slice_cols(gh, d, d);
    let nx = tape.slice_cols(gx, 2 * d, d);
    let nh = tape.slice_cols(gh, 2 * d, d);
    let bz = tape.slice_cols(p.bias, 0, d);
    let br = tape.slice_cols(p.bias, d, d);
    let bn = tape.slice_cols(p.bias, 2 * d, d);

    let z_pre = tape.add(zx, zh);
    let z_pre = tape.add_row_broadcast(z_pre, bz);
    let z = tape.unary(z_pre, Unary::Sigmoid);
    let r_pre = tape.add(rx, rh);
    let r_pre = tape.add_row_broadcast(r_pre, br);
    let r = tape.unary(r_pre, Unary::Sigmoid);
    let rn = tape.mul(r, nh);
    let n_pre = tape.add(nx, rn);
    let n_pre = tape.add_row_broadcast(n_pre, bn);
    let n = tape.unary(n_pre, Unary::Tanh);

    let zm = tape.unary(z, Unary::OneMinus);
    let a = tape.mul(zm, n);
    let b = tape.mul(z, h);
    tape.add(a, b)
}

pub fn gate_params_on_tape(tape: &mut Tape, p: &GateParams) -> RecurrentVars {
    RecurrentVars {
        wx: tape.leaf(p.wx.clone(), p.gates * p.dim, p.dim),
        wh: tape.leaf(p.wh.clone(), p.gates * p.dim, p.dim),
        bias: tape.leaf(p.bias.clone(), 1, p.gates * p.dim),
    }
}

/// Unroll the LSTM channel over the sequence of N x d inputs; returns the
/// final hidden state.
pub fn build_lstm(tape: &mut Tape, inputs: &[Var], p: &RecurrentVars, n: usize, d: usize) -> Var {
    let mut h = tape.zeros(n, d);
    let mut c = tape.zeros(n, d);
    for &x in inputs {
        let (cn, hn) = lstm_step(tape, x, h, c, p, d);
        c = cn;
        h = hn;
    }
    h
}

/// Unroll the GRU channel; returns the final hidden state.
pub fn build_gru(tape: &mut Tape, inputs: &[Var], p: &RecurrentVars, n: usize, d: usize) -> Var {
    let mut h = tape.zeros(n, d);
    for &x in inputs {
        h = gru_step(tape, x, h, p, d);
    }
    h
}

/// Contrastive terms for the time level: the positive key is the node's
/// other-channel representation, the denominator runs over same-channel
/// representations of all other anchor nodes (the anchor itself excluded).
pub fn time_nce_terms(anchor_nodes: &[u32], tau: f64) -> Result<Rc<NceTerms>> {
    if tau <= 0.0 {
        return Err(ClpError::InvalidParameter("temperature must be positive".into()));
    }
    if anchor_nodes.len() < 2 {
        return Err(ClpError::InsufficientPopulation);
    }
    let mut terms = Vec::with_capacity(anchor_nodes.len());
    let mut cand_lists = Vec::with_capacity(anchor_nodes.len());
    for (i, &a) in anchor_nodes.iter().enumerate() {
        let cands: Vec<u32> = anchor_nodes.iter().copied().filter(|&b| b != a).collect();
        cand_lists.push(cands);
        terms.push((a, a, i as u32));
    }
    Ok(Rc::new(NceTerms { terms, cand_lists, tau }))
}

/// Sequence encoding through the LSTM channel (plain f64 entry point;
/// sequences indexed by node, all of length T, zero vectors for missing
/// snapshots).
pub fn lstm_encode(sequences: &[Vec<Vec<f64>>], params: &GateParams) -> Result<Vec<Vec<f64>>> {
    encode(sequences, params, true)
}

/// Sequence encoding through the GRU channel.
pub fn gru_encode(sequences: &[Vec<Vec<f64>>], params: &GateParams) -> Result<Vec<Vec<f64>>> {
    encode(sequences, params, false)
}

fn encode(sequences: &[Vec<Vec<f64>>], params: &GateParams, lstm: bool) -> Result<Vec<Vec<f64>>> {
    let n = sequences.len();
    let t_len = sequences.first().map(|s| s.len()).unwrap_or(0);
    if t_len == 0 {
        return Err(ClpError::InvalidParameter("sequence length must be at least 1".into()));
    }
    let d = params.dim;
    let mut tape = Tape::new();
    let p = gate_params_on_tape(&mut tape, params);
    let inputs: Vec<Var> = (0..t_len)
        .map(|t| {
            let mut data = Vec::with_capacity(n * d);
            for seq in sequences {
                assert_eq!(seq.len(), t_len, "ragged sequence");
                data.extend_from_slice(&seq[t]);
            }
            tape.leaf(data, n, d)
        })
        .collect();
    let out = if lstm {
        build_lstm(&mut tape, &inputs, &p, n, d)
    } else {
        build_gru(&mut tape, &inputs, &p, n, d)
    };
    let v = tape.value(out);
    Ok((0..n).map(|i| v[i * d..(i + 1) * d].to_vec()).collect())
}

/// Mean pooling of the two channel outputs.
pub fn fuse_final(u_long: &[Vec<f64>], u_short: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if u_long.len() != u_short.len() {
        return Err(ClpError::InvalidParameter("channel outputs have different node domains".into()));
    }
    Ok(u_long
        .iter()
        .zip(u_short)
        .map(|(l, s)| l.iter().zip(s).map(|(a, b)| (a + b) / 2.0).collect())
        .collect())
}

/// Time-level contrastive pair (long-anchored, short-anchored) with the
/// restored leading minus, evaluated directly.
pub fn time_infonce(
    u_long: &[Vec<f64>],
    u_short: &[Vec<f64>],
    anchor_nodes: &[u32],
    tau: f64,
) -> Result<(f64, f64)> {
    let terms = time_nce_terms(anchor_nodes, tau)?;
    let flat = |rows: &[Vec<f64>]| -> Vec<f64> { rows.iter().flatten().copied().collect() };
    let d = u_long[0].len();
    let mut tape = Tape::new();
    let ul = tape.leaf(flat(u_long), u_long.len(), d);
    let us = tape.leaf(flat(u_short), u_short.len(), d);
    let l = tape.nce(ul, us, ul, terms.clone(), "time_long");
    let s = tape.nce(us, ul, us, terms, "time_short");
    Ok((tape.scalar(l), tape.scalar(s)))
}
