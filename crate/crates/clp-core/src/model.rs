//! Whole-model forward pass: precomputed graph structures plus the tape
//! program that assembles every loss component in one differentiable graph.

use std::rc::Rc;

use crate::config::{TimeLossSign, TrainConfig};
use crate::error::{ClpError, Result};
use crate::graph::{build_typed_subgraphs, TemporalNetwork, TypedSubgraph};
use crate::objective::{composition_weights, LinkTriples, LossComponents};
use crate::params::{ModelDims, ParamStore};
use crate::spatial::{
    edge_nce_terms, linear_aggregation_matrix, node_nce_terms, participation_mask,
    type_count_inverse, union_neighborhoods, AttnStructure,
};
use crate::tape::{NceTerms, SparseMat, Tape, Var};
use crate::temporal::{build_gru, build_lstm, time_nce_terms, RecurrentVars};

/// Everything about one typed subgraph the forward pass needs, precomputed
/// once per dataset.
struct TypeContext {
    edge_type: usize,
    attn: AttnStructure,
    lin: Rc<SparseMat>,
    nce_pos: Rc<NceTerms>,
    nce_neg: Rc<NceTerms>,
    has_neg: bool,
}

/// Per-snapshot structures.
struct SnapshotContext {
    /// Only edge types with at least one participant.
    types: Vec<TypeContext>,
    mask: Rc<Vec<bool>>,
    type_count_inv: Rc<Vec<f64>>,
    edge_pos: Rc<NceTerms>,
    edge_neg: Rc<NceTerms>,
    edge_has_neg: bool,
}

/// Precomputed model inputs for one dataset + config.
pub struct ModelData {
    pub dims: ModelDims,
    snapshots: Vec<SnapshotContext>,
    time_terms: Option<Rc<NceTerms>>,
}

impl ModelData {
    pub fn new(thn: &TemporalNetwork, cfg: &TrainConfig) -> Result<Self> {
        let n_nodes = thn.registry.len();
        let n_types = thn.edge_types.len();
        let mut snapshots = Vec::with_capacity(thn.train_len());
        for snap in thn.train_snapshots() {
            let subs = build_typed_subgraphs(snap, n_types, n_nodes)?;
            let present: Vec<&TypedSubgraph> =
                subs.iter().filter(|s| !s.nodes.is_empty()).collect();
            let mut types = Vec::with_capacity(present.len());
            for sub in &present {
                let (nce_pos, nce_neg) = node_nce_terms(sub, cfg.tau);
                types.push(TypeContext {
                    edge_type: sub.edge_type,
                    attn: AttnStructure::from_subgraph(sub),
                    lin: linear_aggregation_matrix(sub, n_nodes),
                    has_neg: !nce_neg.terms.is_empty(),
                    nce_pos,
                    nce_neg,
                });
            }
            let owned: Vec<TypedSubgraph> = present.iter().map(|s| (*s).clone()).collect();
            let union = union_neighborhoods(&owned, n_nodes);
            let (edge_pos, edge_neg) = edge_nce_terms(&union, cfg.tau);
            snapshots.push(SnapshotContext {
                mask: participation_mask(&owned, n_nodes),
                type_count_inv: type_count_inverse(&owned, n_nodes),
                edge_has_neg: !edge_neg.terms.is_empty(),
                edge_pos,
                edge_neg,
                types,
            });
        }
        // time-level anchors: nodes of the final training snapshot
        let last_nodes: Vec<u32> = thn
            .train_snapshots()
            .last()
            .map(|s| s.nodes.clone())
            .unwrap_or_default();
        let time_terms = if last_nodes.len() >= 2 {
            Some(time_nce_terms(&last_nodes, cfg.tau)?)
        } else {
            None
        };
        let dims = ModelDims {
            n_nodes,
            d: cfg.d,
            heads: cfg.heads,
            edge_types: n_types,
            train_snapshots: thn.train_len(),
            share_across_time: cfg.share_params_across_time,
        };
        Ok(ModelData { dims, snapshots, time_terms })
    }
}

/// One assembled forward pass.
pub struct Forward {
    pub tape: Tape,
    /// Scalar total loss; absent when no supervision triples were given.
    pub loss: Option<Var>,
    pub components: LossComponents,
    /// Final fused embedding matrix, N x d.
    pub u_final: Var,
    /// Per-training-snapshot edge-level embeddings (debug / dump interface).
    pub u_snapshots: Vec<Var>,
    /// Long- and short-term channel outputs.
    pub u_long: Var,
    pub u_short: Var,
    /// Tape vars of the parameter entries, aligned with `ParamStore::entries`.
    pub param_vars: Vec<Var>,
}

fn scalar_or_zero(tape: &mut Tape, xs: &[Var]) -> Var {
    if xs.is_empty() {
        tape.zeros(1, 1)
    } else {
        tape.add_list(xs)
    }
}

/// Build the full loss graph. With `triples = None` only the embeddings are
/// assembled (evaluation mode).
pub fn build_forward(
    store: &ParamStore,
    data: &ModelData,
    cfg: &TrainConfig,
    triples: Option<&LinkTriples>,
) -> Result<Forward> {
    let dims = data.dims;
    let (n, d) = (dims.n_nodes, dims.d);
    let mut tape = Tape::new();
    let param_vars: Vec<Var> = store
        .entries
        .iter()
        .map(|p| tape.leaf(p.data.clone(), p.rows, p.cols))
        .collect();
    let features = param_vars[0];
    let var_of = |name: &str| param_vars[store.index_of(name)];

    let mut node_pos = Vec::new();
    let mut node_neg = Vec::new();
    let mut edge_pos = Vec::new();
    let mut edge_neg = Vec::new();
    let mut u_snapshots = Vec::with_capacity(data.snapshots.len());

    for (t, snap) in data.snapshots.iter().enumerate() {
        let slot = dims.slot(t);
        let mut u_types = Vec::with_capacity(snap.types.len());
        for tc in &snap.types {
            let r = tc.edge_type;
            let w_heads: Vec<Var> =
                (0..dims.heads).map(|k| var_of(&format!("node.w.t{slot}.r{r}.h{k}"))).collect();
            let a_heads: Vec<Var> =
                (0..dims.heads).map(|k| var_of(&format!("node.a.t{slot}.r{r}.h{k}"))).collect();
            let vars = crate::spatial::build_node_level(
                &mut tape, features, &w_heads, &a_heads, &tc.attn, &tc.lin, n,
            );
            node_pos.push(tape.nce(vars.u, vars.h, vars.h, tc.nce_pos.clone(), "node_pos"));
            if tc.has_neg {
                node_neg.push(tape.nce(vars.u, vars.u, vars.u, tc.nce_neg.clone(), "node_neg"));
            }
            u_types.push(vars.u);
        }
        if u_types.is_empty() {
            u_snapshots.push(tape.zeros(n, d));
            continue;
        }
        let lin_mats: Vec<Rc<SparseMat>> = snap.types.iter().map(|tc| tc.lin.clone()).collect();
        let ev = crate::spatial::build_edge_level(
            &mut tape,
            &u_types,
            var_of(&format!("edge.w.t{slot}")),
            var_of(&format!("edge.b.t{slot}")),
            var_of(&format!("edge.z.t{slot}")),
            snap.mask.clone(),
            &lin_mats,
            snap.type_count_inv.clone(),
        );
        edge_pos.push(tape.nce(ev.u, ev.h, ev.h, snap.edge_pos.clone(), "edge_pos"));
        if snap.edge_has_neg {
            edge_neg.push(tape.nce(ev.u, ev.u, ev.u, snap.edge_neg.clone(), "edge_neg"));
        }
        u_snapshots.push(ev.u);
    }

    let lstm = RecurrentVars {
        wx: var_of("lstm.wx"),
        wh: var_of("lstm.wh"),
        bias: var_of("lstm.b"),
    };
    let gru = RecurrentVars {
        wx: var_of("gru.wx"),
        wh: var_of("gru.wh"),
        bias: var_of("gru.b"),
    };
    let u_long = build_lstm(&mut tape, &u_snapshots, &lstm, n, d);
    let u_short = build_gru(&mut tape, &u_snapshots, &gru, n, d);
    let summed = tape.add(u_long, u_short);
    let u_final = tape.scale(summed, 0.5);

    let time_sign = match cfg.time_loss_sign {
        TimeLossSign::Standard => 1.0,
        TimeLossSign::Literal => -1.0,
    };
    let (time_long, time_short) = match &data.time_terms {
        Some(terms) => (
            Some(tape.nce(u_long, u_short, u_long, terms.clone(), "time_long")),
            Some(tape.nce(u_short, u_long, u_short, terms.clone(), "time_short")),
        ),
        None => (None, None),
    };

    let l_node_pos = scalar_or_zero(&mut tape, &node_pos);
    let l_node_neg = scalar_or_zero(&mut tape, &node_neg);
    let l_edge_pos = scalar_or_zero(&mut tape, &edge_pos);
    let l_edge_neg = scalar_or_zero(&mut tape, &edge_neg);
    let l_time_long = scalar_or_zero(&mut tape, &time_long.map(|v| vec![v]).unwrap_or_default());
    let l_time_short = scalar_or_zero(&mut tape, &time_short.map(|v| vec![v]).unwrap_or_default());

    let mut components = LossComponents {
        l_main: 0.0,
        l_node_pos: tape.scalar(l_node_pos),
        l_node_neg: tape.scalar(l_node_neg),
        l_edge_pos: tape.scalar(l_edge_pos),
        l_edge_neg: tape.scalar(l_edge_neg),
        l_time_long: time_sign * tape.scalar(l_time_long),
        l_time_short: time_sign * tape.scalar(l_time_short),
    };

    let loss = match triples {
        None => None,
        Some(triples) => {
            let mut pos = Vec::with_capacity(triples.triples.len());
            let mut neg = Vec::with_capacity(triples.triples.len());
            for &(a, i, j) in &triples.triples {
                for &m in [a, i, j].iter() {
                    if (m as usize) >= n {
                        return Err(ClpError::MissingEmbedding(m.to_string()));
                    }
                }
                pos.push((a, i));
                neg.push((a, j));
            }
            let l_main =
                tape.bce_link(u_final, Rc::new(pos), Rc::new(neg), !cfg.literal_eq13);
            components.l_main = tape.scalar(l_main);

            let w = composition_weights(cfg);
            let parts = [
                l_main,
                l_node_pos,
                l_node_neg,
                l_edge_pos,
                l_edge_neg,
                l_time_long,
                l_time_short,
            ];
            let signs = [1.0, 1.0, 1.0, 1.0, 1.0, time_sign, time_sign];
            // zero-weight components are dropped so ablated losses never
            // receive gradient
            let mut xs = Vec::new();
            let mut ws = Vec::new();
            for ((part, weight), sign) in parts.iter().zip(w).zip(signs) {
                if weight != 0.0 {
                    xs.push(*part);
                    ws.push(weight * sign);
                }
            }
            let total = tape.weighted_sum(&xs, &ws);
            let value = tape.scalar(total);
            if !value.is_finite() {
                return Err(ClpError::NonFinite("total loss".into()));
            }
            Some(total)
        }
    };

    Ok(Forward { tape, loss, components, u_final, u_snapshots, u_long, u_short, param_vars })
}

/// Final embeddings as plain rows (evaluation entry point).
pub fn final_embeddings(
    store: &ParamStore,
    data: &ModelData,
    cfg: &TrainConfig,
) -> Result<Vec<Vec<f64>>> {
    let fwd = build_forward(store, data, cfg, None)?;
    let d = data.dims.d;
    let v = fwd.tape.value(fwd.u_final);
    Ok((0..data.dims.n_nodes).map(|i| v[i * d..(i + 1) * d].to_vec()).collect())
}
