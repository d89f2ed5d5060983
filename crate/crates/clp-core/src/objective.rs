//! Supervised link objective and total-loss composition, plus per-epoch
//! triple sampling.

use std::collections::HashSet;

use rand::Rng;

use crate::config::{ContrastiveComposition, TrainConfig};
use crate::error::{ClpError, Result};
use crate::graph::{rng_for, shuffle, EvalSplit, TemporalNetwork};

/// Supervision triples: (anchor, positive neighbor, sampled non-neighbor).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkTriples {
    pub triples: Vec<(u32, u32, u32)>,
}

/// All auxiliary loss components of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub l_main: f64,
    pub l_node_pos: f64,
    pub l_node_neg: f64,
    pub l_edge_pos: f64,
    pub l_edge_neg: f64,
    pub l_time_long: f64,
    pub l_time_short: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-(x.abs())).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Binary cross-entropy over the supervision triples. With `literal_eq13`
/// the negative pairs keep the un-flipped logistic term.
pub fn link_loss(
    embeddings: &[Vec<f64>],
    triples: &LinkTriples,
    literal_eq13: bool,
) -> Result<f64> {
    let row = |i: u32| -> Result<&[f64]> {
        embeddings
            .get(i as usize)
            .map(|v| v.as_slice())
            .ok_or_else(|| ClpError::MissingEmbedding(i.to_string()))
    };
    let mut total = 0.0;
    for &(a, i, j) in &triples.triples {
        total += softplus(-dot(row(a)?, row(i)?));
        let s = dot(row(a)?, row(j)?);
        total += if literal_eq13 { softplus(-s) } else { softplus(s) };
    }
    if !total.is_finite() {
        return Err(ClpError::NonFinite("link loss".into()));
    }
    Ok(total)
}

/// Composed loss weights: (component values, weights) fed to the weighted
/// sum, after applying the ablation flag and the composition convention.
pub fn composition_weights(cfg: &TrainConfig) -> [f64; 7] {
    let (l1, l2, l3) = cfg.effective_lambdas();
    let neg_sign = match cfg.contrastive_composition {
        ContrastiveComposition::Subtractive => -1.0,
        ContrastiveComposition::Additive => 1.0,
    };
    [1.0, l1, neg_sign * l1, l2, neg_sign * l2, l3, l3]
}

/// Total loss per the composition
/// `L_main + λ1(L_node⁺ − L_node⁻) + λ2(L_edge⁺ − L_edge⁻) + λ3(L_time_L + L_time_S)`.
pub fn total_loss(components: &LossComponents, cfg: &TrainConfig) -> Result<f64> {
    let vals = [
        ("main", components.l_main),
        ("node_pos", components.l_node_pos),
        ("node_neg", components.l_node_neg),
        ("edge_pos", components.l_edge_pos),
        ("edge_neg", components.l_edge_neg),
        ("time_long", components.l_time_long),
        ("time_short", components.l_time_short),
    ];
    for (name, v) in vals {
        if !v.is_finite() {
            return Err(ClpError::NonFinite(format!("loss component {name}")));
        }
    }
    let w = composition_weights(cfg);
    Ok(vals.iter().zip(w).map(|((_, v), w)| v * w).sum())
}

/// Positives and forbidden pairs for one supervision source.
pub struct SupervisionSet {
    pub positives: Vec<(u32, u32)>,
    pub forbidden: HashSet<(u32, u32)>,
    pub n_nodes: usize,
}

impl SupervisionSet {
    pub fn from_split(thn: &TemporalNetwork, split: &EvalSplit) -> Self {
        let mut forbidden = crate::graph::train_span_pairs(thn);
        // eval-snapshot links are off limits for fresh negatives too: they
        // are the very pairs the test set treats as positives
        for p in thn.eval_snapshot().link_pairs() {
            forbidden.insert(p);
        }
        SupervisionSet {
            positives: split.train_pos.clone(),
            forbidden,
            n_nodes: thn.registry.len(),
        }
    }

    pub fn from_last_snapshot(thn: &TemporalNetwork) -> Self {
        let last = thn.train_snapshots().last().expect("at least one training snapshot");
        SupervisionSet {
            positives: last.link_pairs(),
            forbidden: crate::graph::train_span_pairs(thn),
            n_nodes: thn.registry.len(),
        }
    }
}

/// Per-epoch batches: shuffled positives, one fresh uniform negative each,
/// cut into `batch_size` chunks. Stream constants keep the two draws
/// independent of each other across epochs.
pub fn sample_triples(
    set: &SupervisionSet,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<LinkTriples>> {
    if set.positives.is_empty() {
        return Err(ClpError::Config("no training positives".into()));
    }
    if set.n_nodes < 2 {
        return Err(ClpError::InsufficientPopulation);
    }
    let epoch_seed = seed.wrapping_add((epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order = set.positives.clone();
    let mut rng = rng_for(epoch_seed, 4);
    shuffle(&mut order, &mut rng);

    let mut neg_rng = rng_for(epoch_seed, 5);
    let n = set.n_nodes as u32;
    let cap = 100 * order.len();
    let mut rejections = 0usize;
    let mut triples = Vec::with_capacity(order.len());
    for &(a, i) in &order {
        loop {
            let j = neg_rng.gen_range(0..n);
            let key = if a <= j { (a, j) } else { (j, a) };
            if j != a && !set.forbidden.contains(&key) {
                triples.push((a, i, j));
                break;
            }
            rejections += 1;
            if rejections > cap {
                return Err(ClpError::NegativeExhaustion {
                    requested: order.len(),
                    available: 0,
                });
            }
        }
    }
    Ok(triples
        .chunks(batch_size)
        .map(|c| LinkTriples { triples: c.to_vec() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;
    use crate::graph::{parse_edges, partition_snapshots, PartitionPolicy};

    const LN2: f64 = std::f64::consts::LN_2;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn embed(rows: &[&[f64]]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn link_loss_zero_dot_gives_two_ln2() {
        // positive dot 0 contributes ln 2; the sampled negative also dots 0
        let u = embed(&[&[0.0, 1.0], &[1.0, 0.0], &[0.0, 0.0]]);
        let t = LinkTriples { triples: vec![(0, 1, 2)] };
        let l = link_loss(&u, &t, false).unwrap();
        assert!((l - 2.0 * LN2).abs() < 1e-12, "{l}");
    }

    #[test]
    fn link_loss_saturating_positive_tends_to_zero() {
        let big = 40.0f64;
        let u = embed(&[&[big.sqrt()], &[big.sqrt()], &[0.0]]);
        let t = LinkTriples { triples: vec![(0, 1, 2)] };
        let l = link_loss(&u, &t, false).unwrap();
        assert!(l - LN2 < 1e-12, "positive term vanished, negative term ln2: {l}");
    }

    #[test]
    fn link_loss_unit_dots_oracle() {
        // positive dot 1 and negative dot -1: both terms -ln sigma(1)
        let u = embed(&[&[1.0], &[1.0], &[-1.0]]);
        let t = LinkTriples { triples: vec![(0, 1, 2)] };
        let l = link_loss(&u, &t, false).unwrap();
        let expect = -2.0 * sigmoid(1.0).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((expect - 0.6266).abs() < 1e-4);
    }

    #[test]
    fn link_loss_literal_flag_flips_negative_sign() {
        let u = embed(&[&[1.0], &[1.0], &[-1.0]]);
        let t = LinkTriples { triples: vec![(0, 1, 2)] };
        let standard = link_loss(&u, &t, false).unwrap();
        let literal = link_loss(&u, &t, true).unwrap();
        // literal form rewards the dissimilar negative with a larger loss
        assert!(literal > standard);
    }

    #[test]
    fn link_loss_missing_embedding() {
        let u = embed(&[&[1.0]]);
        let t = LinkTriples { triples: vec![(0, 1, 0)] };
        assert!(matches!(link_loss(&u, &t, false), Err(ClpError::MissingEmbedding(m)) if m == "1"));
    }

    fn components(v: f64) -> LossComponents {
        LossComponents {
            l_main: 10.0,
            l_node_pos: v,
            l_node_neg: v,
            l_edge_pos: v,
            l_edge_neg: v,
            l_time_long: v,
            l_time_short: v,
        }
    }

    #[test]
    fn total_loss_zero_lambdas_is_main_only() {
        let mut cfg = TrainConfig::default();
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.0;
        cfg.lambda3 = 0.0;
        assert_eq!(total_loss(&components(3.0), &cfg).unwrap(), 10.0);
    }

    #[test]
    fn total_loss_unit_components_oracle() {
        // node and edge pairs cancel, time contributes 2
        let cfg = TrainConfig::default();
        let l = total_loss(&components(1.0), &cfg).unwrap();
        assert!((l - (10.0 + 2e-3)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_matches_independent_resummation() {
        let c = LossComponents {
            l_main: 2.5,
            l_node_pos: 0.3,
            l_node_neg: 0.7,
            l_edge_pos: 1.1,
            l_edge_neg: 0.2,
            l_time_long: -0.4,
            l_time_short: 0.9,
        };
        let mut cfg = TrainConfig::default();
        cfg.lambda1 = 0.01;
        cfg.lambda2 = 0.02;
        cfg.lambda3 = 0.03;
        let expect = 2.5 + 0.01 * (0.3 - 0.7) + 0.02 * (1.1 - 0.2) + 0.03 * (-0.4 + 0.9);
        assert!((total_loss(&c, &cfg).unwrap() - expect).abs() < 1e-15);
        cfg.contrastive_composition = ContrastiveComposition::Additive;
        let expect = 2.5 + 0.01 * (0.3 + 0.7) + 0.02 * (1.1 + 0.2) + 0.03 * (-0.4 + 0.9);
        assert!((total_loss(&c, &cfg).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn total_loss_ablation_equals_zeroed_lambda_bitwise() {
        let c = components(0.37);
        let mut ablated = TrainConfig::default();
        ablated.ablation = Ablation::NoEdge;
        let mut zeroed = TrainConfig::default();
        zeroed.lambda2 = 0.0;
        assert_eq!(
            total_loss(&c, &ablated).unwrap().to_bits(),
            total_loss(&c, &zeroed).unwrap().to_bits()
        );
    }

    #[test]
    fn total_loss_affine_in_each_lambda() {
        let c = components(0.9);
        for (ix, composed) in [
            (0, c.l_node_pos - c.l_node_neg),
            (1, c.l_edge_pos - c.l_edge_neg),
            (2, c.l_time_long + c.l_time_short),
        ] {
            let at = |v: f64| {
                let mut cfg = TrainConfig::default();
                match ix {
                    0 => cfg.lambda1 = v,
                    1 => cfg.lambda2 = v,
                    _ => cfg.lambda3 = v,
                }
                total_loss(&c, &cfg).unwrap()
            };
            let slope = (at(2.0) - at(1.0)) / 1.0;
            assert!((slope - composed).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_rejects_non_finite() {
        let mut c = components(1.0);
        c.l_edge_pos = f64::NAN;
        let err = total_loss(&c, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("edge_pos"), "{err}");
    }

    fn tiny_network() -> TemporalNetwork {
        let csv = "src,dst,src_type,dst_type,edge_type,timestamp\n\
            a,b,U,U,f,0\nb,c,U,U,f,1\nc,d,U,U,f,2\n\
            a,c,U,U,f,10\nb,d,U,U,f,11\na,d,U,U,f,12\n";
        let edges = parse_edges(csv.as_bytes()).unwrap();
        partition_snapshots(&edges, PartitionPolicy::Window(10)).unwrap()
    }

    #[test]
    fn sample_triples_small_batch() {
        let thn = tiny_network();
        let set = SupervisionSet::from_last_snapshot(&thn);
        let batches = sample_triples(&set, 1024, 0, 0).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].triples.len(), set.positives.len());
    }

    #[test]
    fn sample_triples_deterministic_per_epoch() {
        let thn = tiny_network();
        let set = SupervisionSet::from_last_snapshot(&thn);
        let a = sample_triples(&set, 2, 7, 3).unwrap();
        let b = sample_triples(&set, 2, 7, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_triples(&set, 2, 7, 4).unwrap();
        assert_ne!(a, c, "fresh negatives each epoch");
    }

    #[test]
    fn sample_triples_negatives_verified_exhaustively() {
        let thn = tiny_network();
        let set = SupervisionSet::from_last_snapshot(&thn);
        for epoch in 0..20 {
            for batch in sample_triples(&set, 1024, 1, epoch).unwrap() {
                for (a, _, j) in batch.triples {
                    assert_ne!(a, j);
                    let key = if a <= j { (a, j) } else { (j, a) };
                    assert!(!set.forbidden.contains(&key), "sampled a forbidden pair {key:?}");
                }
            }
        }
    }

    #[test]
    fn sample_triples_exhaustion() {
        // complete graph on the training span: no negatives exist
        let csv = "src,dst,src_type,dst_type,edge_type,timestamp\n\
            a,b,U,U,f,0\na,c,U,U,f,0\nb,c,U,U,f,0\na,b,U,U,f,10\n";
        let edges = parse_edges(csv.as_bytes()).unwrap();
        let thn = partition_snapshots(&edges, PartitionPolicy::Window(10)).unwrap();
        let set = SupervisionSet::from_last_snapshot(&thn);
        assert!(matches!(
            sample_triples(&set, 8, 0, 0),
            Err(ClpError::NegativeExhaustion { .. })
        ));
    }

    #[test]
    fn supervision_from_split_blocks_eval_links() {
        let thn = tiny_network();
        let split = crate::graph::make_eval_split(&thn, 0, 1).unwrap();
        let set = SupervisionSet::from_split(&thn, &split);
        for p in thn.eval_snapshot().link_pairs() {
            assert!(set.forbidden.contains(&p));
        }
        assert_eq!(set.positives, split.train_pos);
    }
}
