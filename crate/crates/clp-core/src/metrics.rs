//! Link scoring and exact AUC / average-precision evaluation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ClpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
}

/// Scored candidate links with their ground-truth labels.
#[derive(Debug, Clone)]
pub struct ScoredLinks {
    pub pairs: Vec<(u32, u32)>,
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic-of-dot-product scores for labelled candidate pairs.
pub fn score_links(
    embeddings: &[Vec<f64>],
    positives: &[(u32, u32)],
    negatives: &[(u32, u32)],
) -> Result<ScoredLinks> {
    let mut pairs = Vec::with_capacity(positives.len() + negatives.len());
    let mut scores = Vec::with_capacity(pairs.capacity());
    let mut labels = Vec::with_capacity(pairs.capacity());
    for (set, label) in [(positives, Label::Positive), (negatives, Label::Negative)] {
        for &(a, b) in set {
            let ua = embeddings
                .get(a as usize)
                .ok_or_else(|| ClpError::MissingEmbedding(a.to_string()))?;
            let ub = embeddings
                .get(b as usize)
                .ok_or_else(|| ClpError::MissingEmbedding(b.to_string()))?;
            pairs.push((a, b));
            scores.push(sigmoid(dot(ua, ub)));
            labels.push(label);
        }
    }
    Ok(ScoredLinks { pairs, scores, labels })
}

fn class_counts(scored: &ScoredLinks) -> (usize, usize) {
    let p = scored.labels.iter().filter(|&&l| l == Label::Positive).count();
    (p, scored.labels.len() - p)
}

/// Mann–Whitney AUC: fraction of (positive, negative) pairs ranked
/// correctly, ties counted one half. Computed via average ranks so runtime
/// is sort-bound.
pub fn auc(scored: &ScoredLinks) -> Result<f64> {
    let (n_pos, n_neg) = class_counts(scored);
    if n_pos == 0 || n_neg == 0 {
        return Err(ClpError::UndefinedMetric("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scored.scores.len()).collect();
    order.sort_by(|&a, &b| scored.scores[a].total_cmp(&scored.scores[b]));
    // sum of average ranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scored.scores[order[j]] == scored.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1 ..= j
        for &ix in &order[i..j] {
            if scored.labels[ix] == Label::Positive {
                rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Average precision: mean of precision-at-rank over positives, ranked by
/// descending score with ties broken by pair identifier ascending.
pub fn ap(scored: &ScoredLinks) -> Result<f64> {
    let (n_pos, _) = class_counts(scored);
    if n_pos == 0 {
        return Err(ClpError::UndefinedMetric("ap needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scored.scores.len()).collect();
    order.sort_by(|&a, &b| {
        scored.scores[b]
            .total_cmp(&scored.scores[a])
            .then_with(|| scored.pairs[a].cmp(&scored.pairs[b]))
    });
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank0, &ix) in order.iter().enumerate() {
        if scored.labels[ix] == Label::Positive {
            hits += 1;
            total += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// Evaluation summary persisted as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<crate::config::TrainConfig>,
}

pub fn evaluate(scored: &ScoredLinks, seed: u64) -> Result<MetricsReport> {
    let (n_pos, n_neg) = class_counts(scored);
    Ok(MetricsReport { auc: auc(scored)?, ap: ap(scored)?, n_pos, n_neg, seed, config: None })
}

/// ROC / precision-recall points at every distinct score threshold,
/// written as `threshold,tpr,fpr,precision,recall`.
pub fn write_curves(scored: &ScoredLinks, path: &Path) -> Result<()> {
    let (n_pos, n_neg) = class_counts(scored);
    if n_pos == 0 || n_neg == 0 {
        return Err(ClpError::UndefinedMetric("curves need both classes".into()));
    }
    let mut order: Vec<usize> = (0..scored.scores.len()).collect();
    order.sort_by(|&a, &b| scored.scores[b].total_cmp(&scored.scores[a]));
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "threshold,tpr,fpr,precision,recall")?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scored.scores[order[i]];
        while i < order.len() && scored.scores[order[i]] == threshold {
            match scored.labels[order[i]] {
                Label::Positive => tp += 1,
                Label::Negative => fp += 1,
            }
            i += 1;
        }
        let tpr = tp as f64 / n_pos as f64;
        let fpr = fp as f64 / n_neg as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        writeln!(out, "{threshold},{tpr},{fpr},{precision},{tpr}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scored(pos: &[f64], neg: &[f64]) -> ScoredLinks {
        let mut pairs = Vec::new();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (i, &s) in pos.iter().enumerate() {
            pairs.push((i as u32, 1000 + i as u32));
            scores.push(s);
            labels.push(Label::Positive);
        }
        for (i, &s) in neg.iter().enumerate() {
            pairs.push((2000 + i as u32, 3000 + i as u32));
            scores.push(s);
            labels.push(Label::Negative);
        }
        ScoredLinks { pairs, scores, labels }
    }

    /// O(P*N) pairwise AUC used as the oracle.
    fn brute_auc(s: &ScoredLinks) -> f64 {
        let pos: Vec<f64> = s
            .scores
            .iter()
            .zip(&s.labels)
            .filter(|(_, &l)| l == Label::Positive)
            .map(|(&v, _)| v)
            .collect();
        let neg: Vec<f64> = s
            .scores
            .iter()
            .zip(&s.labels)
            .filter(|(_, &l)| l == Label::Negative)
            .map(|(&v, _)| v)
            .collect();
        let mut total = 0.0;
        for &p in &pos {
            for &n in &neg {
                total += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn score_links_orthogonal_is_half() {
        let emb = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = score_links(&emb, &[(0, 1)], &[]).unwrap();
        assert_eq!(s.scores[0], 0.5);
    }

    #[test]
    fn score_links_unit_norm_self_pair() {
        let emb = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let s = score_links(&emb, &[(0, 1)], &[]).unwrap();
        assert!((s.scores[0] - sigmoid(1.0)).abs() < 1e-12);
        assert!((s.scores[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn score_links_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb: Vec<Vec<f64>> =
            (0..6).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let fwd = score_links(&emb, &[(0, 1), (2, 5)], &[(3, 4)]).unwrap();
        let rev = score_links(&emb, &[(1, 0), (5, 2)], &[(4, 3)]).unwrap();
        assert_eq!(fwd.scores, rev.scores);
    }

    #[test]
    fn score_links_missing_embedding() {
        let emb = vec![vec![1.0]];
        assert!(score_links(&emb, &[(0, 7)], &[]).is_err());
    }

    #[test]
    fn auc_perfect_separation() {
        let s = scored(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(auc(&s).unwrap(), 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let s = scored(&[0.5, 0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(auc(&s).unwrap(), 0.5);
    }

    #[test]
    fn auc_hand_case() {
        let s = scored(&[0.9, 0.4], &[0.6, 0.1]);
        assert_eq!(auc(&s).unwrap(), 0.75);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert!(auc(&scored(&[0.3], &[])).is_err());
        assert!(auc(&scored(&[], &[0.3])).is_err());
    }

    #[test]
    fn ap_all_positives_first() {
        let s = scored(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(ap(&s).unwrap(), 1.0);
    }

    #[test]
    fn ap_hand_case() {
        let s = scored(&[0.9, 0.4], &[0.6, 0.1]);
        assert!((ap(&s).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ap_trailing_negatives_are_irrelevant() {
        let base = scored(&[0.9, 0.8], &[0.5]);
        let extended = scored(&[0.9, 0.8], &[0.5, 0.1, 0.05]);
        assert_eq!(ap(&base).unwrap(), ap(&extended).unwrap());
    }

    #[test]
    fn ap_tie_break_is_deterministic() {
        // two entries share the score; pair ids order them
        let mut s = scored(&[0.5], &[0.5]);
        s.pairs = vec![(1, 2), (3, 4)];
        let a = ap(&s).unwrap();
        let b = ap(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, 1.0, "positive pair id sorts first");
    }

    #[test]
    fn auc_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..300 {
            let np = rng.gen_range(1..25);
            let nn = rng.gen_range(1..25);
            // coarse grid of scores forces plenty of ties
            let pos: Vec<f64> = (0..np).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
            let neg: Vec<f64> = (0..nn).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
            let s = scored(&pos, &neg);
            let fast = auc(&s).unwrap();
            let slow = brute_auc(&s);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn auc_complement_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let pos: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            let neg: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s = scored(&pos, &neg);
            let flipped_pos: Vec<f64> = neg.iter().map(|v| -v).collect();
            let flipped_neg: Vec<f64> = pos.iter().map(|v| -v).collect();
            let f = scored(&flipped_pos, &flipped_neg);
            assert!((auc(&s).unwrap() - auc(&f).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let pos: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let neg: Vec<f64> = (0..7).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s = scored(&pos, &neg);
            let tp: Vec<f64> = pos.iter().map(|v| (3.0 * v).exp()).collect();
            let tn: Vec<f64> = neg.iter().map(|v| (3.0 * v).exp()).collect();
            let t = scored(&tp, &tn);
            assert!((auc(&s).unwrap() - auc(&t).unwrap()).abs() < 1e-12);
            assert!((ap(&s).unwrap() - ap(&t).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn curves_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let s = scored(&[0.9, 0.4], &[0.6, 0.1]);
        write_curves(&s, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "threshold,tpr,fpr,precision,recall");
        let last: Vec<&str> = lines.last().unwrap().split(',').collect();
        assert_eq!(last[1], "1"); // tpr reaches 1
        assert_eq!(last[2], "1"); // fpr reaches 1
    }

    #[test]
    fn evaluate_report_counts() {
        let s = scored(&[0.9, 0.4], &[0.6, 0.1]);
        let r = evaluate(&s, 3).unwrap();
        assert_eq!((r.n_pos, r.n_neg, r.seed), (2, 2, 3));
        assert_eq!(r.auc, 0.75);
    }
}
