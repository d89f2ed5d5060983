//! Planted two-community temporal graph generator used for end-to-end
//! sanity checks and benchmarks.

use rand::Rng;

use crate::error::{ClpError, Result};
use crate::graph::{partition_snapshots, rng_for, PartitionPolicy, TemporalEdge, TemporalNetwork};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub nodes: usize,
    pub edge_types: usize,
    pub snapshots: usize,
    pub seed: u64,
    /// Link probability inside a community, per edge type.
    pub p_within: f64,
    /// Link probability across communities.
    pub p_cross: f64,
    /// Per-snapshot probability that a pair's link state is resampled.
    pub drift: f64,
}

impl SynthParams {
    pub fn new(nodes: usize, edge_types: usize, snapshots: usize, seed: u64) -> Self {
        SynthParams {
            nodes,
            edge_types,
            snapshots,
            seed,
            p_within: 0.2,
            p_cross: 0.01,
            drift: 0.05,
        }
    }
}

/// Generate the planted network: community membership is node index parity
/// of the half split, pair states persist across snapshots and resample
/// with the drift probability.
pub fn generate(params: &SynthParams) -> Result<TemporalNetwork> {
    if params.nodes < 4 {
        return Err(ClpError::InvalidParameter("synth needs at least 4 nodes".into()));
    }
    if params.edge_types == 0 || params.snapshots < 2 {
        return Err(ClpError::InvalidParameter(
            "synth needs at least 1 edge type and 2 snapshots".into(),
        ));
    }
    for (name, p) in [
        ("p_within", params.p_within),
        ("p_cross", params.p_cross),
        ("drift", params.drift),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(ClpError::InvalidParameter(format!("{name} must be in [0, 1]")));
        }
    }
    let n = params.nodes;
    let half = n / 2;
    let community = |i: usize| if i < half { 0u8 } else { 1 };
    let mut rng = rng_for(params.seed, 20);
    let mut edges = Vec::new();
    // live[pair index within (type)] updated snapshot by snapshot
    let pair_count = n * (n - 1) / 2;
    let mut live = vec![vec![false; pair_count]; params.edge_types];
    for t in 0..params.snapshots {
        for r in 0..params.edge_types {
            let mut k = 0usize;
            for i in 0..n {
                for j in (i + 1)..n {
                    let p = if community(i) == community(j) {
                        params.p_within
                    } else {
                        params.p_cross
                    };
                    if t == 0 || rng.gen_bool(params.drift) {
                        live[r][k] = rng.gen_bool(p);
                    }
                    if live[r][k] {
                        edges.push(TemporalEdge {
                            src: format!("n{i}"),
                            dst: format!("n{j}"),
                            src_type: format!("c{}", community(i)),
                            dst_type: format!("c{}", community(j)),
                            edge_type: format!("r{r}"),
                            timestamp: t as u64,
                        });
                    }
                    k += 1;
                }
            }
        }
    }
    partition_snapshots(&edges, PartitionPolicy::Window(1))
}
