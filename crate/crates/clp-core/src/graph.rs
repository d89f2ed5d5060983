//! Temporal heterogeneous network construction: edge-stream parsing, snapshot
//! partitioning, typed subgraph views, evaluation splits and feature init.

use std::collections::{HashMap, HashSet};
use std::io::Read;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ClpError, Result};

/// A single undirected typed interaction. Endpoints are normalized so that
/// `src <= dst` under lexicographic order on identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TemporalEdge {
    pub src: String,
    pub dst: String,
    pub src_type: String,
    pub dst_type: String,
    pub edge_type: String,
    pub timestamp: u64,
}

impl TemporalEdge {
    pub fn normalized(
        src: String,
        dst: String,
        src_type: String,
        dst_type: String,
        edge_type: String,
        timestamp: u64,
    ) -> Self {
        if src <= dst {
            TemporalEdge { src, dst, src_type, dst_type, edge_type, timestamp }
        } else {
            TemporalEdge { src: dst, dst: src, src_type: dst_type, dst_type: src_type, edge_type, timestamp }
        }
    }
}

/// Global map from node identifier to dense index and node type.
/// Order is first appearance in the input edge stream, which makes every
/// downstream computation deterministic.
#[derive(Debug, Clone, Default)]
pub struct NodeRegistry {
    pub names: Vec<String>,
    pub node_types: Vec<String>,
    index: HashMap<String, u32>,
}

impl NodeRegistry {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn insert(&mut self, name: &str, node_type: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.node_types.push(node_type.to_string());
        self.index.insert(name.to_string(), i);
        i
    }
}

/// One static snapshot: node set plus typed undirected edges with dense ids.
#[derive(Debug, Clone)]
pub struct SnapshotGraph {
    /// 1-based ordinal within the sequence.
    pub index: usize,
    /// Sorted dense node ids present in this snapshot.
    pub nodes: Vec<u32>,
    /// Unique (src, dst, edge_type) with src <= dst.
    pub edges: Vec<(u32, u32, usize)>,
}

impl SnapshotGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Unique unordered node pairs linked by any edge type.
    pub fn link_pairs(&self) -> Vec<(u32, u32)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &(a, b, _) in &self.edges {
            if seen.insert((a, b)) {
                out.push((a, b));
            }
        }
        out
    }
}

/// Ordered snapshot sequence: `snapshots[0..T]` are the training span and
/// `snapshots[T]` is the evaluation snapshot.
#[derive(Debug, Clone)]
pub struct TemporalNetwork {
    pub snapshots: Vec<SnapshotGraph>,
    pub registry: NodeRegistry,
    pub edge_types: Vec<String>,
    /// Window boundaries in input time units, one [start, end) per snapshot.
    pub boundaries: Vec<(u64, u64)>,
}

impl TemporalNetwork {
    /// Number of training snapshots (the last snapshot is held out).
    pub fn train_len(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn eval_snapshot(&self) -> &SnapshotGraph {
        self.snapshots.last().expect("at least two snapshots")
    }

    pub fn train_snapshots(&self) -> &[SnapshotGraph] {
        &self.snapshots[..self.snapshots.len() - 1]
    }
}

/// Per-(snapshot, edge type) adjacency view. Every present node carries a
/// self-loop so softmax neighborhoods are never empty.
#[derive(Debug, Clone)]
pub struct TypedSubgraph {
    pub snapshot: usize,
    pub edge_type: usize,
    /// Present nodes, sorted.
    pub nodes: Vec<u32>,
    /// Indexed by dense node id; empty for absent nodes. Sorted, includes self.
    pub neighbors: Vec<Vec<u32>>,
}

impl TypedSubgraph {
    pub fn contains(&self, node: u32) -> bool {
        !self.neighbors[node as usize].is_empty()
    }

    /// Degree with the self-loop excluded, as used by the linear aggregation
    /// normalization.
    pub fn degree_excl_self(&self, node: u32) -> usize {
        let n = &self.neighbors[node as usize];
        n.iter().filter(|&&b| b != node).count()
    }
}

/// Positive/negative link sets for train/validation/test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSplit {
    pub train_pos: Vec<(u32, u32)>,
    pub val_pos: Vec<(u32, u32)>,
    pub test_pos: Vec<(u32, u32)>,
    pub train_neg: Vec<(u32, u32)>,
    pub val_neg: Vec<(u32, u32)>,
    pub test_neg: Vec<(u32, u32)>,
    pub seed: u64,
}

/// Trainable per-node feature rows, |V| x d row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub data: Vec<f64>,
    pub nodes: usize,
    pub dim: usize,
    pub trainable: bool,
}

impl FeatureTable {
    pub fn row(&self, node: u32) -> &[f64] {
        let i = node as usize * self.dim;
        &self.data[i..i + self.dim]
    }
}

const REQUIRED_COLUMNS: [&str; 6] = ["src", "dst", "src_type", "dst_type", "edge_type", "timestamp"];

/// Parse a CSV edge stream with header `src,dst,src_type,dst_type,edge_type,timestamp`.
/// Duplicate (src, dst, edge_type, timestamp) rows collapse to one; a node
/// identifier must map to exactly one node type.
pub fn parse_edges<R: Read>(source: R) -> Result<Vec<TemporalEdge>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut col = [0usize; 6];
    for (i, name) in REQUIRED_COLUMNS.iter().enumerate() {
        match headers.iter().position(|h| h == *name) {
            Some(p) => col[i] = p,
            None => {
                return Err(ClpError::Parse {
                    line: 1,
                    reason: format!("missing required column `{name}`"),
                })
            }
        }
    }
    let width = headers.len();

    let mut node_types: HashMap<String, String> = HashMap::new();
    let mut seen: HashSet<(String, String, String, u64)> = HashSet::new();
    let mut edges = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| ClpError::Parse { line, reason: e.to_string() })?;
        if record.len() != width {
            return Err(ClpError::Parse {
                line,
                reason: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let field = |c: usize| record.get(col[c]).unwrap_or("").trim().to_string();
        let ts: u64 = field(5)
            .parse()
            .map_err(|_| ClpError::Parse { line, reason: format!("non-integer timestamp `{}`", field(5)) })?;
        let edge = TemporalEdge::normalized(field(0), field(1), field(2), field(3), field(4), ts);
        for (node, ty) in [(&edge.src, &edge.src_type), (&edge.dst, &edge.dst_type)] {
            match node_types.get(node) {
                Some(prev) if prev != ty => {
                    return Err(ClpError::SchemaConflict {
                        node: node.clone(),
                        first: prev.clone(),
                        second: ty.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    node_types.insert(node.clone(), ty.clone());
                }
            }
        }
        if seen.insert((edge.src.clone(), edge.dst.clone(), edge.edge_type.clone(), edge.timestamp)) {
            edges.push(edge);
        }
    }
    Ok(edges)
}

/// Snapshot partitioning policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionPolicy {
    /// Fixed window length in input time units.
    Window(u64),
    /// Target snapshot count; the window becomes ceil(span / count).
    Count(usize),
}

/// Assign edges to time windows. The final window becomes the evaluation
/// snapshot; empty intermediate windows are retained as empty graphs.
pub fn partition_snapshots(edges: &[TemporalEdge], policy: PartitionPolicy) -> Result<TemporalNetwork> {
    if edges.is_empty() {
        return Err(ClpError::InvalidParameter("no edges to partition".into()));
    }
    let t_min = edges.iter().map(|e| e.timestamp).min().unwrap();
    let t_max = edges.iter().map(|e| e.timestamp).max().unwrap();
    let span = t_max - t_min + 1;
    let window = match policy {
        PartitionPolicy::Window(w) => {
            if w == 0 {
                return Err(ClpError::InvalidParameter("window length must be positive".into()));
            }
            w
        }
        PartitionPolicy::Count(k) => {
            if k < 2 {
                return Err(ClpError::InvalidParameter("snapshot count must be at least 2".into()));
            }
            span.div_ceil(k as u64)
        }
    };
    let n_snapshots = span.div_ceil(window) as usize;

    let mut registry = NodeRegistry::default();
    let mut edge_types: Vec<String> = Vec::new();
    let mut type_index: HashMap<String, usize> = HashMap::new();
    let mut buckets: Vec<Vec<(u32, u32, usize)>> = vec![Vec::new(); n_snapshots];
    for e in edges {
        let a = registry.insert(&e.src, &e.src_type);
        let b = registry.insert(&e.dst, &e.dst_type);
        let r = *type_index.entry(e.edge_type.clone()).or_insert_with(|| {
            edge_types.push(e.edge_type.clone());
            edge_types.len() - 1
        });
        let t = ((e.timestamp - t_min) / window) as usize;
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        buckets[t].push((a, b, r));
    }

    let nonempty = buckets.iter().filter(|b| !b.is_empty()).count();
    if nonempty < 2 {
        return Err(ClpError::InsufficientSpan(nonempty));
    }

    let mut snapshots = Vec::with_capacity(n_snapshots);
    let mut boundaries = Vec::with_capacity(n_snapshots);
    for (t, mut bucket) in buckets.into_iter().enumerate() {
        bucket.sort_unstable();
        bucket.dedup();
        let mut nodes: Vec<u32> = bucket.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        snapshots.push(SnapshotGraph { index: t + 1, nodes, edges: bucket });
        let start = t_min + t as u64 * window;
        boundaries.push((start, start + window));
    }
    Ok(TemporalNetwork { snapshots, registry, edge_types, boundaries })
}

/// One adjacency view per edge type, self-loops added for all incident nodes.
pub fn build_typed_subgraphs(
    snapshot: &SnapshotGraph,
    n_edge_types: usize,
    n_nodes: usize,
) -> Result<Vec<TypedSubgraph>> {
    let mut subs: Vec<TypedSubgraph> = (0..n_edge_types)
        .map(|r| TypedSubgraph {
            snapshot: snapshot.index,
            edge_type: r,
            nodes: Vec::new(),
            neighbors: vec![Vec::new(); n_nodes],
        })
        .collect();
    for &(a, b, r) in &snapshot.edges {
        if r >= n_edge_types {
            return Err(ClpError::UnknownEdgeType(format!("#{r}")));
        }
        let sub = &mut subs[r];
        sub.neighbors[a as usize].push(b);
        if a != b {
            sub.neighbors[b as usize].push(a);
        }
    }
    for sub in &mut subs {
        for (a, list) in sub.neighbors.iter_mut().enumerate() {
            if !list.is_empty() {
                list.push(a as u32); // self-loop
                list.sort_unstable();
                list.dedup();
                sub.nodes.push(a as u32);
            }
        }
    }
    Ok(subs)
}

/// Drop nodes (and incident links) from the evaluation snapshot that never
/// appear in the training span, then re-densify the registry.
pub fn clean_future_nodes(thn: &TemporalNetwork) -> TemporalNetwork {
    let n_old = thn.registry.len();
    let mut in_train = vec![false; n_old];
    for snap in thn.train_snapshots() {
        for &v in &snap.nodes {
            in_train[v as usize] = true;
        }
    }
    // Remap keeps first-appearance order.
    let mut remap: Vec<Option<u32>> = vec![None; n_old];
    let mut registry = NodeRegistry::default();
    for (i, keep) in in_train.iter().enumerate() {
        if *keep {
            let new = registry.insert(&thn.registry.names[i], &thn.registry.node_types[i]);
            remap[i] = Some(new);
        }
    }
    let map_edge = |&(a, b, r): &(u32, u32, usize)| -> Option<(u32, u32, usize)> {
        match (remap[a as usize], remap[b as usize]) {
            (Some(x), Some(y)) => Some(if x <= y { (x, y, r) } else { (y, x, r) }),
            _ => None,
        }
    };
    let snapshots = thn
        .snapshots
        .iter()
        .map(|s| {
            let edges: Vec<_> = s.edges.iter().filter_map(map_edge).collect();
            let mut nodes: Vec<u32> = s
                .nodes
                .iter()
                .filter_map(|&v| remap[v as usize])
                .collect();
            nodes.sort_unstable();
            let mut edges = edges;
            edges.sort_unstable();
            edges.dedup();
            SnapshotGraph { index: s.index, nodes, edges }
        })
        .collect();
    TemporalNetwork {
        snapshots,
        registry,
        edge_types: thn.edge_types.clone(),
        boundaries: thn.boundaries.clone(),
    }
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn sample_negatives(
    count: usize,
    n_nodes: usize,
    forbidden: &HashSet<(u32, u32)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(u32, u32)>> {
    let total_pairs = n_nodes * (n_nodes - 1) / 2;
    let forbidden_pairs = forbidden.iter().filter(|(a, b)| a != b).count();
    let available = total_pairs.saturating_sub(forbidden_pairs);
    if available < count {
        return Err(ClpError::NegativeExhaustion { requested: count, available });
    }
    let mut chosen: HashSet<(u32, u32)> = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let cap = 1000 * count.max(1);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > cap {
            return Err(ClpError::NegativeExhaustion { requested: count, available });
        }
        let a = rng.gen_range(0..n_nodes as u32);
        let b = rng.gen_range(0..n_nodes as u32);
        if a == b {
            continue;
        }
        let pair = if a < b { (a, b) } else { (b, a) };
        if forbidden.contains(&pair) || !chosen.insert(pair) {
            continue;
        }
        out.push(pair);
    }
    Ok(out)
}

/// Collect the unique link pairs of all training snapshots.
pub fn train_span_pairs(thn: &TemporalNetwork) -> HashSet<(u32, u32)> {
    let mut set = HashSet::new();
    for snap in thn.train_snapshots() {
        for &(a, b, _) in &snap.edges {
            set.insert((a, b));
        }
    }
    set
}

/// Partition the evaluation links 20/20/60 (val/train/test, rounding toward
/// test) and sample negatives: training negatives avoid all training-span
/// links, validation/test negatives avoid evaluation-snapshot links.
pub fn make_eval_split(thn: &TemporalNetwork, seed: u64, neg_ratio: usize) -> Result<EvalSplit> {
    if neg_ratio == 0 {
        return Err(ClpError::InvalidParameter("neg_ratio must be positive".into()));
    }
    let mut positives = thn.eval_snapshot().link_pairs();
    if positives.is_empty() {
        return Err(ClpError::Config("evaluation snapshot has no links after cleaning".into()));
    }
    positives.sort_unstable();
    let mut rng = rng_for(seed, 1);
    shuffle(&mut positives, &mut rng);

    let n = positives.len();
    let n_val = n / 5;
    let n_train = n / 5;
    let val_pos = positives[..n_val].to_vec();
    let train_pos = positives[n_val..n_val + n_train].to_vec();
    let test_pos = positives[n_val + n_train..].to_vec();

    let n_nodes = thn.registry.len();
    let train_forbidden = train_span_pairs(thn);
    let eval_forbidden: HashSet<(u32, u32)> = thn.eval_snapshot().link_pairs().into_iter().collect();

    let mut neg_rng = rng_for(seed, 2);
    let train_neg = sample_negatives(neg_ratio * train_pos.len(), n_nodes, &train_forbidden, &mut neg_rng)?;
    let val_neg = sample_negatives(neg_ratio * val_pos.len(), n_nodes, &eval_forbidden, &mut neg_rng)?;
    let test_neg = sample_negatives(neg_ratio * test_pos.len(), n_nodes, &eval_forbidden, &mut neg_rng)?;

    Ok(EvalSplit { train_pos, val_pos, test_pos, train_neg, val_neg, test_neg, seed })
}

/// Fisher-Yates with an explicit generator so splits are reproducible across
/// library versions.
pub fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Seeded uniform rows on [-sqrt(6/d), +sqrt(6/d)].
pub fn init_features(n_nodes: usize, dim: usize, seed: u64) -> Result<FeatureTable> {
    if dim == 0 {
        return Err(ClpError::InvalidParameter("feature dimension must be at least 1".into()));
    }
    let bound = (6.0 / dim as f64).sqrt();
    let mut rng = rng_for(seed, 3);
    let data = (0..n_nodes * dim).map(|_| rng.gen_range(-bound..bound)).collect();
    Ok(FeatureTable { data, nodes: n_nodes, dim, trainable: true })
}
