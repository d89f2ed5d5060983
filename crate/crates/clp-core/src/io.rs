//! On-disk dataset layout: `snapshots.json` (boundaries, registry, edge
//! types) plus one `snapshot_<t>.csv` per snapshot, and `split.json` for the
//! evaluation link sets.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ClpError, Result};
use crate::graph::{EvalSplit, NodeRegistry, SnapshotGraph, TemporalNetwork};

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    name: String,
    node_type: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    boundaries: Vec<(u64, u64)>,
    edge_types: Vec<String>,
    nodes: Vec<NodeRecord>,
    snapshot_count: usize,
}

pub fn write_dataset(thn: &TemporalNetwork, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        boundaries: thn.boundaries.clone(),
        edge_types: thn.edge_types.clone(),
        nodes: thn
            .registry
            .names
            .iter()
            .zip(&thn.registry.node_types)
            .map(|(name, node_type)| NodeRecord {
                name: name.clone(),
                node_type: node_type.clone(),
            })
            .collect(),
        snapshot_count: thn.snapshots.len(),
    };
    let file = std::fs::File::create(dir.join("snapshots.json"))?;
    serde_json::to_writer_pretty(file, &manifest)?;
    for snap in &thn.snapshots {
        let mut out = std::fs::File::create(dir.join(format!("snapshot_{}.csv", snap.index)))?;
        writeln!(out, "src,dst,src_type,dst_type,edge_type")?;
        for &(a, b, r) in &snap.edges {
            writeln!(
                out,
                "{},{},{},{},{}",
                thn.registry.names[a as usize],
                thn.registry.names[b as usize],
                thn.registry.node_types[a as usize],
                thn.registry.node_types[b as usize],
                thn.edge_types[r],
            )?;
        }
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<TemporalNetwork> {
    let manifest_path = dir.join("snapshots.json");
    let file = std::fs::File::open(&manifest_path).map_err(|e| {
        ClpError::Parse { line: 0, reason: format!("cannot open {}: {e}", manifest_path.display()) }
    })?;
    let manifest: Manifest = serde_json::from_reader(file)?;
    let mut registry = NodeRegistry::default();
    for rec in &manifest.nodes {
        registry.insert(&rec.name, &rec.node_type);
    }
    if registry.len() != manifest.nodes.len() {
        return Err(ClpError::Parse {
            line: 0,
            reason: "duplicate node records in snapshots.json".into(),
        });
    }
    let mut snapshots = Vec::with_capacity(manifest.snapshot_count);
    for t in 1..=manifest.snapshot_count {
        let path = dir.join(format!("snapshot_{t}.csv"));
        let text = std::fs::read_to_string(&path).map_err(|e| ClpError::Parse {
            line: 0,
            reason: format!("cannot open {}: {e}", path.display()),
        })?;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (no, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(ClpError::Parse {
                    line: no + 1,
                    reason: format!("{}: expected 5 columns", path.display()),
                });
            }
            let lookup = |name: &str| {
                registry.get(name).ok_or_else(|| ClpError::Parse {
                    line: no + 1,
                    reason: format!("unregistered node `{name}`"),
                })
            };
            let a = lookup(fields[0])?;
            let b = lookup(fields[1])?;
            let r = manifest
                .edge_types
                .iter()
                .position(|t| t == fields[4])
                .ok_or_else(|| ClpError::UnknownEdgeType(fields[4].to_string()))?;
            nodes.push(a);
            nodes.push(b);
            edges.push((a.min(b), a.max(b), r));
        }
        nodes.sort_unstable();
        nodes.dedup();
        snapshots.push(SnapshotGraph { index: t, nodes, edges });
    }
    if snapshots.len() < 2 {
        return Err(ClpError::InsufficientSpan(snapshots.len()));
    }
    Ok(TemporalNetwork {
        snapshots,
        registry,
        edge_types: manifest.edge_types,
        boundaries: manifest.boundaries,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    train_pos: Vec<(u32, u32)>,
    val_pos: Vec<(u32, u32)>,
    test_pos: Vec<(u32, u32)>,
    train_neg: Vec<(u32, u32)>,
    val_neg: Vec<(u32, u32)>,
    test_neg: Vec<(u32, u32)>,
}

pub fn write_split(split: &EvalSplit, path: &Path) -> Result<()> {
    let file = SplitFile {
        seed: split.seed,
        train_pos: split.train_pos.clone(),
        val_pos: split.val_pos.clone(),
        test_pos: split.test_pos.clone(),
        train_neg: split.train_neg.clone(),
        val_neg: split.val_neg.clone(),
        test_neg: split.test_neg.clone(),
    };
    let out = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(out, &file)?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<EvalSplit> {
    let file = std::fs::File::open(path).map_err(|e| ClpError::Parse {
        line: 0,
        reason: format!("cannot open {}: {e}", path.display()),
    })?;
    let f: SplitFile = serde_json::from_reader(file)?;
    Ok(EvalSplit {
        train_pos: f.train_pos,
        val_pos: f.val_pos,
        test_pos: f.test_pos,
        train_neg: f.train_neg,
        val_neg: f.val_neg,
        test_neg: f.test_neg,
        seed: f.seed,
    })
}
