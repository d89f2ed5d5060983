//! `clp` command-line front end: ingestion, training, evaluation, ablation,
//! grid search, gradient checking, synthetic data, and curve export.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use clp_core::config::{Ablation, GridSpec, TrainConfig, CONFIG_KEYS};
use clp_core::graph::{
    clean_future_nodes, make_eval_split, parse_edges, partition_snapshots, EvalSplit,
    PartitionPolicy, TemporalNetwork,
};
use clp_core::metrics::{evaluate, score_links, write_curves, MetricsReport};
use clp_core::model::{final_embeddings, ModelData};
use clp_core::synth::SynthParams;
use clp_core::trainer::{
    gradient_check, load_checkpoint, save_checkpoint, train, write_log, Checkpoint, GridResult,
};
use clp_core::{ClpError, Result};

fn config_key_help() -> String {
    let mut s = String::from("Config file keys (flat `key = value` lines):\n");
    for (key, default, desc) in CONFIG_KEYS {
        s.push_str(&format!("  {key:<26} default {default:<28} {desc}\n"));
    }
    s
}

#[derive(Parser)]
#[command(
    name = "clp",
    about = "Link prediction on temporal heterogeneous networks",
    after_long_help = config_key_help(),
    after_help = config_key_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variant {
    NoNode,
    NoEdge,
    NoTime,
}

impl From<Variant> for Ablation {
    fn from(v: Variant) -> Ablation {
        match v {
            Variant::NoNode => Ablation::NoNode,
            Variant::NoEdge => Ablation::NoEdge,
            Variant::NoTime => Ablation::NoTime,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a timestamped edge CSV into a snapshot dataset directory
    Ingest {
        /// Edge file: CSV with header src,dst,src_type,dst_type,edge_type,timestamp
        #[arg(long)]
        edges: PathBuf,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Snapshot window length in time units
        #[arg(long, conflicts_with = "snapshots")]
        window: Option<u64>,
        /// Number of snapshots (window derived from the span)
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// Train a model on an ingested dataset
    Train {
        /// Config file (`key = value` lines; see --help for keys)
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory from `ingest` or `synth`
        #[arg(long)]
        data: PathBuf,
        /// Output directory (checkpoint, log, split, metrics)
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split
    Eval {
        /// Checkpoint directory
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split file; defaults to the split implied by the checkpoint config
        #[arg(long)]
        split: Option<PathBuf>,
        /// Write metrics.json here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one ablation variant and report test metrics with a config echo
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-product hyperparameter search
    Grid {
        #[arg(long)]
        config: PathBuf,
        /// Grid file: `key = v1, v2, ...` lines
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Parallel workers
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write the result table (JSON) here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check on a small planted instance
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Instance size
        #[arg(long, default_value_t = 20)]
        nodes: usize,
        /// Snapshot count (training span is one less)
        #[arg(long, default_value_t = 4)]
        snapshots: usize,
    },
    /// Generate a planted two-community temporal dataset
    Synth {
        #[arg(long)]
        nodes: usize,
        /// Edge type count
        #[arg(long)]
        types: usize,
        #[arg(long)]
        snapshots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export ROC / precision-recall curve points for a checkpoint
    Curves {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_clean_dataset(dir: &Path) -> Result<TemporalNetwork> {
    Ok(clean_future_nodes(&clp_core::io::read_dataset(dir)?))
}

fn split_for(
    thn: &TemporalNetwork,
    path: Option<&PathBuf>,
    cfg: &TrainConfig,
) -> Result<EvalSplit> {
    match path {
        Some(p) => clp_core::io::read_split(p),
        None => make_eval_split(thn, cfg.seed, cfg.neg_ratio),
    }
}

/// Evaluate a checkpoint's test metrics; embeddings always come from the
/// stored (f32-rounded) parameters so results are reproducible.
fn test_metrics(
    ckpt: &Checkpoint,
    thn: &TemporalNetwork,
    split: &EvalSplit,
) -> Result<MetricsReport> {
    if ckpt.store.dims.n_nodes != thn.registry.len() {
        return Err(ClpError::CheckpointIntegrity(format!(
            "checkpoint was trained on {} nodes, dataset has {}",
            ckpt.store.dims.n_nodes,
            thn.registry.len()
        )));
    }
    let data = ModelData::new(thn, &ckpt.config)?;
    let embeddings = final_embeddings(&ckpt.store, &data, &ckpt.config)?;
    let scored = score_links(&embeddings, &split.test_pos, &split.test_neg)?;
    evaluate(&scored, ckpt.seed)
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run_training(cfg: &TrainConfig, data_dir: &Path, out_dir: &Path) -> Result<MetricsReport> {
    let thn = load_clean_dataset(data_dir)?;
    let split = make_eval_split(&thn, cfg.seed, cfg.neg_ratio)?;
    let outcome = train(&thn, &split, cfg)?;
    std::fs::create_dir_all(out_dir)?;
    clp_core::io::write_split(&split, &out_dir.join("split.json"))?;
    write_log(&outcome.log, &out_dir.join("train.ndjson"))?;
    let ckpt_dir = out_dir.join("checkpoint");
    save_checkpoint(&outcome.checkpoint, &ckpt_dir)?;
    if let Some(what) = &outcome.aborted {
        eprintln!("warning: training aborted on non-finite {what}; kept best finite checkpoint");
    }
    // reload so metrics reflect exactly what the checkpoint stores
    let ckpt = load_checkpoint(&ckpt_dir)?;
    let report = test_metrics(&ckpt, &thn, &split)?;
    Ok(report)
}

fn run_grid(
    thn: &TemporalNetwork,
    split: &EvalSplit,
    base: &TrainConfig,
    grid: &GridSpec,
    jobs: usize,
) -> Result<Vec<GridResult>> {
    if jobs <= 1 {
        return clp_core::trainer::grid_search(thn, split, base, grid);
    }
    let cells = grid.expand(base)?;
    let mut rows: Vec<Option<GridResult>> = (0..cells.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<GridResult>>> =
        (0..cells.len()).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let (assignments, cfg) = &cells[i];
                let row = match train(thn, split, cfg) {
                    Ok(outcome) => {
                        let best = outcome
                            .log
                            .iter()
                            .find(|r| r.epoch == outcome.checkpoint.epoch)
                            .cloned();
                        GridResult {
                            assignments: assignments.clone(),
                            val_ap: best.as_ref().map(|r| r.val_ap),
                            val_auc: best.as_ref().map(|r| r.val_auc),
                            d: cfg.d,
                            heads: cfg.heads,
                            error: None,
                        }
                    }
                    Err(e) => GridResult {
                        assignments: assignments.clone(),
                        val_ap: None,
                        val_auc: None,
                        d: cfg.d,
                        heads: cfg.heads,
                        error: Some(e.to_string()),
                    },
                };
                *results[i].lock().unwrap() = Some(row);
            });
        }
    });
    for (slot, cell) in rows.iter_mut().zip(&results) {
        *slot = cell.lock().unwrap().take();
    }
    let mut rows: Vec<GridResult> = rows.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        let ka = a.val_ap.unwrap_or(f64::NEG_INFINITY);
        let kb = b.val_ap.unwrap_or(f64::NEG_INFINITY);
        kb.total_cmp(&ka).then(a.d.cmp(&b.d)).then(a.heads.cmp(&b.heads))
    });
    Ok(rows)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { edges, out, window, snapshots } => {
            let policy = match (window, snapshots) {
                (Some(w), None) => PartitionPolicy::Window(w),
                (None, Some(k)) => PartitionPolicy::Count(k),
                _ => {
                    return Err(ClpError::Config(
                        "exactly one of --window or --snapshots is required".into(),
                    ))
                }
            };
            let file = std::fs::File::open(&edges).map_err(|e| {
                ClpError::Config(format!("cannot open edge file {}: {e}", edges.display()))
            })?;
            let parsed = parse_edges(std::io::BufReader::new(file))?;
            let thn = partition_snapshots(&parsed, policy)?;
            clp_core::io::write_dataset(&thn, &out)?;
            println!(
                "ingested {} snapshots, {} nodes, {} edge types into {}",
                thn.snapshots.len(),
                thn.registry.len(),
                thn.edge_types.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train { config, data, out } => {
            let cfg = TrainConfig::load(&config)?;
            let report = run_training(&cfg, &data, &out)?;
            write_json(&report, Some(&out.join("metrics.json")))?;
            println!("test auc {:.4} ap {:.4}", report.auc, report.ap);
            Ok(())
        }
        Command::Eval { model, data, split, out } => {
            let ckpt = load_checkpoint(&model)?;
            let thn = load_clean_dataset(&data)?;
            let split = split_for(&thn, split.as_ref(), &ckpt.config)?;
            let report = test_metrics(&ckpt, &thn, &split)?;
            write_json(&report, out.as_ref())
        }
        Command::Ablate { config, data, variant, out } => {
            let mut cfg = TrainConfig::load(&config)?;
            cfg.ablation = variant.into();
            let mut report = run_training(&cfg, &data, &out)?;
            // echo the effective weights so the ablated lambda reads as zero
            let mut echo = cfg.clone();
            (echo.lambda1, echo.lambda2, echo.lambda3) = cfg.effective_lambdas();
            report.config = Some(echo);
            write_json(&report, Some(&out.join("metrics.json")))?;
            println!("test auc {:.4} ap {:.4}", report.auc, report.ap);
            Ok(())
        }
        Command::Grid { config, grid, data, jobs, out } => {
            let base = TrainConfig::load(&config)?;
            let spec = GridSpec::load(&grid)?;
            let thn = load_clean_dataset(&data)?;
            let split = make_eval_split(&thn, base.seed, base.neg_ratio)?;
            let rows = run_grid(&thn, &split, &base, &spec, jobs)?;
            write_json(&rows, out.as_ref())
        }
        Command::Gradcheck { config, nodes, snapshots } => {
            let cfg = TrainConfig::load(&config)?;
            let report = gradient_check(&cfg, nodes, snapshots)?;
            write_json(&report, None)
        }
        Command::Synth { nodes, types, snapshots, seed, out } => {
            let params = SynthParams::new(nodes, types, snapshots, seed);
            let thn = clp_core::synth::generate(&params)?;
            clp_core::io::write_dataset(&thn, &out)?;
            println!(
                "generated {} snapshots over {} nodes into {}",
                thn.snapshots.len(),
                thn.registry.len(),
                out.display()
            );
            Ok(())
        }
        Command::Curves { model, data, split, out } => {
            let ckpt = load_checkpoint(&model)?;
            let thn = load_clean_dataset(&data)?;
            let split = split_for(&thn, split.as_ref(), &ckpt.config)?;
            let data_ctx = ModelData::new(&thn, &ckpt.config)?;
            let embeddings = final_embeddings(&ckpt.store, &data_ctx, &ckpt.config)?;
            let scored = score_links(&embeddings, &split.test_pos, &split.test_neg)?;
            write_curves(&scored, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
