//! Training configuration: defaults, flat `key = value` files, and grid
//! specifications expanded as a cross product.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ClpError, Result};

macro_rules! str_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl FromStr for $name {
            type Err = ClpError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(ClpError::Config(format!(
                        "invalid value `{other}` (expected one of: {})",
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($name::$variant => $text),+
                })
            }
        }
    };
}

str_enum!(SupervisionSource {
    NextSnapshotTrainSplit => "next_snapshot_train_split",
    LastSnapshot => "last_snapshot",
});

str_enum!(TimeLossSign {
    Standard => "standard",
    Literal => "literal",
});

str_enum!(ContrastiveComposition {
    Subtractive => "subtractive",
    Additive => "additive",
});

str_enum!(InitScheme {
    WarmStart => "warm_start",
    Random => "random",
});

str_enum!(Ablation {
    None => "none",
    NoNode => "no_node",
    NoEdge => "no_edge",
    NoTime => "no_time",
});

/// Snapshot partition policy as configured (at most one of the two keys).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartitionSetting {
    Window(u64),
    Snapshots(usize),
}

/// Full training configuration with every tunable knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    pub heads: usize,
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub neg_ratio: usize,
    pub partition: Option<PartitionSetting>,
    pub share_params_across_time: bool,
    pub supervision_source: SupervisionSource,
    pub time_loss_sign: TimeLossSign,
    pub literal_eq13: bool,
    pub contrastive_composition: ContrastiveComposition,
    pub ablation: Ablation,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 32,
            heads: 4,
            tau: 0.1,
            lambda1: 1e-3,
            lambda2: 1e-3,
            lambda3: 1e-3,
            lr: 1e-4,
            batch_size: 1024,
            patience: 5,
            max_epochs: 200,
            seed: 0,
            neg_ratio: 1,
            partition: None,
            share_params_across_time: false,
            supervision_source: SupervisionSource::NextSnapshotTrainSplit,
            time_loss_sign: TimeLossSign::Standard,
            literal_eq13: false,
            contrastive_composition: ContrastiveComposition::Subtractive,
            ablation: Ablation::None,
            init: InitScheme::WarmStart,
        }
    }
}

/// (key, default rendering, description) for --help output.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    ("d", "32", "embedding dimension"),
    ("heads", "4", "attention heads per node-level layer"),
    ("tau", "0.1", "contrastive temperature"),
    ("lambda1", "1e-3", "node-level loss weight"),
    ("lambda2", "1e-3", "edge-level loss weight"),
    ("lambda3", "1e-3", "time-level loss weight"),
    ("lr", "1e-4", "Adam learning rate"),
    ("batch_size", "1024", "supervision triples per batch"),
    ("patience", "5", "early-stop patience (epochs without val AP gain)"),
    ("max_epochs", "200", "hard epoch cap"),
    ("seed", "0", "master RNG seed"),
    ("neg_ratio", "1", "negatives per positive in eval splits"),
    ("window", "unset", "snapshot window length in time units (exclusive with `snapshots`)"),
    ("snapshots", "unset", "snapshot count (exclusive with `window`)"),
    ("share_params_across_time", "false", "one parameter set shared by all snapshots"),
    (
        "supervision_source",
        "next_snapshot_train_split",
        "where training positives come from (next_snapshot_train_split | last_snapshot)",
    ),
    ("time_loss_sign", "standard", "time-level loss sign convention (standard | literal)"),
    ("literal_eq13", "false", "score negatives with the un-flipped logistic term"),
    (
        "contrastive_composition",
        "subtractive",
        "node/edge loss composition (subtractive | additive)",
    ),
    ("ablation", "none", "loss ablation variant (none | no_node | no_edge | no_time)"),
    (
        "init",
        "warm_start",
        "parameter initialization (warm_start: adjacency-reconstruction pre-fit | random)",
    ),
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| ClpError::Config(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ClpError::Config(format!("key `{key}`: expected a boolean, got `{value}`"))),
    }
}

impl TrainConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "lambda1" => self.lambda1 = parse_num(key, value)?,
            "lambda2" => self.lambda2 = parse_num(key, value)?,
            "lambda3" => self.lambda3 = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "max_epochs" => self.max_epochs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "neg_ratio" => self.neg_ratio = parse_num(key, value)?,
            "window" => self.partition = Some(PartitionSetting::Window(parse_num(key, value)?)),
            "snapshots" => {
                self.partition = Some(PartitionSetting::Snapshots(parse_num(key, value)?))
            }
            "share_params_across_time" => self.share_params_across_time = parse_bool(key, value)?,
            "supervision_source" => self.supervision_source = value.parse()?,
            "time_loss_sign" => self.time_loss_sign = value.parse()?,
            "literal_eq13" => self.literal_eq13 = parse_bool(key, value)?,
            "contrastive_composition" => self.contrastive_composition = value.parse()?,
            "ablation" => self.ablation = value.parse()?,
            "init" => self.init = value.parse()?,
            other => return Err(ClpError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a flat config body; `#` starts a comment, blank lines ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (key, value) in assignments(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClpError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("lr", self.lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ClpError::Config(format!("{name} must be positive and finite")));
            }
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(ClpError::Config(format!("{name} must be non-negative and finite")));
            }
        }
        for (name, v) in [
            ("d", self.d),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("neg_ratio", self.neg_ratio),
        ] {
            if v == 0 {
                return Err(ClpError::Config(format!("{name} must be at least 1")));
            }
        }
        match self.partition {
            Some(PartitionSetting::Window(0)) => {
                return Err(ClpError::Config("window must be positive".into()))
            }
            Some(PartitionSetting::Snapshots(k)) if k < 2 => {
                return Err(ClpError::Config("snapshots must be at least 2".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Loss weights after applying the ablation flag.
    pub fn effective_lambdas(&self) -> (f64, f64, f64) {
        match self.ablation {
            Ablation::None => (self.lambda1, self.lambda2, self.lambda3),
            Ablation::NoNode => (0.0, self.lambda2, self.lambda3),
            Ablation::NoEdge => (self.lambda1, 0.0, self.lambda3),
            Ablation::NoTime => (self.lambda1, self.lambda2, 0.0),
        }
    }
}

fn assignments(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ClpError::Config(format!("line {}: expected `key = value`", no + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// A grid specification: per key, the list of values to sweep.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub axes: BTreeMap<String, Vec<String>>,
}

impl GridSpec {
    /// Parse `key = v1, v2, ...` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes = BTreeMap::new();
        for (key, value) in assignments(text)? {
            let values: Vec<String> =
                value.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(ClpError::Config(format!("grid key `{key}` lists no values")));
            }
            // reject unknown keys up front by probing a scratch config
            TrainConfig::default().set(&key, &values[0])?;
            if axes.insert(key.clone(), values).is_some() {
                return Err(ClpError::Config(format!("grid key `{key}` listed twice")));
            }
        }
        Ok(GridSpec { axes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClpError::Config(format!("cannot read grid {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Cross-product expansion over a base config, with the assignment list
    /// that produced each cell.
    pub fn expand(&self, base: &TrainConfig) -> Result<Vec<(Vec<(String, String)>, TrainConfig)>> {
        let mut cells: Vec<(Vec<(String, String)>, TrainConfig)> = vec![(Vec::new(), base.clone())];
        for (key, values) in &self.axes {
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for (assigns, cfg) in &cells {
                for v in values {
                    let mut cfg = cfg.clone();
                    cfg.set(key, v)?;
                    let mut assigns = assigns.clone();
                    assigns.push((key.clone(), v.clone()));
                    next.push((assigns, cfg));
                }
            }
            cells = next;
        }
        for (_, cfg) in &cells {
            cfg.validate()?;
        }
        Ok(cells)
    }
}
