//! Run configuration: a small `key = value` format shared by the CLI, the
//! training loop and checkpoint headers.
//!
//! Parsing is strict — an unknown key is an error that lists every valid key,
//! a duplicate key is an error, and the resolved configuration echoes back to
//! text (`to_config_string`) such that re-parsing reproduces it exactly. That
//! round trip is what lets a checkpoint header double as a config file.

use thiserror::Error;

/// Everything a run needs to know, fully resolved (no optional fields).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    pub data_dir: String,
    /// Declared resolution of the input meshes; pool targets are validated
    /// against it (each step must remove a multiple of three edges).
    pub input_edges: usize,
    pub pool_targets: Vec<usize>,
    pub conv_channels: Vec<usize>,
    /// Fully-connected widths after global pooling (classification only);
    /// the last entry must equal `num_classes`.
    pub fc_dims: Vec<usize>,
    pub num_classes: usize,
    pub feature_mode: FeatureMode,
    pub pooling: PoolMode,
    pub norm_groups: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threads: usize,
    pub aniso_sigma: f64,
    pub slide_fraction: f64,
    pub flip_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Segmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Five similarity-invariant channels per edge.
    Invariant,
    /// Raw edge midpoint coordinates (three channels, not invariant).
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    /// Collapse the lowest feature-norm edges first.
    ByNorm,
    /// Random collapse priorities (ablation baseline).
    Random,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Classification => "classification",
            TaskKind::Segmentation => "segmentation",
        })
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Invariant => "invariant",
            FeatureMode::Midpoint => "midpoint",
        })
    }
}

impl std::fmt::Display for PoolMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolMode::ByNorm => "norm",
            PoolMode::Random => "random",
        })
    }
}

/// The closed set of recognised keys, in canonical echo order.
pub const CONFIG_KEYS: [&str; 18] = [
    "task",
    "data_dir",
    "input_edges",
    "pool_targets",
    "conv_channels",
    "fc_dims",
    "num_classes",
    "feature_mode",
    "pooling",
    "norm_groups",
    "lr",
    "epochs",
    "batch_size",
    "seed",
    "threads",
    "aniso_sigma",
    "slide_fraction",
    "flip_fraction",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("unknown key {key:?}; valid keys: {}", CONFIG_KEYS.join(", "))]
    UnknownKey { key: String },
    #[error("duplicate key {key:?}")]
    DuplicateKey { key: String },
    #[error("missing required key {key:?}")]
    MissingKey { key: &'static str },
    #[error("key {key:?}: cannot parse {value:?} as {want}")]
    BadValue {
        key: &'static str,
        value: String,
        want: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    /// Task-specific defaults; `num_classes` has none and must come from the
    /// parsed text (or be set by the caller before `validate`).
    pub fn defaults(task: TaskKind, num_classes: usize) -> RunConfig {
        let classification = task == TaskKind::Classification;
        RunConfig {
            task,
            data_dir: String::new(),
            input_edges: if classification { 750 } else { 2250 },
            pool_targets: if classification {
                vec![600, 450, 300, 279]
            } else {
                vec![1200, 900, 300, 279]
            },
            conv_channels: vec![32, 64, 128, 256],
            fc_dims: if classification {
                vec![100, num_classes]
            } else {
                Vec::new()
            },
            num_classes,
            feature_mode: FeatureMode::Invariant,
            pooling: PoolMode::ByNorm,
            norm_groups: 16,
            lr: 2e-4,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            threads: 1,
            aniso_sigma: 0.1,
            slide_fraction: 0.2,
            flip_fraction: if classification { 0.05 } else { 0.0 },
        }
    }

    /// Parses `key = value` text (blank lines and `#` comments allowed),
    /// fills unset keys from the task defaults, and validates.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut seen: Vec<(&str, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim().to_string();
            let Some(canon) = CONFIG_KEYS.iter().find(|&&k| k == key) else {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                });
            };
            if seen.iter().any(|(k, _)| k == canon) {
                return Err(ConfigError::DuplicateKey {
                    key: key.to_string(),
                });
            }
            seen.push((canon, value));
        }
        let get = |key: &str| seen.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str());

        let task = match get("task") {
            None => return Err(ConfigError::MissingKey { key: "task" }),
            Some("classification") => TaskKind::Classification,
            Some("segmentation") => TaskKind::Segmentation,
            Some(other) => {
                return Err(ConfigError::BadValue {
                    key: "task",
                    value: other.to_string(),
                    want: "classification | segmentation",
                })
            }
        };
        let num_classes = match get("num_classes") {
            None => return Err(ConfigError::MissingKey { key: "num_classes" }),
            Some(v) => parse_one::<usize>("num_classes", v, "a positive integer")?,
        };
        let mut cfg = RunConfig::defaults(task, num_classes);

        if let Some(v) = get("data_dir") {
            cfg.data_dir = v.to_string();
        }
        if let Some(v) = get("input_edges") {
            cfg.input_edges = parse_one("input_edges", v, "a positive integer")?;
        }
        if let Some(v) = get("pool_targets") {
            cfg.pool_targets = parse_list("pool_targets", v)?;
        }
        if let Some(v) = get("conv_channels") {
            cfg.conv_channels = parse_list("conv_channels", v)?;
        }
        if let Some(v) = get("fc_dims") {
            cfg.fc_dims = parse_list("fc_dims", v)?;
        }
        if let Some(v) = get("feature_mode") {
            cfg.feature_mode = match v {
                "invariant" => FeatureMode::Invariant,
                "midpoint" => FeatureMode::Midpoint,
                other => {
                    return Err(ConfigError::BadValue {
                        key: "feature_mode",
                        value: other.to_string(),
                        want: "invariant | midpoint",
                    })
                }
            };
        }
        if let Some(v) = get("pooling") {
            cfg.pooling = match v {
                "norm" => PoolMode::ByNorm,
                "random" => PoolMode::Random,
                other => {
                    return Err(ConfigError::BadValue {
                        key: "pooling",
                        value: other.to_string(),
                        want: "norm | random",
                    })
                }
            };
        }
        if let Some(v) = get("norm_groups") {
            cfg.norm_groups = parse_one("norm_groups", v, "a positive integer")?;
        }
        if let Some(v) = get("lr") {
            cfg.lr = parse_one("lr", v, "a number")?;
        }
        if let Some(v) = get("epochs") {
            cfg.epochs = parse_one("epochs", v, "an integer")?;
        }
        if let Some(v) = get("batch_size") {
            cfg.batch_size = parse_one("batch_size", v, "a positive integer")?;
        }
        if let Some(v) = get("seed") {
            cfg.seed = parse_one("seed", v, "an integer")?;
        }
        if let Some(v) = get("threads") {
            cfg.threads = parse_one("threads", v, "a positive integer")?;
        }
        if let Some(v) = get("aniso_sigma") {
            cfg.aniso_sigma = parse_one("aniso_sigma", v, "a number")?;
        }
        if let Some(v) = get("slide_fraction") {
            cfg.slide_fraction = parse_one("slide_fraction", v, "a number")?;
        }
        if let Some(v) = get("flip_fraction") {
            cfg.flip_fraction = parse_one("flip_fraction", v, "a number")?;
        }

        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks beyond per-value parsing.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.pool_targets.is_empty() {
            return fail("pool_targets must not be empty".into());
        }
        if self.pool_targets.len() != self.conv_channels.len() {
            return fail(format!(
                "pool_targets ({}) and conv_channels ({}) must have the same length",
                self.pool_targets.len(),
                self.conv_channels.len()
            ));
        }
        let mut prev = self.input_edges;
        for &t in &self.pool_targets {
            if t >= prev {
                return fail(format!(
                    "pool targets must strictly decrease from input_edges; {t} does not decrease from {prev}"
                ));
            }
            if (prev - t) % 3 != 0 {
                return fail(format!(
                    "pool target {t} is unreachable from {prev}: each collapse removes exactly 3 edges, so the difference must be a multiple of 3"
                ));
            }
            prev = t;
        }
        if prev < 9 {
            return fail(format!("final pool target {prev} is too small"));
        }
        if self.task == TaskKind::Classification {
            if self.fc_dims.is_empty() {
                return fail("fc_dims must not be empty for classification".into());
            }
            if *self.fc_dims.last().unwrap() != self.num_classes {
                return fail(format!(
                    "the last fc dim ({}) must equal num_classes ({})",
                    self.fc_dims.last().unwrap(),
                    self.num_classes
                ));
            }
        }
        if self.task == TaskKind::Segmentation && self.flip_fraction != 0.0 {
            return fail(
                "flip_fraction must be 0 for segmentation: edge labels are bound to edge \
                 identity, which flips change"
                    .into(),
            );
        }
        if self.conv_channels.iter().any(|&c| c == 0) {
            return fail("conv_channels entries must be positive".into());
        }
        if self.norm_groups == 0 {
            return fail("norm_groups must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr must be a finite non-negative number, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.threads != 1 {
            return fail(format!(
                "threads = {} is not supported; this build is single-threaded (threads = 1)",
                self.threads
            ));
        }
        for (name, v) in [
            ("aniso_sigma", self.aniso_sigma),
            ("slide_fraction", self.slide_fraction),
            ("flip_fraction", self.flip_fraction),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("slide_fraction", self.slide_fraction),
            ("flip_fraction", self.flip_fraction),
        ] {
            if v > 1.0 {
                return fail(format!("{name} must be at most 1, got {v}"));
            }
        }
        Ok(())
    }

    /// Echoes every key in canonical order; `parse` of the result returns an
    /// equal config. Stored verbatim in checkpoint headers.
    pub fn to_config_string(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = match key {
                "task" => self.task.to_string(),
                "data_dir" => self.data_dir.clone(),
                "input_edges" => self.input_edges.to_string(),
                "pool_targets" => list(&self.pool_targets),
                "conv_channels" => list(&self.conv_channels),
                "fc_dims" => list(&self.fc_dims),
                "num_classes" => self.num_classes.to_string(),
                "feature_mode" => self.feature_mode.to_string(),
                "pooling" => self.pooling.to_string(),
                "norm_groups" => self.norm_groups.to_string(),
                "lr" => self.lr.to_string(),
                "epochs" => self.epochs.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "seed" => self.seed.to_string(),
                "threads" => self.threads.to_string(),
                "aniso_sigma" => self.aniso_sigma.to_string(),
                "slide_fraction" => self.slide_fraction.to_string(),
                "flip_fraction" => self.flip_fraction.to_string(),
                _ => unreachable!(),
            };
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Channels of the feature extractor this config selects.
    pub fn input_channels(&self) -> usize {
        match self.feature_mode {
            FeatureMode::Invariant => 5,
            FeatureMode::Midpoint => 3,
        }
    }

    /// Meshes whose edge count falls below this cannot reach the first pool
    /// target's stop band and are rejected.
    pub fn min_mesh_edges(&self) -> usize {
        self.pool_targets[0].saturating_sub(2)
    }
}

fn parse_one<T: std::str::FromStr>(
    key: &'static str,
    value: &str,
    want: &'static str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key,
        value: value.to_string(),
        want,
    })
}

fn parse_list(key: &'static str, value: &str) -> Result<Vec<usize>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| parse_one(key, part.trim(), "a comma-separated list of integers"))
        .collect()
}

/// The largest group count `≤ requested` that divides `channels`; GroupNorm
/// requires equal-sized groups.
pub fn norm_groups_for(channels: usize, requested: usize) -> usize {
    (1..=requested.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}
