//! Experiment configuration files.
//!
//! Configs are TOML documents with dotted sections (`plant.kind`,
//! `train.lr0`, ...). Values given with `--set key=value` are merged into
//! the document before it is validated, using the same dotted keys.

use std::path::{Path, PathBuf};

use analog_bptt::gradients::Block;
use analog_bptt::models::{OpticalParams, TubeParams};
use analog_bptt::tasks::Task;
use analog_bptt::training::TrainConfig;
use analog_bptt::GradCheckConfig;
use serde::Deserialize;
use toml::{Table, Value};

/// Invalid configuration; reported as a usage error.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub plant: PlantConfig,
    pub task: Task,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    /// Speaker-tube-microphone loop. The plant runs in sample-period time
    /// units (`dt = 1`); the log converts back with the tube sample rate.
    Acoustic {
        period: usize,
        #[serde(default)]
        tube: TubeParams,
        #[serde(default)]
        snr_db: Option<f64>,
    },
    /// Delay-coupled optical network; the mixing matrix is trained when
    /// `w_aa` is listed in `train.trainable`.
    Optical {
        period: usize,
        #[serde(default)]
        optical: OpticalParams,
        /// Standard deviation of the initial mixing matrix entries.
        #[serde(default = "default_weight_std")]
        init_weight_std: f64,
    },
    /// A plant read from a model file (same format as `system.txt`).
    Custom { period: usize, path: PathBuf },
}

fn default_weight_std() -> f64 {
    0.1
}

impl PlantConfig {
    pub fn period(&self) -> usize {
        match self {
            PlantConfig::Acoustic { period, .. }
            | PlantConfig::Optical { period, .. }
            | PlantConfig::Custom { period, .. } => *period,
        }
    }
}

/// Training block of a config file. `iterations`, `batch_len` and `lr0`
/// are required; the rest default to the values of [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_len: usize,
    pub lr0: f64,
    #[serde(default)]
    pub init_std_input_mask: Option<f64>,
    #[serde(default)]
    pub init_std_output_mask: Option<f64>,
    #[serde(default)]
    pub trainable: Option<Vec<String>>,
    #[serde(default)]
    pub noise_repeats: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Fresh instances scored after training for the summary metric.
    #[serde(default = "default_eval_instances")]
    pub instances: usize,
}

fn default_eval_instances() -> usize {
    1000
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            instances: default_eval_instances(),
        }
    }
}

impl TrainSection {
    /// Full training configuration; plant-specific settings (kernel lags,
    /// weight bound, time unit) are filled in by the experiment builder.
    pub fn to_train_config(&self, seed: u64) -> Result<TrainConfig> {
        let base = TrainConfig::default();
        let trainable = match &self.trainable {
            Some(names) => names
                .iter()
                .map(|n| Block::parse(n).map_err(|e| ConfigError(format!("train.trainable: {e}"))))
                .collect::<Result<Vec<_>>>()?,
            None => base.trainable.clone(),
        };
        let cfg = TrainConfig {
            iterations: self.iterations,
            batch_len: self.batch_len,
            lr0: self.lr0,
            init_std_input_mask: self.init_std_input_mask.unwrap_or(base.init_std_input_mask),
            init_std_output_mask: self.init_std_output_mask.unwrap_or(base.init_std_output_mask),
            trainable,
            noise_repeats: self.noise_repeats.unwrap_or(base.noise_repeats),
            seed,
            ..base
        };
        cfg.validate().map_err(|e| ConfigError(format!("train: {e}")))?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let period = self.plant.period();
        if period == 0 {
            return Err(ConfigError("plant.period must be positive".into()));
        }
        match &self.plant {
            PlantConfig::Acoustic { tube, snr_db, .. } => {
                tube.validate().map_err(|e| ConfigError(format!("plant.tube: {e}")))?;
                if let Some(s) = snr_db {
                    if !s.is_finite() {
                        return Err(ConfigError("plant.snr_db must be finite".into()));
                    }
                }
            }
            PlantConfig::Optical {
                optical,
                init_weight_std,
                ..
            } => {
                optical
                    .validate()
                    .map_err(|e| ConfigError(format!("plant.optical: {e}")))?;
                if !(*init_weight_std >= 0.0 && init_weight_std.is_finite()) {
                    return Err(ConfigError("plant.init_weight_std must be non-negative".into()));
                }
            }
            PlantConfig::Custom { path, .. } => {
                if !path.exists() {
                    return Err(ConfigError(format!("plant.path: {} does not exist", path.display())));
                }
            }
        }
        if let Task::SyntheticLabels(t) = &self.task {
            if t.n_classes < 2 || t.input_dim == 0 || t.window == 0 || !(0.0..1.0).contains(&t.smoothness) {
                return Err(ConfigError(
                    "task: need n_classes >= 2, input_dim >= 1, window >= 1, smoothness in [0, 1)".into(),
                ));
            }
        }
        if self.eval.instances < 3 {
            return Err(ConfigError("eval.instances must be at least 3".into()));
        }
        self.train.to_train_config(self.seed)?;
        Ok(())
    }
}

/// Parses `key=value` with a dotted key and a TOML value. Bare words that
/// are not valid TOML are taken as strings.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override {spec:?} is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(ConfigError(format!("override key {key:?} is malformed")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((path, value))
}

pub fn apply_override(doc: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = doc;
    for p in parents {
        let entry = table.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override: `{p}` is not a section")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Parses a TOML document with overrides applied. Relative paths inside
/// the config resolve against `base_dir`.
pub fn parse_document(text: &str, overrides: &[String]) -> Result<Table> {
    let mut doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError(format!("invalid config: {e}")))?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut doc, &path, value)?;
    }
    Ok(doc)
}

fn deserialize<T: serde::de::DeserializeOwned>(doc: Table, source: &str) -> Result<T> {
    // Round trip through text so that errors carry line and column.
    let text = toml::to_string(&doc).map_err(|e| ConfigError(format!("{source}: {e}")))?;
    toml::from_str(&text).map_err(|e| ConfigError(format!("{source}: {e}")))
}

pub fn load_experiment(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    experiment_from_str(&text, overrides, path.parent(), &path.display().to_string())
}

pub fn experiment_from_str(
    text: &str,
    overrides: &[String],
    base_dir: Option<&Path>,
    source: &str,
) -> Result<ExperimentConfig> {
    let doc = parse_document(text, overrides)?;
    let mut cfg: ExperimentConfig = if overrides.is_empty() {
        toml::from_str(text).map_err(|e| ConfigError(format!("{source}: {e}")))?
    } else {
        deserialize(doc, source)?
    };
    if let (PlantConfig::Custom { path, .. }, Some(base)) = (&mut cfg.plant, base_dir) {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
    cfg.validate().map_err(|e| ConfigError(format!("{source}: {e}")))?;
    Ok(cfg)
}

/// Gradient-check configs hold the toy-system fields at top level.
pub fn load_gradcheck(path: Option<&Path>, overrides: &[String]) -> Result<GradCheckConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let source = path.map_or("gradcheck defaults".to_string(), |p| p.display().to_string());
    let doc = parse_document(&text, overrides)?;
    let cfg: GradCheckConfig = deserialize(doc, &source)?;
    cfg.nonlinearity
        .validate()
        .map_err(|e| ConfigError(format!("{source}: nonlinearity: {e}")))?;
    if cfg.n_inputs == 0 || cfg.n_states == 0 || cfg.n_outputs == 0 || cfg.kernel_len == 0 {
        return Err(ConfigError(format!(
            "{source}: channel counts and kernel_len must be positive"
        )));
    }
    if cfg.n_states > 5 || cfg.instances * cfg.period > 200 {
        return Err(ConfigError(format!(
            "{source}: toy systems are limited to 5 states and 200 samples"
        )));
    }
    Ok(cfg)
}
