//! Run configuration: JSON file + CLI overrides over built-in defaults,
//! with strict unknown-key rejection and whole-config validation before
//! any work starts.
//!
//! Precedence, lowest to highest: built-in defaults (per model), the
//! model's golden preset when the golden flag is set, the config file,
//! CLI flags. Config files are flat JSON objects whose keys match the
//! hyperparameter names (`L1_flag`, `batch_size`, ...) plus run keys
//! (`dataset`, `model`, `out`, `golden`, `workers`, ...).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use crate::models::{ModelError, ModelKind, MODEL_NAMES};
use crate::sampler::{SamplerConfig, Strategy};
use crate::trainer::{HyperParams, LossKind, OptKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path} is not valid JSON: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config root must be a JSON object")]
    NotAnObject,
    #[error("unknown key '{key}'")]
    UnknownKey { key: String },
    #[error("key '{key}': expected {expected}")]
    TypeMismatch { key: String, expected: &'static str },
    #[error("key '{key}': {reason}")]
    OutOfRange { key: String, reason: String },
    #[error("missing required key '{key}'")]
    MissingKey { key: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Partial assignment collected from a config file or CLI flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub model: Option<String>,
    pub out: Option<PathBuf>,
    pub golden: Option<bool>,
    pub l1_flag: Option<bool>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub hidden_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub margin: Option<f64>,
    pub opt: Option<OptKind>,
    pub samp: Option<Strategy>,
    pub loss_kind: Option<LossKind>,
    pub lambda_reg: Option<f64>,
    pub seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub workers: Option<usize>,
    pub queue_capacity: Option<usize>,
    pub reject_train_positives: Option<bool>,
    pub hits_ks: Option<Vec<u32>>,
}

impl Overrides {
    /// Later values win; `other` is the higher-precedence layer.
    pub fn merged_with(mut self, other: &Overrides) -> Overrides {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            dataset, model, out, golden, l1_flag, batch_size, epochs, hidden_size,
            learning_rate, margin, opt, samp, loss_kind, lambda_reg, seed, eval_every,
            workers, queue_capacity, reject_train_positives, hits_ks
        );
        self
    }

    fn apply_hp(&self, hp: &mut HyperParams) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { hp.$f = v; } )* };
        }
        set!(
            l1_flag, batch_size, epochs, hidden_size, learning_rate, margin, opt, samp,
            loss_kind, lambda_reg, seed, eval_every
        );
    }
}

/// Evaluation settings for a run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub hits_ks: Vec<u32>,
    pub workers: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            hits_ks: vec![1, 3, 5, 10],
            workers: 1,
        }
    }
}

/// A fully resolved, validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub model: String,
    pub hp: HyperParams,
    pub sampler: SamplerConfig,
    pub eval: EvalSettings,
    pub out_dir: PathBuf,
    pub golden: bool,
}

impl RunConfig {
    pub fn model_kind(&self) -> Result<ModelKind, ModelError> {
        ModelKind::from_name(&self.model, self.hp.l1_flag)
    }
}

/// Parses a flat JSON config into overrides, rejecting unknown keys and
/// naming the key on any type or range problem.
pub fn parse_file(path: &Path) -> Result<Overrides, ConfigError> {
    let body = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    let value: Value = serde_json::from_str(&body).map_err(|e| ConfigError::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    parse_value(value)
}

fn parse_value(value: Value) -> Result<Overrides, ConfigError> {
    let Value::Object(map) = value else {
        return Err(ConfigError::NotAnObject);
    };
    // BTreeMap so the first reported unknown key is deterministic.
    let mut map: BTreeMap<String, Value> = map.into_iter().collect();
    let ov = Overrides {
        dataset: take_string(&mut map, "dataset")?.map(PathBuf::from),
        model: take_string(&mut map, "model")?,
        out: take_string(&mut map, "out")?.map(PathBuf::from),
        golden: take_bool(&mut map, "golden")?,
        l1_flag: take_bool(&mut map, "L1_flag")?,
        batch_size: take_usize(&mut map, "batch_size")?,
        epochs: take_usize(&mut map, "epochs")?,
        hidden_size: take_usize(&mut map, "hidden_size")?,
        learning_rate: take_f64(&mut map, "learning_rate")?,
        margin: take_f64(&mut map, "margin")?,
        opt: take_named(&mut map, "opt", "one of: sgd, adam", OptKind::from_name)?,
        samp: take_named(&mut map, "samp", "one of: uniform, bern", Strategy::from_name)?,
        loss_kind: take_named(
            &mut map,
            "loss_kind",
            "one of: margin, softplus",
            LossKind::from_name,
        )?,
        lambda_reg: take_f64(&mut map, "lambda_reg")?,
        seed: take_u64(&mut map, "seed")?,
        eval_every: take_usize(&mut map, "eval_every")?,
        workers: take_usize(&mut map, "workers")?,
        queue_capacity: take_usize(&mut map, "queue_capacity")?,
        reject_train_positives: take_bool(&mut map, "reject_train_positives")?,
        hits_ks: take_u32_list(&mut map, "hits_ks")?,
    };

    if let Some(key) = map.into_keys().next() {
        return Err(ConfigError::UnknownKey { key });
    }
    Ok(ov)
}

fn take_bool(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<bool>, ConfigError> {
    match map.remove(key) {
        None => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(b)),
        Some(_) => Err(ConfigError::TypeMismatch {
            key: key.into(),
            expected: "a boolean",
        }),
    }
}

fn take_string(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<String>, ConfigError> {
    match map.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(ConfigError::TypeMismatch {
            key: key.into(),
            expected: "a string",
        }),
    }
}

fn take_u64(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<u64>, ConfigError> {
    match map.remove(key) {
        None => Ok(None),
        Some(Value::Number(n)) if n.as_u64().is_some() => Ok(n.as_u64()),
        Some(_) => Err(ConfigError::TypeMismatch {
            key: key.into(),
            expected: "a non-negative integer",
        }),
    }
}

fn take_usize(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<usize>, ConfigError> {
    Ok(take_u64(map, key)?.map(|v| v as usize))
}

fn take_f64(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<f64>, ConfigError> {
    match map.remove(key) {
        None => Ok(None),
        Some(Value::Number(n)) if n.as_f64().is_some() => Ok(n.as_f64()),
        Some(_) => Err(ConfigError::TypeMismatch {
            key: key.into(),
            expected: "a number",
        }),
    }
}

fn take_named<T>(
    map: &mut BTreeMap<String, Value>,
    key: &str,
    expected: &'static str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>, ConfigError> {
    match take_string(map, key)? {
        None => Ok(None),
        Some(s) => parse(&s).map(Some).ok_or(ConfigError::TypeMismatch {
            key: key.into(),
            expected,
        }),
    }
}

fn take_u32_list(map: &mut BTreeMap<String, Value>, key: &str) -> Result<Option<Vec<u32>>, ConfigError> {
    match map.remove(key) {
        None => Ok(None),
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                let v = item.as_u64().ok_or(ConfigError::TypeMismatch {
                    key: key.into(),
                    expected: "an array of positive integers",
                })?;
                out.push(v as u32);
            }
            Ok(Some(out))
        }
        Some(_) => Err(ConfigError::TypeMismatch {
            key: key.into(),
            expected: "an array of positive integers",
        }),
    }
}

/// Shipped per-model golden presets; data files regenerable by the tuner.
const PRESETS: [(&str, &str); 8] = [
    ("transe", include_str!("../presets/transe.json")),
    ("transh", include_str!("../presets/transh.json")),
    ("transr", include_str!("../presets/transr.json")),
    ("transd", include_str!("../presets/transd.json")),
    ("rescal", include_str!("../presets/rescal.json")),
    ("distmult", include_str!("../presets/distmult.json")),
    ("complex", include_str!("../presets/complex.json")),
    ("kg2e", include_str!("../presets/kg2e.json")),
];

/// The shipped golden hyperparameters for a registered model kind.
pub fn golden_preset(model: &str) -> Result<HyperParams, ConfigError> {
    let body = PRESETS
        .iter()
        .find(|(name, _)| *name == model)
        .map(|(_, body)| *body)
        .ok_or_else(|| {
            ConfigError::Model(ModelError::UnknownModel {
                name: model.to_owned(),
            })
        })?;
    let value: Value = serde_json::from_str(body).expect("shipped preset is valid JSON");
    let ov = parse_value(value).expect("shipped preset uses known keys");
    let mut hp = HyperParams::defaults_for(model);
    ov.apply_hp(&mut hp);
    Ok(hp)
}

/// Resolves the hyperparameters for a model from the precedence chain.
pub fn resolve_hyperparams(
    model: &str,
    golden: bool,
    file: &Overrides,
    cli: &Overrides,
) -> Result<HyperParams, ConfigError> {
    ModelKind::from_name(model, true)?;
    let mut hp = if golden {
        golden_preset(model)?
    } else {
        HyperParams::defaults_for(model)
    };
    file.apply_hp(&mut hp);
    cli.apply_hp(&mut hp);
    Ok(hp)
}

/// Loads, merges, and validates a full run configuration.
/// `file` is optional; CLI overrides win over it.
pub fn load_config(file: Option<&Path>, cli: &Overrides) -> Result<RunConfig, ConfigError> {
    let file_ov = match file {
        Some(p) => parse_file(p)?,
        None => Overrides::default(),
    };
    let model = cli
        .model
        .clone()
        .or_else(|| file_ov.model.clone())
        .ok_or(ConfigError::MissingKey { key: "model" })?;
    let dataset_dir = cli
        .dataset
        .clone()
        .or_else(|| file_ov.dataset.clone())
        .ok_or(ConfigError::MissingKey { key: "dataset" })?;
    let golden = cli.golden.or(file_ov.golden).unwrap_or(false);
    let hp = resolve_hyperparams(&model, golden, &file_ov, cli)?;

    let out_dir = cli
        .out
        .clone()
        .or_else(|| file_ov.out.clone())
        .unwrap_or_else(|| PathBuf::from("kge_out"));
    let workers = cli.workers.or(file_ov.workers).unwrap_or(1);
    let queue_capacity = cli.queue_capacity.or(file_ov.queue_capacity).unwrap_or(8);
    let reject = cli
        .reject_train_positives
        .or(file_ov.reject_train_positives)
        .unwrap_or(false);
    let hits_ks = cli
        .hits_ks
        .clone()
        .or_else(|| file_ov.hits_ks.clone())
        .unwrap_or_else(|| vec![1, 3, 5, 10]);

    let cfg = RunConfig {
        sampler: hp.sampler_config(reject, workers, queue_capacity),
        eval: EvalSettings { hits_ks, workers },
        dataset_dir,
        model,
        hp,
        out_dir,
        golden,
    };
    validate(&cfg)?;
    Ok(cfg)
}

/// Range checks over the whole configuration; any config passing here
/// runs without configuration-related failures.
pub fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    fn range(cond: bool, key: &str, reason: &str) -> Result<(), ConfigError> {
        if cond {
            Ok(())
        } else {
            Err(ConfigError::OutOfRange {
                key: key.into(),
                reason: reason.into(),
            })
        }
    }
    if !MODEL_NAMES.contains(&cfg.model.as_str()) {
        return Err(ConfigError::Model(ModelError::UnknownModel {
            name: cfg.model.clone(),
        }));
    }
    let hp = &cfg.hp;
    range(hp.batch_size >= 1, "batch_size", "must be >= 1")?;
    range(hp.epochs >= 1, "epochs", "must be >= 1")?;
    range(hp.hidden_size >= 1, "hidden_size", "must be >= 1")?;
    range(
        hp.learning_rate.is_finite() && hp.learning_rate > 0.0 && hp.learning_rate <= 100.0,
        "learning_rate",
        "must be finite, positive, and <= 100",
    )?;
    range(
        hp.margin.is_finite() && hp.margin >= 0.0 && hp.margin <= 1e6,
        "margin",
        "must be finite, non-negative, and <= 1e6",
    )?;
    range(
        hp.lambda_reg.is_finite() && hp.lambda_reg >= 0.0 && hp.lambda_reg <= 1e3,
        "lambda_reg",
        "must be finite, non-negative, and <= 1e3",
    )?;
    range(cfg.sampler.workers >= 1, "workers", "must be >= 1")?;
    range(
        cfg.sampler.queue_capacity >= 1,
        "queue_capacity",
        "must be >= 1",
    )?;
    range(!cfg.eval.hits_ks.is_empty(), "hits_ks", "must be non-empty")?;
    range(
        cfg.eval.hits_ks.iter().all(|&k| k >= 1),
        "hits_ks",
        "entries must be >= 1",
    )?;
    range(
        cfg.eval.hits_ks.windows(2).all(|w| w[0] < w[1]),
        "hits_ks",
        "entries must be strictly increasing",
    )?;
    Ok(())
}
