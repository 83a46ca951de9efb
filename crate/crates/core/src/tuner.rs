//! Hyperparameter search with a tree-structured Parzen estimator.
//!
//! The first `N_STARTUP` suggestions are uniform draws over the space.
//! After that, finished trials are split at the 0.25 quantile of the
//! objective into good and bad sets, each dimension is modeled
//! independently (smoothed frequency counts for categoricals and grids,
//! adjacent-spacing kernel densities for continuous dimensions), 24
//! candidates are drawn from the good model, and the one maximizing the
//! good/bad density ratio wins. The objective is the filtered mean rank
//! on the valid split — lower is better.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{self, Split};
use crate::kg::KgDataset;
use crate::models::{ModelError, ModelKind};
use crate::sampler::Strategy;
use crate::trainer::{self, HyperParams, LossKind, OptKind, TrainError};

pub const N_STARTUP: usize = 10;
pub const GAMMA: f64 = 0.25;
pub const N_CANDIDATES: usize = 24;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("valid split is empty; tuning needs it for the objective")]
    EmptyValid,
    #[error("all {0} trials failed; no golden setting found")]
    AllTrialsFailed(usize),
    #[error("trials log {path}: {message}")]
    TrialsLog { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Per-key domains. Categorical and grid dimensions enumerate their
/// choices; `learning_rate` is log-uniform and `margin` uniform between
/// inclusive bounds (equal bounds collapse a dimension to a point).
#[derive(Clone, Debug)]
pub struct SearchSpace {
    /// Fills the hyperparameter fields the search does not cover
    /// (lambda_reg, seed, eval_every).
    pub base: HyperParams,
    pub l1_flag: Vec<bool>,
    pub opt: Vec<OptKind>,
    pub samp: Vec<Strategy>,
    pub loss_kind: Vec<LossKind>,
    pub batch_size: Vec<usize>,
    pub hidden_size: Vec<usize>,
    pub epochs: Vec<usize>,
    pub learning_rate: (f64, f64),
    pub margin: (f64, f64),
}

impl SearchSpace {
    /// A desk-scale default space for the given model.
    pub fn for_model(model: &str) -> Result<Self, ModelError> {
        ModelKind::from_name(model, true)?;
        Ok(Self {
            base: HyperParams::defaults_for(model),
            l1_flag: vec![false, true],
            opt: vec![OptKind::Sgd, OptKind::Adam],
            samp: vec![Strategy::Uniform, Strategy::Bern],
            loss_kind: vec![HyperParams::defaults_for(model).loss_kind],
            batch_size: vec![32, 64, 128, 256],
            hidden_size: vec![8, 16, 32, 64],
            epochs: vec![5, 10, 20],
            learning_rate: (1e-4, 0.5),
            margin: (0.1, 4.0),
        })
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        fn nonempty<T>(v: &[T], key: &str) -> Result<(), TuneError> {
            if v.is_empty() {
                Err(TuneError::InvalidSpace(format!("{key} domain is empty")))
            } else {
                Ok(())
            }
        }
        nonempty(&self.l1_flag, "L1_flag")?;
        nonempty(&self.opt, "opt")?;
        nonempty(&self.samp, "samp")?;
        nonempty(&self.loss_kind, "loss_kind")?;
        nonempty(&self.batch_size, "batch_size")?;
        nonempty(&self.hidden_size, "hidden_size")?;
        nonempty(&self.epochs, "epochs")?;
        for (key, (lo, hi), positive) in [
            ("learning_rate", self.learning_rate, true),
            ("margin", self.margin, false),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(TuneError::InvalidSpace(format!(
                    "{key} bounds must be finite with low <= high"
                )));
            }
            if positive && lo <= 0.0 {
                return Err(TuneError::InvalidSpace(format!("{key} must be positive")));
            }
        }
        Ok(())
    }

    fn dims(&self) -> Vec<Dim> {
        vec![
            Dim::Cat(self.l1_flag.len()),
            Dim::Cat(self.opt.len()),
            Dim::Cat(self.samp.len()),
            Dim::Cat(self.loss_kind.len()),
            Dim::Cat(self.batch_size.len()),
            Dim::Cat(self.hidden_size.len()),
            Dim::Cat(self.epochs.len()),
            Dim::Cont {
                lo: self.learning_rate.0.ln(),
                hi: self.learning_rate.1.ln(),
            },
            Dim::Cont {
                lo: self.margin.0,
                hi: self.margin.1,
            },
        ]
    }

    fn decode(&self, v: &[DimValue]) -> HyperParams {
        let cat = |i: usize| match v[i] {
            DimValue::Cat(c) => c,
            DimValue::Cont(_) => unreachable!("dimension {i} is categorical"),
        };
        let cont = |i: usize| match v[i] {
            DimValue::Cont(x) => x,
            DimValue::Cat(_) => unreachable!("dimension {i} is continuous"),
        };
        // Degenerate continuous domains return the bound exactly; the
        // log transform otherwise re-exponentiates and clamps.
        let learning_rate = if self.learning_rate.0 == self.learning_rate.1 {
            self.learning_rate.0
        } else {
            cont(7).exp().clamp(self.learning_rate.0, self.learning_rate.1)
        };
        let margin = if self.margin.0 == self.margin.1 {
            self.margin.0
        } else {
            cont(8).clamp(self.margin.0, self.margin.1)
        };
        HyperParams {
            l1_flag: self.l1_flag[cat(0)],
            opt: self.opt[cat(1)],
            samp: self.samp[cat(2)],
            loss_kind: self.loss_kind[cat(3)],
            batch_size: self.batch_size[cat(4)],
            hidden_size: self.hidden_size[cat(5)],
            epochs: self.epochs[cat(6)],
            learning_rate,
            margin,
            ..self.base.clone()
        }
    }

    /// Inverse of `decode`; `None` when the assignment lies outside this
    /// space (e.g. a resumed log written against different domains).
    fn encode(&self, hp: &HyperParams) -> Option<Vec<DimValue>> {
        fn pos<T: PartialEq>(dom: &[T], v: &T) -> Option<DimValue> {
            dom.iter().position(|x| x == v).map(DimValue::Cat)
        }
        let lr = hp.learning_rate.ln();
        let (llo, lhi) = (self.learning_rate.0.ln(), self.learning_rate.1.ln());
        if !(llo..=lhi).contains(&lr) || !(self.margin.0..=self.margin.1).contains(&hp.margin) {
            return None;
        }
        Some(vec![
            pos(&self.l1_flag, &hp.l1_flag)?,
            pos(&self.opt, &hp.opt)?,
            pos(&self.samp, &hp.samp)?,
            pos(&self.loss_kind, &hp.loss_kind)?,
            pos(&self.batch_size, &hp.batch_size)?,
            pos(&self.hidden_size, &hp.hidden_size)?,
            pos(&self.epochs, &hp.epochs)?,
            DimValue::Cont(lr),
            DimValue::Cont(hp.margin),
        ])
    }

    /// Uniform draw over every dimension.
    pub fn sample_random<R: Rng>(&self, rng: &mut R) -> HyperParams {
        let dims = self.dims();
        let v: Vec<DimValue> = dims.iter().map(|d| d.sample_uniform(rng)).collect();
        self.decode(&v)
    }
}

#[derive(Clone, Copy, Debug)]
enum Dim {
    Cat(usize),
    /// Bounds in transformed coordinates (ln for learning_rate).
    Cont { lo: f64, hi: f64 },
}

impl Dim {
    fn sample_uniform<R: Rng>(&self, rng: &mut R) -> DimValue {
        match *self {
            Dim::Cat(card) => DimValue::Cat(rng.random_range(0..card)),
            Dim::Cont { lo, hi } => {
                if lo == hi {
                    DimValue::Cont(lo)
                } else {
                    DimValue::Cont(lo + (hi - lo) * rng.random::<f64>())
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum DimValue {
    Cat(usize),
    Cont(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Done,
    Failed,
}

/// One evaluated assignment. Done trials have a finite objective.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trial {
    pub hp: HyperParams,
    pub objective: Option<f64>,
    pub status: TrialStatus,
    pub duration_secs: f64,
}

/// Density model for one dimension of one (good or bad) trial set.
enum DimModel {
    Cat { probs: Vec<f64> },
    Kde(Kde),
}

impl DimModel {
    fn fit(dim: Dim, values: &[DimValue]) -> Self {
        match dim {
            Dim::Cat(card) => {
                // Laplace-smoothed frequency counts.
                let mut counts = vec![1.0f64; card];
                for v in values {
                    if let DimValue::Cat(c) = v {
                        counts[*c] += 1.0;
                    }
                }
                let total: f64 = counts.iter().sum();
                DimModel::Cat {
                    probs: counts.into_iter().map(|c| c / total).collect(),
                }
            }
            Dim::Cont { lo, hi } => {
                let mut xs: Vec<f64> = values
                    .iter()
                    .filter_map(|v| match v {
                        DimValue::Cont(x) => Some(*x),
                        DimValue::Cat(_) => None,
                    })
                    .collect();
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                DimModel::Kde(Kde::fit(lo, hi, xs))
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> DimValue {
        match self {
            DimModel::Cat { probs } => {
                let mut u = rng.random::<f64>();
                for (i, p) in probs.iter().enumerate() {
                    if u < *p {
                        return DimValue::Cat(i);
                    }
                    u -= p;
                }
                DimValue::Cat(probs.len() - 1)
            }
            DimModel::Kde(k) => DimValue::Cont(k.sample(rng)),
        }
    }

    fn log_pdf(&self, v: DimValue) -> f64 {
        match (self, v) {
            (DimModel::Cat { probs }, DimValue::Cat(c)) => probs[c].ln(),
            (DimModel::Kde(k), DimValue::Cont(x)) => k.log_pdf(x),
            _ => unreachable!("dimension/value mismatch"),
        }
    }
}

/// Gaussian mixture over observed values; per-point bandwidth is the
/// larger adjacent gap, clamped to [width/100, width]. A wide kernel at
/// the domain midpoint acts as the usual Parzen prior so the sampler
/// keeps exploring after the observations concentrate. Samples are
/// clipped to the domain; densities use the untruncated kernels, which
/// is fine for ratio comparisons.
struct Kde {
    points: Vec<f64>,
    bws: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl Kde {
    fn fit(lo: f64, hi: f64, sorted: Vec<f64>) -> Self {
        let width = hi - lo;
        if width == 0.0 || sorted.is_empty() {
            return Self {
                points: vec![lo],
                bws: vec![1.0],
                lo,
                hi,
            };
        }
        let n = sorted.len();
        let floor = width / 100.0f64.min(n as f64 + 1.0);
        let mut bws = Vec::with_capacity(n + 1);
        for i in 0..n {
            let left = if i > 0 { sorted[i] - sorted[i - 1] } else { f64::NAN };
            let right = if i + 1 < n { sorted[i + 1] - sorted[i] } else { f64::NAN };
            let gap = match (left.is_nan(), right.is_nan()) {
                (true, true) => width / 2.0,
                (true, false) => right,
                (false, true) => left,
                (false, false) => left.max(right),
            };
            bws.push(gap.clamp(floor, width));
        }
        let mut points = sorted;
        points.push(lo + width / 2.0);
        bws.push(width);
        Self { points, bws, lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        let j = rng.random_range(0..self.points.len());
        let z: f64 = rng.sample(StandardNormal);
        (self.points[j] + self.bws[j] * z).clamp(self.lo, self.hi)
    }

    fn log_pdf(&self, x: f64) -> f64 {
        if self.lo == self.hi {
            return 0.0;
        }
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        let mut density = 0.0;
        for (p, bw) in self.points.iter().zip(&self.bws) {
            let z = (x - p) / bw;
            density += (-0.5 * z * z).exp() / (bw * norm);
        }
        (density / self.points.len() as f64).max(f64::MIN_POSITIVE).ln()
    }
}

/// Proposes the next assignment to evaluate.
pub fn suggest(space: &SearchSpace, history: &[Trial], rng: &mut ChaCha8Rng) -> HyperParams {
    let dims = space.dims();
    let mut done: Vec<(Vec<DimValue>, f64)> = history
        .iter()
        .filter(|t| t.status == TrialStatus::Done)
        .filter_map(|t| {
            let obj = t.objective.filter(|o| o.is_finite())?;
            Some((space.encode(&t.hp)?, obj))
        })
        .collect();
    if done.len() < N_STARTUP {
        return space.sample_random(rng);
    }

    done.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let n_good = ((done.len() as f64 * GAMMA).ceil() as usize).clamp(1, done.len() - 1);
    let (good, bad) = done.split_at(n_good);

    let good_models: Vec<DimModel> = dims
        .iter()
        .enumerate()
        .map(|(i, d)| DimModel::fit(*d, &good.iter().map(|(v, _)| v[i]).collect::<Vec<_>>()))
        .collect();
    let bad_models: Vec<DimModel> = dims
        .iter()
        .enumerate()
        .map(|(i, d)| DimModel::fit(*d, &bad.iter().map(|(v, _)| v[i]).collect::<Vec<_>>()))
        .collect();

    let mut best: Option<(f64, Vec<DimValue>)> = None;
    for _ in 0..N_CANDIDATES {
        let candidate: Vec<DimValue> = good_models.iter().map(|m| m.sample(rng)).collect();
        let ratio: f64 = candidate
            .iter()
            .enumerate()
            .map(|(i, &v)| good_models[i].log_pdf(v) - bad_models[i].log_pdf(v))
            .sum();
        if best.as_ref().is_none_or(|(r, _)| ratio > *r) {
            best = Some((ratio, candidate));
        }
    }
    space.decode(&best.expect("at least one candidate").1)
}

/// Runs `budget` sequential trials against an arbitrary objective
/// (lower is better), reusing `prior` trials as history. `on_trial` fires
/// after each new trial, e.g. to persist it.
pub fn tune_with<F>(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    prior: Vec<Trial>,
    mut objective: F,
    mut on_trial: impl FnMut(&Trial),
) -> Result<(Trial, Vec<Trial>), TuneError>
where
    F: FnMut(&HyperParams) -> Result<f64, TrainError>,
{
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7065_7374); // domain tag: tuning
    let mut history = prior;
    while history.len() < budget {
        let hp = suggest(space, &history, &mut rng);
        let started = Instant::now();
        let trial = match objective(&hp) {
            Ok(obj) if obj.is_finite() => Trial {
                hp,
                objective: Some(obj),
                status: TrialStatus::Done,
                duration_secs: started.elapsed().as_secs_f64(),
            },
            Ok(_) | Err(TrainError::NonFiniteLoss { .. }) => Trial {
                hp,
                objective: None,
                status: TrialStatus::Failed,
                duration_secs: started.elapsed().as_secs_f64(),
            },
            Err(e) => return Err(e.into()),
        };
        on_trial(&trial);
        history.push(trial);
    }
    let best = history
        .iter()
        .filter(|t| t.status == TrialStatus::Done)
        .min_by(|a, b| a.objective.partial_cmp(&b.objective).unwrap())
        .cloned()
        .ok_or(TuneError::AllTrialsFailed(history.len()))?;
    Ok((best, history))
}

/// Options for a real tuning run.
#[derive(Clone, Debug)]
pub struct TuneOptions {
    pub seed: u64,
    pub workers: usize,
    pub queue_capacity: usize,
    pub reject_train_positives: bool,
    /// Line-delimited trial log; loaded on start (resume) and appended
    /// after every trial.
    pub trials_path: Option<PathBuf>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            seed: 13,
            workers: 1,
            queue_capacity: 8,
            reject_train_positives: false,
            trials_path: None,
        }
    }
}

/// Trains one model per trial and scores it by filtered mean rank on the
/// valid split. Returns the best done trial and the full history.
pub fn tune(
    dataset: Arc<KgDataset>,
    model: &str,
    space: &SearchSpace,
    budget: usize,
    opts: &TuneOptions,
) -> Result<(Trial, Vec<Trial>), TuneError> {
    ModelKind::from_name(model, true)?;
    if dataset.valid.is_empty() {
        return Err(TuneError::EmptyValid);
    }
    let prior = match &opts.trials_path {
        Some(p) if p.exists() => load_trials(p)?,
        _ => Vec::new(),
    };
    let mut log = match &opts.trials_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(|e| TuneError::TrialsLog {
                        path: p.clone(),
                        message: e.to_string(),
                    })?;
                }
            }
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| TuneError::TrialsLog {
                        path: p.clone(),
                        message: e.to_string(),
                    })?,
            )
        }
        None => None,
    };

    let model_name = model.to_owned();
    let data = dataset.clone();
    let o = opts.clone();
    let objective = move |hp: &HyperParams| -> Result<f64, TrainError> {
        let kind = ModelKind::from_name(&model_name, hp.l1_flag)?;
        let cfg = hp.sampler_config(o.reject_train_positives, o.workers, o.queue_capacity);
        let (params, _) = trainer::train(data.clone(), kind, hp, &cfg)?;
        let report = evaluator::evaluate(&params, &data, Split::Valid, &[1, 3, 5, 10], o.workers)
            .expect("valid split checked nonempty");
        Ok(report.mean_rank_filtered)
    };

    tune_with(space, budget, opts.seed, prior, objective, |trial| {
        if let Some(f) = log.as_mut() {
            let line = serde_json::to_string(trial).expect("trial serializes");
            let _ = writeln!(f, "{line}");
            let _ = f.flush();
        }
    })
}

fn load_trials(path: &Path) -> Result<Vec<Trial>, TuneError> {
    let body = fs::read_to_string(path).map_err(|e| TuneError::TrialsLog {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    body.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| TuneError::TrialsLog {
                path: path.to_owned(),
                message: format!("bad trial record: {e}"),
            })
        })
        .collect()
}

/// Golden-setting echo in key-sorted `{'key': value}` form.
pub fn format_golden(hp: &HyperParams) -> String {
    let py_bool = |b: bool| if b { "True" } else { "False" };
    format!(
        "{{'L1_flag': {}, 'batch_size': {}, 'epochs': {}, 'hidden_size': {}, 'learning_rate': {}, 'margin': {}, 'opt': '{}', 'samp': '{}'}}",
        py_bool(hp.l1_flag),
        hp.batch_size,
        hp.epochs,
        hp.hidden_size,
        hp.learning_rate,
        hp.margin,
        hp.opt.name(),
        hp.samp.name(),
    )
}
