//! Training loop: margin or softplus loss, sparse SGD/Adam updates, and
//! per-model constraint projection after every batch.
//!
//! The consumer thread owns the parameters; sampler workers feed it
//! through the bounded queue. With `workers = 1` and a fixed seed the
//! whole loss trajectory is bit-for-bit reproducible.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{fnv1a64, put_f64, put_str, put_u32, put_u64, Reader};
use crate::evaluator::{self, MetricsReport};
use crate::kg::KgDataset;
use crate::models::{
    self, batch_grad, constrain_rows, init_params, LossContext, ModelError, ModelKind, ModelParams,
};
use crate::sampler::{BatchStream, SamplerConfig, Strategy};
use crate::tensor::SparseGrad;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptKind {
    Sgd,
    Adam,
}

impl OptKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptKind::Sgd => "sgd",
            OptKind::Adam => "adam",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptKind::Sgd),
            "adam" => Some(OptKind::Adam),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Margin,
    Softplus,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Margin => "margin",
            LossKind::Softplus => "softplus",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "margin" => Some(LossKind::Margin),
            "softplus" => Some(LossKind::Softplus),
            _ => None,
        }
    }
}

/// The full hyperparameter assignment for one training run. The first
/// eight fields mirror the golden-setting key set; the rest are artifact
/// knobs with sane defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    #[serde(rename = "L1_flag")]
    pub l1_flag: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub opt: OptKind,
    pub samp: Strategy,
    pub loss_kind: LossKind,
    pub lambda_reg: f64,
    pub seed: u64,
    /// Validate on the valid split every this many epochs; 0 means once
    /// at the end.
    pub eval_every: usize,
}

impl HyperParams {
    /// Built-in defaults. Translational kinds, RESCAL, and KG2E train with
    /// margin loss; DistMult and ComplEx with softplus plus a small L2
    /// term, matching each family's usual regime.
    pub fn defaults_for(model: &str) -> Self {
        let loss_kind = match model {
            "distmult" | "complex" => LossKind::Softplus,
            _ => LossKind::Margin,
        };
        Self {
            l1_flag: true,
            batch_size: 128,
            epochs: 100,
            hidden_size: 50,
            learning_rate: 0.01,
            margin: 1.0,
            opt: OptKind::Sgd,
            samp: Strategy::Bern,
            loss_kind,
            lambda_reg: 1e-5,
            seed: 13,
            eval_every: 0,
        }
    }

    /// Sampler settings implied by this assignment; rejection, worker
    /// count, and queue depth come from the run configuration.
    pub fn sampler_config(&self, reject: bool, workers: usize, queue_capacity: usize) -> SamplerConfig {
        SamplerConfig {
            strategy: self.samp,
            batch_size: self.batch_size,
            reject_train_positives: reject,
            seed: self.seed,
            workers,
            queue_capacity,
        }
    }
}

/// Per-epoch trajectory plus any periodic validation reports.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainRecord {
    /// Mean loss per positive/negative pair, one entry per epoch.
    pub epoch_loss: Vec<f64>,
    /// Wall time per epoch, seconds.
    pub epoch_seconds: Vec<f64>,
    pub validations: Vec<(usize, MetricsReport)>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch_index}; offending rows: {rows}")]
    NonFiniteLoss {
        epoch: usize,
        batch_index: usize,
        rows: String,
    },
    #[error("inconsistent configuration: {0}")]
    InconsistentConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },
    #[error("checkpoint checksum mismatch (file is corrupt)")]
    ChecksumMismatch,
    #[error("checkpoint truncated or malformed")]
    Truncated,
    #[error("checkpoint names unknown model '{name}'")]
    UnknownKind { name: String },
}

/// Batch loss under the given shape. `touched_sq_norm` is the summed
/// squared L2 norm over the distinct parameter rows the batch touches
/// (only the softplus loss uses it).
///
/// margin:   sum_i max(0, margin - s_pos_i + s_neg_i)
/// softplus: sum_i [softplus(-s_pos_i) + softplus(s_neg_i)] + lambda * touched_sq_norm
pub fn loss(
    kind: LossKind,
    scores_pos: &[f64],
    scores_neg: &[f64],
    margin: f64,
    lambda: f64,
    touched_sq_norm: f64,
) -> f64 {
    assert_eq!(scores_pos.len(), scores_neg.len());
    match kind {
        LossKind::Margin => scores_pos
            .iter()
            .zip(scores_neg)
            .map(|(&sp, &sn)| (margin - sp + sn).max(0.0))
            .sum(),
        LossKind::Softplus => {
            let base: f64 = scores_pos
                .iter()
                .zip(scores_neg)
                .map(|(&sp, &sn)| models::softplus(-sp) + models::softplus(sn))
                .sum();
            base + lambda * touched_sq_norm
        }
    }
}

struct AdamRow {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Optimizer state is sparse: Adam moments exist only for rows that have
/// been touched, with a per-row step counter so bias correction stays
/// exact under sparse updates.
enum OptState {
    Sgd,
    Adam { slots: Vec<HashMap<u32, AdamRow>> },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptState {
    fn new(kind: OptKind, n_slots: usize) -> Self {
        match kind {
            OptKind::Sgd => OptState::Sgd,
            OptKind::Adam => OptState::Adam {
                slots: (0..n_slots).map(|_| HashMap::new()).collect(),
            },
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &SparseGrad, lr: f64) {
        match self {
            OptState::Sgd => {
                for slot in 0..grads.n_slots() {
                    for (&row, g) in grads.slot(slot) {
                        let theta = params.tensors[slot].row_mut(row as usize);
                        for (t, gi) in theta.iter_mut().zip(g) {
                            *t -= lr * gi;
                        }
                    }
                }
            }
            OptState::Adam { slots } => {
                for (slot, slot_state) in slots.iter_mut().enumerate() {
                    for (&row, g) in grads.slot(slot) {
                        let width = g.len();
                        let state = slot_state.entry(row).or_insert_with(|| AdamRow {
                            m: vec![0.0; width],
                            v: vec![0.0; width],
                            t: 0,
                        });
                        state.t += 1;
                        let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
                        let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
                        let theta = params.tensors[slot].row_mut(row as usize);
                        for i in 0..width {
                            state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g[i];
                            state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                            let m_hat = state.m[i] / bc1;
                            let v_hat = state.v[i] / bc2;
                            theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
    }
}

/// Trains a fresh model against the batch stream. See
/// [`train_with_progress`] for the epoch callback variant.
pub fn train(
    dataset: Arc<KgDataset>,
    kind: ModelKind,
    hp: &HyperParams,
    sampler_cfg: &SamplerConfig,
) -> Result<(ModelParams, TrainRecord), TrainError> {
    train_with_progress(dataset, kind, hp, sampler_cfg, |_, _, _| {})
}

/// Like [`train`], invoking `progress(epoch, mean_loss, seconds)` as each
/// epoch completes.
pub fn train_with_progress(
    dataset: Arc<KgDataset>,
    kind: ModelKind,
    hp: &HyperParams,
    sampler_cfg: &SamplerConfig,
    mut progress: impl FnMut(usize, f64, f64),
) -> Result<(ModelParams, TrainRecord), TrainError> {
    if sampler_cfg.batch_size != hp.batch_size {
        return Err(TrainError::InconsistentConfig(format!(
            "sampler batch_size {} != hyperparameter batch_size {}",
            sampler_cfg.batch_size, hp.batch_size
        )));
    }
    if sampler_cfg.strategy != hp.samp {
        return Err(TrainError::InconsistentConfig(
            "sampler strategy differs from hyperparameter samp".into(),
        ));
    }
    if sampler_cfg.seed != hp.seed {
        return Err(TrainError::InconsistentConfig(
            "sampler seed differs from hyperparameter seed".into(),
        ));
    }

    let mut params = init_params(
        kind,
        dataset.n_entities(),
        dataset.n_relations(),
        hp.hidden_size,
        hp.seed,
    )?;
    let mut opt = OptState::new(hp.opt, params.tensors.len());
    let ctx = LossContext {
        loss: hp.loss_kind,
        margin: hp.margin,
        lambda: hp.lambda_reg,
    };
    let eval_every = if hp.eval_every == 0 { hp.epochs } else { hp.eval_every };

    let stream = BatchStream::spawn(dataset.clone(), sampler_cfg.clone(), hp.epochs);
    let n_batches = stream.batches_per_epoch;

    let mut record = TrainRecord::default();
    let mut loss_sum = vec![0.0f64; hp.epochs];
    let mut pair_count = vec![0usize; hp.epochs];
    let mut batches_done = vec![0usize; hp.epochs];
    let start = Instant::now();
    let mut last_completion = 0.0f64;

    for batch in stream {
        let (grads, batch_loss) = batch_grad(&params, &batch, &ctx);
        if !batch_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: batch.epoch,
                batch_index: batch.batch_index,
                rows: describe_non_finite(&params, &grads),
            });
        }
        loss_sum[batch.epoch] += batch_loss;
        pair_count[batch.epoch] += batch.positives.len();

        if hp.learning_rate != 0.0 {
            opt.step(&mut params, &grads, hp.learning_rate);
        }
        constrain_rows(&mut params, grads.touched());

        batches_done[batch.epoch] += 1;
        if batches_done[batch.epoch] == n_batches {
            let epoch = batch.epoch;
            let mean = loss_sum[epoch] / pair_count[epoch].max(1) as f64;
            let now = start.elapsed().as_secs_f64();
            let seconds = (now - last_completion).max(0.0);
            last_completion = now;
            record.epoch_loss.push(mean);
            record.epoch_seconds.push(seconds);
            progress(epoch, mean, seconds);
            if !dataset.valid.is_empty() && (epoch + 1) % eval_every == 0 {
                let report = validation_report(&params, &dataset);
                record.validations.push((epoch, report));
            }
        }
    }
    debug_assert_eq!(record.epoch_loss.len(), hp.epochs);
    Ok((params, record))
}

/// Truncated validation pass: full evaluation is the evaluator's job, so
/// periodic checks look at a bounded prefix of the valid split.
const VALIDATION_MAX_TRIPLES: usize = 512;

fn validation_report(params: &ModelParams, dataset: &KgDataset) -> MetricsReport {
    let n = dataset.valid.len().min(VALIDATION_MAX_TRIPLES);
    let outcomes = evaluator::rank_triples(params, &dataset.valid[..n], dataset, 1);
    evaluator::aggregate(&outcomes, &[1, 3, 5, 10])
}

fn describe_non_finite(params: &ModelParams, grads: &SparseGrad) -> String {
    let specs = params.specs();
    let mut bad: Vec<String> = Vec::new();
    for (slot, row) in grads.touched() {
        let p_bad = params.tensors[slot]
            .row(row as usize)
            .iter()
            .any(|v| !v.is_finite());
        let g_bad = grads
            .get(slot, row)
            .is_some_and(|g| g.iter().any(|v| !v.is_finite()));
        if p_bad || g_bad {
            bad.push(format!("{}[{}]", specs[slot].name, row));
        }
    }
    bad.sort();
    bad.truncate(16);
    if bad.is_empty() {
        "(loss overflow without non-finite rows)".into()
    } else {
        bad.join(", ")
    }
}

pub const MODEL_FILE_VERSION: &[u8; 4] = b"KGM1";

/// Writes a versioned, checksummed parameter checkpoint.
pub fn save_model(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let mut payload = Vec::new();
    put_str(&mut payload, params.kind.name());
    let (l1, cmin, cmax) = kind_settings(params.kind);
    payload.push(u8::from(l1));
    put_f64(&mut payload, cmin);
    put_f64(&mut payload, cmax);
    put_u64(&mut payload, params.n_entities as u64);
    put_u64(&mut payload, params.n_relations as u64);
    put_u64(&mut payload, params.dim as u64);
    put_u32(&mut payload, params.tensors.len() as u32);
    for t in &params.tensors {
        put_u64(&mut payload, t.rows() as u64);
        put_u64(&mut payload, t.cols() as u64);
        for &v in t.data() {
            put_f64(&mut payload, v);
        }
    }
    let mut file = Vec::with_capacity(payload.len() + 12);
    file.extend_from_slice(MODEL_FILE_VERSION);
    file.extend_from_slice(&payload);
    put_u64(&mut file, fnv1a64(&payload));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| CheckpointError::Io {
                path: parent.to_owned(),
                source,
            })?;
        }
    }
    fs::write(path, &file).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })
}

fn kind_settings(kind: ModelKind) -> (bool, f64, f64) {
    match kind {
        ModelKind::TransE { l1 }
        | ModelKind::TransH { l1 }
        | ModelKind::TransR { l1 }
        | ModelKind::TransD { l1 } => (l1, 0.0, 0.0),
        ModelKind::Kg2e { clamp_min, clamp_max } => (false, clamp_min, clamp_max),
        _ => (false, 0.0, 0.0),
    }
}

pub fn load_model(path: &Path) -> Result<ModelParams, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })?;
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated);
    }
    let (tag, rest) = bytes.split_at(4);
    if tag != MODEL_FILE_VERSION {
        return Err(CheckpointError::VersionMismatch {
            expected: String::from_utf8_lossy(MODEL_FILE_VERSION).into_owned(),
            found: String::from_utf8_lossy(tag).into_owned(),
        });
    }
    let (payload, checksum) = rest.split_at(rest.len() - 8);
    if fnv1a64(payload) != u64::from_le_bytes(checksum.try_into().unwrap()) {
        return Err(CheckpointError::ChecksumMismatch);
    }
    parse_model_payload(payload)
}

fn parse_model_payload(payload: &[u8]) -> Result<ModelParams, CheckpointError> {
    fn ok<T>(res: Result<T, crate::binio::Truncated>) -> Result<T, CheckpointError> {
        res.map_err(|_| CheckpointError::Truncated)
    }

    let mut r = Reader::new(payload);
    let name = ok(r.string())?;
    let l1 = ok(r.u8())? != 0;
    let cmin = ok(r.f64())?;
    let cmax = ok(r.f64())?;
    let mut kind = ModelKind::from_name(&name, l1)
        .map_err(|_| CheckpointError::UnknownKind { name: name.clone() })?;
    if let ModelKind::Kg2e { clamp_min, clamp_max } = &mut kind {
        *clamp_min = cmin;
        *clamp_max = cmax;
    }
    let n_entities = ok(r.u64())? as usize;
    let n_relations = ok(r.u64())? as usize;
    let dim = ok(r.u64())? as usize;
    let n_tensors = ok(r.u32())? as usize;
    let specs = kind.param_specs(n_entities, n_relations, dim);
    if n_tensors != specs.len() {
        return Err(CheckpointError::Truncated);
    }
    let mut tensors = Vec::with_capacity(n_tensors);
    for spec in &specs {
        let rows = ok(r.u64())? as usize;
        let cols = ok(r.u64())? as usize;
        if rows != spec.rows || cols != spec.cols {
            return Err(CheckpointError::Truncated);
        }
        let mut t = crate::tensor::Tensor::zeros(rows, cols);
        for v in t.data_mut() {
            *v = ok(r.f64())?;
        }
        tensors.push(t);
    }
    if !r.is_exhausted() {
        return Err(CheckpointError::Truncated);
    }
    Ok(ModelParams {
        kind,
        n_entities,
        n_relations,
        dim,
        tensors,
    })
}

/// Writes `loss.csv` with one row per epoch. Seconds are rounded to whole
/// seconds so reruns with the same seed produce identical bytes; exact
/// timings stay available on [`TrainRecord`].
pub fn write_loss_csv(record: &TrainRecord, path: &Path) -> Result<(), CheckpointError> {
    let mut out = String::from("epoch,mean_loss,seconds\n");
    for (i, (&loss, &secs)) in record
        .epoch_loss
        .iter()
        .zip(&record.epoch_seconds)
        .enumerate()
    {
        out.push_str(&format!("{},{},{}\n", i + 1, loss, secs.round() as u64));
    }
    fs::write(path, out).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })
}

#[cfg(test)]
mod tests;
