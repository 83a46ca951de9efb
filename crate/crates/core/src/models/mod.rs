//! The model zoo: parameter layouts, scoring functions, and analytic
//! gradients for eight embedding models across three representation
//! families (translational points, bilinear/complex factorizations, and
//! diagonal Gaussians).
//!
//! Scores follow a single sign convention: higher = more plausible.
//! Translational distances and the Gaussian KL are negated at the score
//! boundary so the trainer and evaluator stay model-agnostic.

mod bilinear;
mod gaussian;
mod translational;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use thiserror::Error;

use crate::kg::Triple;
use crate::sampler::Batch;
use crate::tensor::{SparseGrad, Tensor};
use crate::trainer::LossKind;

/// Registered kind names, as accepted by the CLI `--model` flag.
pub const MODEL_NAMES: [&str; 8] = [
    "transe", "transh", "transr", "transd", "rescal", "distmult", "complex", "kg2e",
];

/// Default clamp bounds for KG2E diagonal variances.
pub const KG2E_CLAMP: (f64, f64) = (0.05, 5.0);

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model '{name}'; registered kinds: {}", MODEL_NAMES.join(", "))]
    UnknownModel { name: String },
    #[error("invalid model configuration: {reason}")]
    InvalidConfig { reason: String },
}

/// A model family plus the per-kind settings that change its math.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelKind {
    TransE { l1: bool },
    TransH { l1: bool },
    TransR { l1: bool },
    TransD { l1: bool },
    Rescal,
    DistMult,
    ComplEx,
    Kg2e { clamp_min: f64, clamp_max: f64 },
}

impl ModelKind {
    /// Resolves a lowercase registry name. `l1_flag` selects the norm for
    /// the translational kinds and is ignored by the others.
    pub fn from_name(name: &str, l1_flag: bool) -> Result<Self, ModelError> {
        match name {
            "transe" => Ok(ModelKind::TransE { l1: l1_flag }),
            "transh" => Ok(ModelKind::TransH { l1: l1_flag }),
            "transr" => Ok(ModelKind::TransR { l1: l1_flag }),
            "transd" => Ok(ModelKind::TransD { l1: l1_flag }),
            "rescal" => Ok(ModelKind::Rescal),
            "distmult" => Ok(ModelKind::DistMult),
            "complex" => Ok(ModelKind::ComplEx),
            "kg2e" => Ok(ModelKind::Kg2e {
                clamp_min: KG2E_CLAMP.0,
                clamp_max: KG2E_CLAMP.1,
            }),
            _ => Err(ModelError::UnknownModel { name: name.into() }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::TransE { .. } => "transe",
            ModelKind::TransH { .. } => "transh",
            ModelKind::TransR { .. } => "transr",
            ModelKind::TransD { .. } => "transd",
            ModelKind::Rescal => "rescal",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
            ModelKind::Kg2e { .. } => "kg2e",
        }
    }

    /// Parameter tensor shapes as a pure function of (|E|, |R|, d).
    pub fn param_specs(&self, n_entities: usize, n_relations: usize, dim: usize) -> Vec<ParamSpec> {
        let e = n_entities;
        let r = n_relations;
        let d = dim;
        match self {
            ModelKind::TransE { .. } | ModelKind::DistMult => vec![
                ParamSpec::new("entity", e, d),
                ParamSpec::new("relation", r, d),
            ],
            ModelKind::TransH { .. } => vec![
                ParamSpec::new("entity", e, d),
                ParamSpec::new("relation", r, d),
                ParamSpec::new("normal", r, d),
            ],
            ModelKind::TransR { .. } => vec![
                ParamSpec::new("entity", e, d),
                ParamSpec::new("relation", r, d),
                ParamSpec::new("rel_matrix", r, d * d),
            ],
            ModelKind::TransD { .. } => vec![
                ParamSpec::new("entity", e, d),
                ParamSpec::new("relation", r, d),
                ParamSpec::new("entity_proj", e, d),
                ParamSpec::new("relation_proj", r, d),
            ],
            ModelKind::Rescal => vec![
                ParamSpec::new("entity", e, d),
                ParamSpec::new("rel_matrix", r, d * d),
            ],
            ModelKind::ComplEx => vec![
                ParamSpec::new("entity_re", e, d),
                ParamSpec::new("relation_re", r, d),
                ParamSpec::new("entity_im", e, d),
                ParamSpec::new("relation_im", r, d),
            ],
            ModelKind::Kg2e { .. } => vec![
                ParamSpec::new("entity_mean", e, d),
                ParamSpec::new("relation_mean", r, d),
                ParamSpec::new("entity_var", e, d),
                ParamSpec::new("relation_var", r, d),
            ],
        }
    }
}

/// Shape of one named parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSpec {
    fn new(name: &'static str, rows: usize, cols: usize) -> Self {
        Self { name, rows, cols }
    }
}

/// All trainable state of one model instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub n_entities: usize,
    pub n_relations: usize,
    pub dim: usize,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn specs(&self) -> Vec<ParamSpec> {
        self.kind.param_specs(self.n_entities, self.n_relations, self.dim)
    }

    pub fn col_widths(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.cols()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Entity rows followed by relation rows, in one matrix suitable for a
    /// shared 2-D projection. ComplEx concatenates real and imaginary
    /// parts; KG2E projects the means; RESCAL relations are represented by
    /// their matrix diagonal so dimensions line up with entities.
    pub fn projection_matrix(&self) -> Tensor {
        let d = self.dim;
        let e = self.n_entities;
        let r = self.n_relations;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(e + r);
        match self.kind {
            ModelKind::ComplEx => {
                for i in 0..e {
                    let mut v = self.tensors[0].row(i).to_vec();
                    v.extend_from_slice(self.tensors[2].row(i));
                    rows.push(v);
                }
                for i in 0..r {
                    let mut v = self.tensors[1].row(i).to_vec();
                    v.extend_from_slice(self.tensors[3].row(i));
                    rows.push(v);
                }
            }
            ModelKind::Rescal => {
                for i in 0..e {
                    rows.push(self.tensors[0].row(i).to_vec());
                }
                for i in 0..r {
                    let m = self.tensors[1].row(i);
                    rows.push((0..d).map(|j| m[j * d + j]).collect());
                }
            }
            _ => {
                for i in 0..e {
                    rows.push(self.tensors[0].row(i).to_vec());
                }
                for i in 0..r {
                    rows.push(self.tensors[1].row(i).to_vec());
                }
            }
        }
        Tensor::from_rows(rows)
    }
}

fn tensor_rng(seed: u64, slot: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(slot as u64).to_le_bytes());
    key[16] = 0x1e; // domain tag: parameter init
    ChaCha8Rng::from_seed(key)
}

/// Xavier-uniform initialization, deterministic given the seed.
///
/// Bounds use the allocated tensor shape: b = sqrt(6 / (rows + cols)).
/// TransE/TransH entity rows are L2-normalized and KG2E variances start at
/// 1.0; the usual constraint projection runs once at the end so the
/// invariants hold from step zero.
pub fn init_params(
    kind: ModelKind,
    n_entities: usize,
    n_relations: usize,
    dim: usize,
    seed: u64,
) -> Result<ModelParams, ModelError> {
    if dim == 0 {
        return Err(ModelError::InvalidConfig {
            reason: "hidden_size must be >= 1".into(),
        });
    }
    if n_entities == 0 || n_relations == 0 {
        return Err(ModelError::InvalidConfig {
            reason: "empty vocabulary".into(),
        });
    }
    let specs = kind.param_specs(n_entities, n_relations, dim);
    let mut tensors = Vec::with_capacity(specs.len());
    for (slot, spec) in specs.iter().enumerate() {
        let mut t = Tensor::zeros(spec.rows, spec.cols);
        let is_variance = matches!(kind, ModelKind::Kg2e { .. }) && spec.name.ends_with("_var");
        if is_variance {
            t.data_mut().fill(1.0);
        } else {
            let bound = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
            let mut rng = tensor_rng(seed, slot);
            for v in t.data_mut() {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * bound;
            }
        }
        tensors.push(t);
    }
    let mut params = ModelParams {
        kind,
        n_entities,
        n_relations,
        dim,
        tensors,
    };
    constrain_all(&mut params);
    Ok(params)
}

/// Plausibility of `t` under the model; higher is better.
pub fn score(params: &ModelParams, t: Triple) -> f64 {
    match params.kind {
        ModelKind::TransE { l1 } => translational::transe_score(params, t, l1),
        ModelKind::TransH { l1 } => translational::transh_score(params, t, l1),
        ModelKind::TransR { l1 } => translational::transr_score(params, t, l1),
        ModelKind::TransD { l1 } => translational::transd_score(params, t, l1),
        ModelKind::Rescal => bilinear::rescal_score(params, t),
        ModelKind::DistMult => bilinear::distmult_score(params, t),
        ModelKind::ComplEx => bilinear::complex_score(params, t),
        ModelKind::Kg2e { .. } => gaussian::kg2e_score(params, t),
    }
}

/// Accumulates `coeff * ∂score/∂θ` into `out` for every parameter row the
/// triple touches. L1 norms use subgradient 0 at kinks.
pub fn score_grad(params: &ModelParams, t: Triple, coeff: f64, out: &mut SparseGrad) {
    match params.kind {
        ModelKind::TransE { l1 } => translational::transe_grad(params, t, l1, coeff, out),
        ModelKind::TransH { l1 } => translational::transh_grad(params, t, l1, coeff, out),
        ModelKind::TransR { l1 } => translational::transr_grad(params, t, l1, coeff, out),
        ModelKind::TransD { l1 } => translational::transd_grad(params, t, l1, coeff, out),
        ModelKind::Rescal => bilinear::rescal_grad(params, t, coeff, out),
        ModelKind::DistMult => bilinear::distmult_grad(params, t, coeff, out),
        ModelKind::ComplEx => bilinear::complex_grad(params, t, coeff, out),
        ModelKind::Kg2e { .. } => gaussian::kg2e_grad(params, t, coeff, out),
    }
}

/// Every (slot, row) pair read when scoring `t`.
pub fn touched_rows(params: &ModelParams, t: Triple, out: &mut BTreeSet<(usize, u32)>) {
    let h = t.head;
    let r = t.relation;
    let tl = t.tail;
    match params.kind {
        ModelKind::TransE { .. } | ModelKind::DistMult => {
            out.extend([(0, h), (0, tl), (1, r)]);
        }
        ModelKind::TransH { .. } => {
            out.extend([(0, h), (0, tl), (1, r), (2, r)]);
        }
        ModelKind::TransR { .. } => {
            out.extend([(0, h), (0, tl), (1, r), (2, r)]);
        }
        ModelKind::TransD { .. } => {
            out.extend([(0, h), (0, tl), (1, r), (2, h), (2, tl), (3, r)]);
        }
        ModelKind::Rescal => {
            out.extend([(0, h), (0, tl), (1, r)]);
        }
        ModelKind::ComplEx => {
            out.extend([(0, h), (0, tl), (1, r), (2, h), (2, tl), (3, r)]);
        }
        ModelKind::Kg2e { .. } => {
            out.extend([(0, h), (0, tl), (1, r), (2, h), (2, tl), (3, r)]);
        }
    }
}

/// Loss shape the batch gradient differentiates through.
#[derive(Clone, Copy, Debug)]
pub struct LossContext {
    pub loss: LossKind,
    pub margin: f64,
    pub lambda: f64,
}

/// Gradient of the summed batch loss w.r.t. every touched parameter row,
/// plus the loss sum itself.
///
/// Margin loss: sum_i max(0, margin - s_pos + s_neg); pairs with inactive
/// hinge contribute nothing (zero-violation batches yield an empty
/// gradient). Softplus loss: sum_i softplus(-s_pos) + softplus(s_neg),
/// plus lambda * ||theta||^2 over the set of touched rows, each counted
/// once.
pub fn batch_grad(params: &ModelParams, batch: &Batch, ctx: &LossContext) -> (SparseGrad, f64) {
    let mut grads = SparseGrad::new(params.col_widths());
    let mut total = 0.0;
    match ctx.loss {
        LossKind::Margin => {
            for (pos, neg) in batch.positives.iter().zip(&batch.negatives) {
                let sp = score(params, *pos);
                let sn = score(params, *neg);
                let violation = ctx.margin - sp + sn;
                if violation > 0.0 {
                    total += violation;
                    score_grad(params, *pos, -1.0, &mut grads);
                    score_grad(params, *neg, 1.0, &mut grads);
                }
            }
        }
        LossKind::Softplus => {
            let mut touched: BTreeSet<(usize, u32)> = BTreeSet::new();
            for (pos, neg) in batch.positives.iter().zip(&batch.negatives) {
                let sp = score(params, *pos);
                let sn = score(params, *neg);
                total += softplus(-sp) + softplus(sn);
                score_grad(params, *pos, -sigmoid(-sp), &mut grads);
                score_grad(params, *neg, sigmoid(sn), &mut grads);
                touched_rows(params, *pos, &mut touched);
                touched_rows(params, *neg, &mut touched);
            }
            if ctx.lambda > 0.0 {
                for (slot, row) in touched {
                    let theta = params.tensors[slot].row(row as usize).to_vec();
                    total += ctx.lambda * theta.iter().map(|v| v * v).sum::<f64>();
                    grads.add_scaled(slot, row, &theta, 2.0 * ctx.lambda);
                }
            }
        }
    }
    (grads, total)
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Projects the given rows back onto their constraint sets: unit entity
/// rows for TransE/TransH, unit normals for TransH, clamped variances for
/// KG2E. No-op for the other kinds.
pub fn constrain_rows(params: &mut ModelParams, rows: impl Iterator<Item = (usize, u32)>) {
    match params.kind {
        ModelKind::TransE { .. } => {
            for (slot, row) in rows {
                if slot == 0 {
                    renorm_row(params.tensors[slot].row_mut(row as usize));
                }
            }
        }
        ModelKind::TransH { .. } => {
            for (slot, row) in rows {
                if slot == 0 || slot == 2 {
                    renorm_row(params.tensors[slot].row_mut(row as usize));
                }
            }
        }
        ModelKind::Kg2e { clamp_min, clamp_max } => {
            for (slot, row) in rows {
                if slot == 2 || slot == 3 {
                    for v in params.tensors[slot].row_mut(row as usize) {
                        *v = v.clamp(clamp_min, clamp_max);
                    }
                }
            }
        }
        _ => {}
    }
}

/// Runs the constraint projection over every row (used once after init).
pub fn constrain_all(params: &mut ModelParams) {
    let all: Vec<(usize, u32)> = params
        .tensors
        .iter()
        .enumerate()
        .flat_map(|(slot, t)| (0..t.rows() as u32).map(move |r| (slot, r)))
        .collect();
    constrain_rows(params, all.into_iter());
}

/// Unit-normalizes a row, skipping rows that are already unit (within
/// 1e-12 of squared norm 1) or exactly zero, so repeated projection is a
/// fixed point bit-for-bit.
fn renorm_row(row: &mut [f64]) {
    let n2: f64 = row.iter().map(|v| v * v).sum();
    if n2 == 0.0 || (n2 - 1.0).abs() <= 1e-12 {
        return;
    }
    let inv = 1.0 / n2.sqrt();
    for v in row {
        *v *= inv;
    }
}
