//! Gaussian family: KG2E with diagonal covariances and the asymmetric KL
//! score.
//!
//! Entities and relations are diagonal Gaussians. A triple is scored by
//! the divergence between the entity-difference distribution and the
//! relation distribution:
//!
//!   s = -KL( N(μ_h - μ_t, Σ_h + Σ_t) ‖ N(μ_r, Σ_r) )
//!
//! which is zero (maximal) exactly when the two distributions coincide.
//! Variances are kept inside clamp bounds by the trainer's projection
//! step; the score itself never clamps.

use crate::kg::Triple;
use crate::tensor::SparseGrad;

use super::ModelParams;

const ENT_MEAN: usize = 0;
const REL_MEAN: usize = 1;
const ENT_VAR: usize = 2;
const REL_VAR: usize = 3;

pub(super) fn kg2e_score(p: &ModelParams, t: Triple) -> f64 {
    let d = p.dim;
    let mh = p.tensors[ENT_MEAN].row(t.head as usize);
    let mt = p.tensors[ENT_MEAN].row(t.tail as usize);
    let mr = p.tensors[REL_MEAN].row(t.relation as usize);
    let vh = p.tensors[ENT_VAR].row(t.head as usize);
    let vt = p.tensors[ENT_VAR].row(t.tail as usize);
    let vr = p.tensors[REL_VAR].row(t.relation as usize);

    let mut kl = 0.0;
    for i in 0..d {
        let v1 = vh[i] + vt[i];
        let v2 = vr[i];
        let m = mr[i] - (mh[i] - mt[i]);
        kl += v1 / v2 + m * m / v2 - 1.0 + (v2 / v1).ln();
    }
    -0.5 * kl
}

pub(super) fn kg2e_grad(p: &ModelParams, t: Triple, coeff: f64, out: &mut SparseGrad) {
    let d = p.dim;
    let mh = p.tensors[ENT_MEAN].row(t.head as usize);
    let mt = p.tensors[ENT_MEAN].row(t.tail as usize);
    let mr = p.tensors[REL_MEAN].row(t.relation as usize);
    let vh = p.tensors[ENT_VAR].row(t.head as usize);
    let vt = p.tensors[ENT_VAR].row(t.tail as usize);
    let vr = p.tensors[REL_VAR].row(t.relation as usize);

    let mut dmh = vec![0.0; d];
    let mut dmt = vec![0.0; d];
    let mut dmr = vec![0.0; d];
    let mut dvh = vec![0.0; d];
    let mut dvr = vec![0.0; d];
    for i in 0..d {
        let v1 = vh[i] + vt[i];
        let v2 = vr[i];
        let m = mr[i] - (mh[i] - mt[i]);
        dmh[i] = m / v2;
        dmt[i] = -m / v2;
        dmr[i] = -m / v2;
        // shared by head and tail variances through v1 = vh + vt
        dvh[i] = -0.5 * (1.0 / v2 - 1.0 / v1);
        dvr[i] = 0.5 * (v1 / (v2 * v2) + m * m / (v2 * v2) - 1.0 / v2);
    }
    out.add_scaled(ENT_MEAN, t.head, &dmh, coeff);
    out.add_scaled(ENT_MEAN, t.tail, &dmt, coeff);
    out.add_scaled(REL_MEAN, t.relation, &dmr, coeff);
    out.add_scaled(ENT_VAR, t.head, &dvh, coeff);
    out.add_scaled(ENT_VAR, t.tail, &dvh, coeff);
    out.add_scaled(REL_VAR, t.relation, &dvr, coeff);
}
