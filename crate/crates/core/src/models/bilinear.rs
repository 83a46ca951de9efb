//! Factorization family: RESCAL (full relation matrices), DistMult
//! (diagonal), and ComplEx (complex-valued diagonal).

use crate::kg::Triple;
use crate::tensor::SparseGrad;

use super::ModelParams;

const ENT: usize = 0;
const RESCAL_MAT: usize = 1;
const REL: usize = 1;
const ENT_IM: usize = 2;
const REL_IM: usize = 3;

/// RESCAL: s = hᵀ M_r t.
pub(super) fn rescal_score(p: &ModelParams, t: Triple) -> f64 {
    let d = p.dim;
    let h = p.tensors[ENT].row(t.head as usize);
    let m = p.tensors[RESCAL_MAT].row(t.relation as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let mut s = 0.0;
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += m[i * d + j] * tl[j];
        }
        s += h[i] * acc;
    }
    s
}

pub(super) fn rescal_grad(p: &ModelParams, t: Triple, coeff: f64, out: &mut SparseGrad) {
    let d = p.dim;
    let h = p.tensors[ENT].row(t.head as usize);
    let m = p.tensors[RESCAL_MAT].row(t.relation as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);

    let mut dh = vec![0.0; d];
    let mut dt = vec![0.0; d];
    let mut dm = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mij = m[i * d + j];
            dh[i] += mij * tl[j];
            dt[j] += mij * h[i];
            dm[i * d + j] = h[i] * tl[j];
        }
    }
    out.add_scaled(ENT, t.head, &dh, coeff);
    out.add_scaled(ENT, t.tail, &dt, coeff);
    out.add_scaled(RESCAL_MAT, t.relation, &dm, coeff);
}

/// DistMult: s = Σᵢ hᵢ rᵢ tᵢ. Multiplying head and tail first keeps the
/// head/tail symmetry exact in floating point.
pub(super) fn distmult_score(p: &ModelParams, t: Triple) -> f64 {
    let h = p.tensors[ENT].row(t.head as usize);
    let r = p.tensors[REL].row(t.relation as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    (0..p.dim).map(|i| (h[i] * tl[i]) * r[i]).sum()
}

pub(super) fn distmult_grad(p: &ModelParams, t: Triple, coeff: f64, out: &mut SparseGrad) {
    let d = p.dim;
    let h = p.tensors[ENT].row(t.head as usize);
    let r = p.tensors[REL].row(t.relation as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let dh: Vec<f64> = (0..d).map(|i| r[i] * tl[i]).collect();
    let dr: Vec<f64> = (0..d).map(|i| h[i] * tl[i]).collect();
    let dt: Vec<f64> = (0..d).map(|i| h[i] * r[i]).collect();
    out.add_scaled(ENT, t.head, &dh, coeff);
    out.add_scaled(REL, t.relation, &dr, coeff);
    out.add_scaled(ENT, t.tail, &dt, coeff);
}

/// ComplEx: s = Re(Σᵢ hᵢ rᵢ conj(tᵢ)) with h, r, t ∈ ℂᵈ. The conjugation
/// makes the score asymmetric in head and tail.
pub(super) fn complex_score(p: &ModelParams, t: Triple) -> f64 {
    let hre = p.tensors[ENT].row(t.head as usize);
    let rre = p.tensors[REL].row(t.relation as usize);
    let tre = p.tensors[ENT].row(t.tail as usize);
    let him = p.tensors[ENT_IM].row(t.head as usize);
    let rim = p.tensors[REL_IM].row(t.relation as usize);
    let tim = p.tensors[ENT_IM].row(t.tail as usize);
    (0..p.dim)
        .map(|i| {
            hre[i] * rre[i] * tre[i] + him[i] * rre[i] * tim[i] + hre[i] * rim[i] * tim[i]
                - him[i] * rim[i] * tre[i]
        })
        .sum()
}

pub(super) fn complex_grad(p: &ModelParams, t: Triple, coeff: f64, out: &mut SparseGrad) {
    let d = p.dim;
    let hre = p.tensors[ENT].row(t.head as usize);
    let rre = p.tensors[REL].row(t.relation as usize);
    let tre = p.tensors[ENT].row(t.tail as usize);
    let him = p.tensors[ENT_IM].row(t.head as usize);
    let rim = p.tensors[REL_IM].row(t.relation as usize);
    let tim = p.tensors[ENT_IM].row(t.tail as usize);

    let dhre: Vec<f64> = (0..d).map(|i| rre[i] * tre[i] + rim[i] * tim[i]).collect();
    let dhim: Vec<f64> = (0..d).map(|i| rre[i] * tim[i] - rim[i] * tre[i]).collect();
    let drre: Vec<f64> = (0..d).map(|i| hre[i] * tre[i] + him[i] * tim[i]).collect();
    let drim: Vec<f64> = (0..d).map(|i| hre[i] * tim[i] - him[i] * tre[i]).collect();
    let dtre: Vec<f64> = (0..d).map(|i| hre[i] * rre[i] - him[i] * rim[i]).collect();
    let dtim: Vec<f64> = (0..d).map(|i| him[i] * rre[i] + hre[i] * rim[i]).collect();

    out.add_scaled(ENT, t.head, &dhre, coeff);
    out.add_scaled(ENT_IM, t.head, &dhim, coeff);
    out.add_scaled(REL, t.relation, &drre, coeff);
    out.add_scaled(REL_IM, t.relation, &drim, coeff);
    out.add_scaled(ENT, t.tail, &dtre, coeff);
    out.add_scaled(ENT_IM, t.tail, &dtim, coeff);
}
