//! Translational family: TransE, TransH, TransR, TransD.
//!
//! All four score a triple as the negated L1 or L2 distance between a
//! (possibly projected) head translated by the relation vector and the
//! (possibly projected) tail.

use crate::kg::Triple;
use crate::tensor::SparseGrad;

use super::ModelParams;

const ENT: usize = 0;
const REL: usize = 1;
const TRANSH_NORM: usize = 2;
const TRANSR_MAT: usize = 2;
const TRANSD_ENT_P: usize = 2;
const TRANSD_REL_P: usize = 3;

fn norm(delta: &[f64], l1: bool) -> f64 {
    if l1 {
        delta.iter().map(|v| v.abs()).sum()
    } else {
        delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// d‖δ‖/dδ. For L1 the subgradient at 0 is 0; for L2 the zero vector maps
/// to a zero gradient.
fn norm_backward(delta: &[f64], l1: bool) -> Vec<f64> {
    if l1 {
        delta
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect()
    } else {
        let n = norm(delta, false);
        if n == 0.0 {
            vec![0.0; delta.len()]
        } else {
            delta.iter().map(|v| v / n).collect()
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major (d x d) matrix times vector.
fn matvec(m: &[f64], v: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// Row-major (d x d) matrix transposed, times vector.
fn matvec_t(m: &[f64], v: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..d {
        let vi = v[i];
        for (j, o) in out.iter_mut().enumerate() {
            *o += m[i * d + j] * vi;
        }
    }
    out
}

// δ is evaluated as (h - t) + r in all four kinds so that TransR with
// identity matrices and TransD with zero projections reduce to TransE
// bit-for-bit.
pub(super) fn transe_score(p: &ModelParams, t: Triple, l1: bool) -> f64 {
    let h = p.tensors[ENT].row(t.head as usize);
    let r = p.tensors[REL].row(t.relation as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let delta: Vec<f64> = (0..p.dim).map(|i| (h[i] - tl[i]) + r[i]).collect();
    -norm(&delta, l1)
}

pub(super) fn transe_grad(p: &ModelParams, t: Triple, l1: bool, coeff: f64, out: &mut SparseGrad) {
    let h = p.tensors[ENT].row(t.head as usize);
    let r = p.tensors[REL].row(t.relation as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let delta: Vec<f64> = (0..p.dim).map(|i| (h[i] - tl[i]) + r[i]).collect();
    let u = norm_backward(&delta, l1);
    out.add_scaled(ENT, t.head, &u, -coeff);
    out.add_scaled(REL, t.relation, &u, -coeff);
    out.add_scaled(ENT, t.tail, &u, coeff);
}

/// TransH projects entities onto the relation-specific hyperplane with
/// unit normal w: x⊥ = x − (wᵀx)w.
pub(super) fn transh_score(p: &ModelParams, t: Triple, l1: bool) -> f64 {
    -norm(&transh_delta(p, t), l1)
}

fn transh_delta(p: &ModelParams, t: Triple) -> Vec<f64> {
    let h = p.tensors[ENT].row(t.head as usize);
    let r = p.tensors[REL].row(t.relation as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let w = p.tensors[TRANSH_NORM].row(t.relation as usize);
    let wh = dot(w, h);
    let wt = dot(w, tl);
    (0..p.dim)
        .map(|i| (h[i] - wh * w[i]) + r[i] - (tl[i] - wt * w[i]))
        .collect()
}

pub(super) fn transh_grad(p: &ModelParams, t: Triple, l1: bool, coeff: f64, out: &mut SparseGrad) {
    let d = p.dim;
    let h = p.tensors[ENT].row(t.head as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let w = p.tensors[TRANSH_NORM].row(t.relation as usize);
    let delta = transh_delta(p, t);
    let u = norm_backward(&delta, l1);

    let wu = dot(w, &u);
    // ∂s/∂h = -(u - (w·u) w); tail symmetric with flipped sign.
    let dh: Vec<f64> = (0..d).map(|i| -(u[i] - wu * w[i])).collect();
    let dt: Vec<f64> = (0..d).map(|i| u[i] - wu * w[i]).collect();
    // c = h - t; ∂s/∂w = (u·w) c + (w·c) u.
    let c: Vec<f64> = (0..d).map(|i| h[i] - tl[i]).collect();
    let wc = dot(w, &c);
    let dw: Vec<f64> = (0..d).map(|i| wu * c[i] + wc * u[i]).collect();

    out.add_scaled(ENT, t.head, &dh, coeff);
    out.add_scaled(ENT, t.tail, &dt, coeff);
    out.add_scaled(REL, t.relation, &u, -coeff);
    out.add_scaled(TRANSH_NORM, t.relation, &dw, coeff);
}

/// TransR maps entities into the relation space with a per-relation
/// matrix: δ = M_r(h − t) + r.
pub(super) fn transr_score(p: &ModelParams, t: Triple, l1: bool) -> f64 {
    -norm(&transr_delta(p, t), l1)
}

fn transr_delta(p: &ModelParams, t: Triple) -> Vec<f64> {
    let d = p.dim;
    let h = p.tensors[ENT].row(t.head as usize);
    let r = p.tensors[REL].row(t.relation as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let m = p.tensors[TRANSR_MAT].row(t.relation as usize);
    let c: Vec<f64> = (0..d).map(|i| h[i] - tl[i]).collect();
    let mc = matvec(m, &c, d);
    (0..d).map(|i| mc[i] + r[i]).collect()
}

pub(super) fn transr_grad(p: &ModelParams, t: Triple, l1: bool, coeff: f64, out: &mut SparseGrad) {
    let d = p.dim;
    let h = p.tensors[ENT].row(t.head as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let m = p.tensors[TRANSR_MAT].row(t.relation as usize);
    let delta = transr_delta(p, t);
    let u = norm_backward(&delta, l1);

    let mtu = matvec_t(m, &u, d);
    let c: Vec<f64> = (0..d).map(|i| h[i] - tl[i]).collect();
    // ∂s/∂M_ij = -u_i c_j
    let mut dm = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            dm[i * d + j] = -u[i] * c[j];
        }
    }

    out.add_scaled(ENT, t.head, &mtu, -coeff);
    out.add_scaled(ENT, t.tail, &mtu, coeff);
    out.add_scaled(REL, t.relation, &u, -coeff);
    out.add_scaled(TRANSR_MAT, t.relation, &dm, coeff);
}

/// TransD (equal-dimension form): h⊥ = (r_p h_pᵀ + I) h, so
/// δ = r_p (h_p·h − t_p·t) + h − t + r.
pub(super) fn transd_score(p: &ModelParams, t: Triple, l1: bool) -> f64 {
    -norm(&transd_delta(p, t), l1)
}

fn transd_delta(p: &ModelParams, t: Triple) -> Vec<f64> {
    let d = p.dim;
    let h = p.tensors[ENT].row(t.head as usize);
    let r = p.tensors[REL].row(t.relation as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let hp = p.tensors[TRANSD_ENT_P].row(t.head as usize);
    let tp = p.tensors[TRANSD_ENT_P].row(t.tail as usize);
    let rp = p.tensors[TRANSD_REL_P].row(t.relation as usize);
    let q = dot(hp, h) - dot(tp, tl);
    (0..d).map(|i| rp[i] * q + h[i] - tl[i] + r[i]).collect()
}

pub(super) fn transd_grad(p: &ModelParams, t: Triple, l1: bool, coeff: f64, out: &mut SparseGrad) {
    let d = p.dim;
    let h = p.tensors[ENT].row(t.head as usize);
    let tl = p.tensors[ENT].row(t.tail as usize);
    let hp = p.tensors[TRANSD_ENT_P].row(t.head as usize);
    let tp = p.tensors[TRANSD_ENT_P].row(t.tail as usize);
    let rp = p.tensors[TRANSD_REL_P].row(t.relation as usize);
    let delta = transd_delta(p, t);
    let u = norm_backward(&delta, l1);

    let k = dot(&u, rp);
    let q = dot(hp, h) - dot(tp, tl);
    let dh: Vec<f64> = (0..d).map(|i| -(u[i] + k * hp[i])).collect();
    let dt: Vec<f64> = (0..d).map(|i| u[i] + k * tp[i]).collect();
    let dhp: Vec<f64> = h.iter().map(|&v| -k * v).collect();
    let dtp: Vec<f64> = tl.iter().map(|&v| k * v).collect();
    let drp: Vec<f64> = u.iter().map(|&v| -q * v).collect();

    out.add_scaled(ENT, t.head, &dh, coeff);
    out.add_scaled(ENT, t.tail, &dt, coeff);
    out.add_scaled(REL, t.relation, &u, -coeff);
    out.add_scaled(TRANSD_ENT_P, t.head, &dhp, coeff);
    out.add_scaled(TRANSD_ENT_P, t.tail, &dtp, coeff);
    out.add_scaled(TRANSD_REL_P, t.relation, &drp, coeff);
}
