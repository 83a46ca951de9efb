//! Exact O(N²) t-SNE.
//!
//! Per-point Gaussian bandwidths are found by binary search so each row's
//! conditional distribution has entropy log2(perplexity) bits (50
//! iterations, tolerance 1e-5). The standard recipe follows: symmetrized
//! affinities, early exaggeration ×12 for the first 250 iterations,
//! momentum 0.5 switching to 0.8 at iteration 250, learning rate 200, and
//! PCA initialization (scaled to std 1e-4, plus a seeded jitter so
//! duplicate input rows can separate).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

use super::{index_labels, pca_basis, PointKind, ProjMethod, ProjectionResult, ProjectorError};

pub const TSNE_MAX_POINTS: usize = 5000;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const MOMENTUM_EARLY: f64 = 0.5;
const MOMENTUM_LATE: f64 = 0.8;
const MOMENTUM_SWITCH: usize = 250;
const LEARNING_RATE: f64 = 200.0;
const BANDWIDTH_SEARCH_ITERS: usize = 50;
const ENTROPY_TOL: f64 = 1e-5;
const P_FLOOR: f64 = 1e-12;

/// Row-normalized conditional affinities plus the achieved per-row
/// entropies (bits).
pub struct CondAffinities {
    pub n: usize,
    /// Row-major N×N; diagonal is zero, rows sum to 1.
    pub p: Vec<f64>,
    pub entropy_bits: Vec<f64>,
}

fn pairwise_sq_dists(x: &Tensor) -> Vec<f64> {
    let n = x.rows();
    let mut d2 = vec![0.0f64; n * n];
    for i in 0..n {
        let ri = x.row(i);
        for j in (i + 1)..n {
            let rj = x.row(j);
            let mut s = 0.0;
            for k in 0..x.cols() {
                let diff = ri[k] - rj[k];
                s += diff * diff;
            }
            d2[i * n + j] = s;
            d2[j * n + i] = s;
        }
    }
    d2
}

/// Binary-searches each row's precision beta = 1/(2σ²) to match the
/// target entropy log2(perplexity).
pub fn conditional_affinities(x: &Tensor, perplexity: f64) -> Result<CondAffinities, ProjectorError> {
    let n = x.rows();
    if !(2.0..=((n as f64 - 1.0) / 3.0)).contains(&perplexity) {
        return Err(ProjectorError::BadPerplexity { perplexity, n });
    }
    let d2 = pairwise_sq_dists(x);
    let target = perplexity.log2();
    let mut p = vec![0.0f64; n * n];
    let mut entropy_bits = vec![0.0f64; n];

    for i in 0..n {
        let mut beta = 1.0f64;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let mut row = vec![0.0f64; n];
        let mut entropy = 0.0;
        // Shift by the row-min distance for exponent stability; the
        // normalization cancels the shift exactly.
        let base = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2[i * n + j])
            .fold(f64::INFINITY, f64::min);
        for _ in 0..BANDWIDTH_SEARCH_ITERS {
            let mut sum = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                if j == i {
                    *r = 0.0;
                    continue;
                }
                *r = (-beta * (d2[i * n + j] - base)).exp();
                sum += *r;
            }
            entropy = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                if j == i {
                    continue;
                }
                *r /= sum;
                if *r > 0.0 {
                    entropy -= *r * r.log2();
                }
            }
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_finite() {
                    (beta + beta_max) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_finite() {
                    (beta + beta_min) / 2.0
                } else {
                    beta / 2.0
                };
            }
        }
        entropy_bits[i] = entropy;
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    Ok(CondAffinities { n, p, entropy_bits })
}

/// P = (P_cond + P_condᵀ) / (2N), floored for KL stability; sums to 1 up
/// to the floor.
fn symmetrize(cond: &CondAffinities) -> Vec<f64> {
    let n = cond.n;
    let mut p = vec![0.0f64; n * n];
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            p[i * n + j] = ((cond.p[i * n + j] + cond.p[j * n + i]) / norm).max(P_FLOOR);
        }
    }
    p
}

struct StudentT {
    /// num[i][j] = 1 / (1 + ||y_i - y_j||²)
    num: Vec<f64>,
    sum: f64,
}

fn student_t(y: &[f64], n: usize) -> StudentT {
    let mut num = vec![0.0f64; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    StudentT { num, sum }
}

fn kl_divergence(p: &[f64], t: &StudentT, n: usize) -> f64 {
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p[i * n + j];
            let qij = (t.num[i * n + j] / t.sum).max(P_FLOOR);
            kl += pij * (pij / qij).ln();
        }
    }
    kl
}

/// Exact t-SNE to two dimensions. `iters = 0` reports the KL of the
/// initialization itself, which is handy for before/after comparisons.
pub fn tsne_2d(
    x: &Tensor,
    perplexity: f64,
    iters: usize,
    seed: u64,
) -> Result<ProjectionResult, ProjectorError> {
    let n = x.rows();
    if n > TSNE_MAX_POINTS {
        return Err(ProjectorError::TooManyPoints {
            cap: TSNE_MAX_POINTS,
            got: n,
        });
    }
    let cond = conditional_affinities(x, perplexity)?;
    let p = symmetrize(&cond);

    // PCA init scaled to std 1e-4 on the leading component, with a seeded
    // jitter so coincident rows do not stay glued together forever.
    let basis = pca_basis(x)?;
    let pca = basis.project(x);
    let std0 = {
        let mean: f64 = pca.iter().map(|c| c[0]).sum::<f64>() / n as f64;
        let var: f64 = pca.iter().map(|c| (c[0] - mean).powi(2)).sum::<f64>() / n as f64;
        var.sqrt()
    };
    let scale = if std0 > 0.0 { 1e-4 / std0 } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x74_73_6e_65);
    let mut y = vec![0.0f64; 2 * n];
    for i in 0..n {
        for k in 0..2 {
            let jitter: f64 = rng.sample(StandardNormal);
            y[2 * i + k] = pca[i][k] * scale + jitter * 1e-6;
        }
    }

    let mut velocity = vec![0.0f64; 2 * n];
    let mut grad = vec![0.0f64; 2 * n];
    for iter in 0..iters {
        let exaggerate = if iter < EXAGGERATION_ITERS.min(iters) {
            EXAGGERATION
        } else {
            1.0
        };
        let t = student_t(&y, n);
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = p[i * n + j] * exaggerate;
                let qij = (t.num[i * n + j] / t.sum).max(P_FLOOR);
                let mult = 4.0 * (pij - qij) * t.num[i * n + j];
                grad[2 * i] += mult * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += mult * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        let momentum = if iter < MOMENTUM_SWITCH {
            MOMENTUM_EARLY
        } else {
            MOMENTUM_LATE
        };
        for k in 0..2 * n {
            velocity[k] = momentum * velocity[k] - LEARNING_RATE * grad[k];
            y[k] += velocity[k];
        }
    }

    let final_kl = kl_divergence(&p, &student_t(&y, n), n);
    Ok(ProjectionResult {
        labels: index_labels(n),
        point_kinds: vec![PointKind::Entity; n],
        coords: (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect(),
        method: ProjMethod::Tsne,
        final_objective: final_kl,
    })
}
