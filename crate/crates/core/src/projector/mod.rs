//! 2-D projection of embeddings (PCA and exact t-SNE) and export of the
//! visualization files: CSVs plus self-contained SVG panels.

mod export;
mod tsne;

pub use export::{export_plots, write_embedding_csv, write_embedding_svg, write_loss_svg, write_metric_svgs};
pub use tsne::{conditional_affinities, tsne_2d, CondAffinities};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error("projection needs at least {need} {what}, got {got}")]
    TooSmall {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("perplexity {perplexity} infeasible for {n} points (need 2 <= perplexity <= (n-1)/3)")]
    BadPerplexity { perplexity: f64, n: usize },
    #[error("exact t-SNE is capped at {cap} points, got {got}; subsample first")]
    TooManyPoints { cap: usize, got: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjMethod {
    Pca,
    Tsne,
}

impl ProjMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ProjMethod::Pca => "pca",
            ProjMethod::Tsne => "tsne",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "pca" => Some(ProjMethod::Pca),
            "tsne" => Some(ProjMethod::Tsne),
            _ => None,
        }
    }
}

/// Whether a projected row is an entity or a relation embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointKind {
    Entity,
    Relation,
}

impl PointKind {
    pub fn name(&self) -> &'static str {
        match self {
            PointKind::Entity => "entity",
            PointKind::Relation => "relation",
        }
    }
}

/// 2-D coordinates with row labels. `final_objective` is the t-SNE KL
/// divergence or the PCA explained-variance ratio of the two components.
#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub labels: Vec<String>,
    pub point_kinds: Vec<PointKind>,
    pub coords: Vec<[f64; 2]>,
    pub method: ProjMethod,
    pub final_objective: f64,
}

impl ProjectionResult {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Replaces the default row-index labels.
    pub fn with_labels(mut self, labels: Vec<String>, kinds: Vec<PointKind>) -> Self {
        assert_eq!(labels.len(), self.coords.len());
        assert_eq!(kinds.len(), self.coords.len());
        self.labels = labels;
        self.point_kinds = kinds;
        self
    }
}

fn index_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Top-2 principal directions of the mean-centered data.
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Two orthonormal component vectors, sign-fixed so each component's
    /// largest-magnitude loading is positive.
    pub components: [Vec<f64>; 2],
    /// All eigenvalues of the covariance, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaBasis {
    pub fn explained_variance_ratio(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            0.0
        } else {
            (self.eigenvalues[0] + self.eigenvalues[1]) / total
        }
    }

    pub fn project(&self, x: &Tensor) -> Vec<[f64; 2]> {
        x.iter_rows()
            .map(|row| {
                let mut c = [0.0f64; 2];
                for (k, comp) in self.components.iter().enumerate() {
                    c[k] = row
                        .iter()
                        .zip(&self.mean)
                        .zip(comp)
                        .map(|((x, m), g)| (x - m) * g)
                        .sum();
                }
                c
            })
            .collect()
    }
}

/// Eigen-decomposition of the d×d covariance via cyclic Jacobi rotations.
pub fn pca_basis(x: &Tensor) -> Result<PcaBasis, ProjectorError> {
    let n = x.rows();
    let d = x.cols();
    if n < 2 {
        return Err(ProjectorError::TooSmall {
            what: "rows",
            need: 2,
            got: n,
        });
    }
    if d < 2 {
        return Err(ProjectorError::TooSmall {
            what: "columns",
            need: 2,
            got: d,
        });
    }

    let mut mean = vec![0.0f64; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Covariance, normalized by n - 1.
    let mut cov = vec![0.0f64; d * d];
    for row in x.iter_rows() {
        for i in 0..d {
            let xi = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += xi * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(&mut cov, d);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();

    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    for (k, comp) in components.iter_mut().enumerate() {
        let col = order[k];
        for i in 0..d {
            comp[i] = vectors[i * d + col];
        }
        // Sign convention: largest-magnitude loading positive.
        let lead = comp
            .iter()
            .copied()
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap_or(1.0);
        if lead < 0.0 {
            for v in comp.iter_mut() {
                *v = -*v;
            }
        }
    }

    Ok(PcaBasis {
        mean,
        components,
        eigenvalues: sorted_vals,
    })
}

/// Mean-centered projection onto the top-2 principal directions.
/// Deterministic; the objective is the explained-variance ratio.
pub fn pca_2d(x: &Tensor) -> Result<ProjectionResult, ProjectorError> {
    let basis = pca_basis(x)?;
    Ok(ProjectionResult {
        labels: index_labels(x.rows()),
        point_kinds: vec![PointKind::Entity; x.rows()],
        coords: basis.project(x),
        method: ProjMethod::Pca,
        final_objective: basis.explained_variance_ratio(),
    })
}

/// Cyclic Jacobi for a symmetric matrix (row-major, destroyed in place).
/// Returns (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(a: &mut [f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                s += a[i * d + j] * a[i * d + j];
            }
        }
        s
    };
    let scale: f64 = (0..d).map(|i| a[i * d + i].abs()).fold(1e-300, f64::max);
    let tol = (scale * 1e-14).powi(2) * (d * d) as f64;

    for _sweep in 0..100 {
        if off(a) <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() <= scale * 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (vals, v)
}
