//! Test support: independent oracles (finite differences, sort-based
//! ranking), synthetic dataset generators, and small statistics helpers.
//! Used by this crate's tests and by downstream acceptance suites; not
//! part of the modeling API.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evaluator::RankOutcome;
use crate::kg::{KgDataset, Triple, Vocab};
use crate::models::{
    self, init_params, LossContext, ModelKind, ModelParams,
};
use crate::sampler::Batch;
use crate::trainer::LossKind;

/// Batch loss recomputed from scores and the loss definition, bypassing
/// the gradient path. This is the function the finite-difference oracle
/// differentiates.
pub fn batch_loss_oracle(params: &ModelParams, batch: &Batch, ctx: &LossContext) -> f64 {
    let mut total = 0.0;
    match ctx.loss {
        LossKind::Margin => {
            for (p, n) in batch.positives.iter().zip(&batch.negatives) {
                let v = ctx.margin - models::score(params, *p) + models::score(params, *n);
                if v > 0.0 {
                    total += v;
                }
            }
        }
        LossKind::Softplus => {
            let mut touched = std::collections::BTreeSet::new();
            for (p, n) in batch.positives.iter().zip(&batch.negatives) {
                total += models::softplus(-models::score(params, *p));
                total += models::softplus(models::score(params, *n));
                models::touched_rows(params, *p, &mut touched);
                models::touched_rows(params, *n, &mut touched);
            }
            if ctx.lambda > 0.0 {
                for (slot, row) in touched {
                    let sq: f64 = params.tensors[slot]
                        .row(row as usize)
                        .iter()
                        .map(|v| v * v)
                        .sum();
                    total += ctx.lambda * sq;
                }
            }
        }
    }
    total
}

/// Result of one finite-difference sweep over a (params, batch) draw.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    /// Worst relative error over interior components (central differences).
    pub max_central: f64,
    /// Worst relative error over KG2E clamp-boundary variance components
    /// (one-sided differences).
    pub max_boundary: f64,
    pub checked: usize,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

/// Compares the analytic batch gradient against finite differences of the
/// batch loss, component by component, over every touched row. Step size
/// is 1e-5 * max(1, |theta|); KG2E variance components sitting exactly on
/// a clamp bound are probed one-sided into the feasible region.
pub fn check_batch_grad(params: &mut ModelParams, batch: &Batch, ctx: &LossContext) -> FdReport {
    let (grads, _) = models::batch_grad(params, batch, ctx);
    let mut touched = std::collections::BTreeSet::new();
    for t in batch.positives.iter().chain(&batch.negatives) {
        models::touched_rows(params, *t, &mut touched);
    }
    let boundary = |kind: ModelKind, slot: usize, v: f64| -> Option<bool> {
        // Some(true) = at lower bound, Some(false) = at upper bound.
        if let ModelKind::Kg2e { clamp_min, clamp_max } = kind {
            if slot == 2 || slot == 3 {
                if v == clamp_min {
                    return Some(true);
                }
                if v == clamp_max {
                    return Some(false);
                }
            }
        }
        None
    };

    let mut report = FdReport::default();
    let kind = params.kind;
    for (slot, row) in touched {
        let cols = params.tensors[slot].cols();
        for col in 0..cols {
            let theta = params.tensors[slot].row(row as usize)[col];
            let analytic = grads.get(slot, row).map_or(0.0, |g| g[col]);
            let h = 1e-5 * 1.0f64.max(theta.abs());
            let mut eval_at = |v: f64| -> f64 {
                params.tensors[slot].row_mut(row as usize)[col] = v;
                let l = batch_loss_oracle(params, batch, ctx);
                params.tensors[slot].row_mut(row as usize)[col] = theta;
                l
            };
            match boundary(kind, slot, theta) {
                Some(at_lower) => {
                    // Second-order one-sided stencil into the feasible
                    // region: (-3f(x) + 4f(x+h) - f(x+2h)) / 2h.
                    let numeric = if at_lower {
                        (-3.0 * eval_at(theta) + 4.0 * eval_at(theta + h) - eval_at(theta + 2.0 * h))
                            / (2.0 * h)
                    } else {
                        (3.0 * eval_at(theta) - 4.0 * eval_at(theta - h) + eval_at(theta - 2.0 * h))
                            / (2.0 * h)
                    };
                    report.max_boundary = report.max_boundary.max(rel_err(analytic, numeric));
                }
                None => {
                    let numeric = (eval_at(theta + h) - eval_at(theta - h)) / (2.0 * h);
                    report.max_central = report.max_central.max(rel_err(analytic, numeric));
                }
            }
            report.checked += 1;
        }
    }
    report
}

/// Distance from the nearest non-differentiable point of the batch loss:
/// hinge boundaries for margin loss, L1/L2 norm kinks for the
/// translational kinds. Finite differences are only valid when this is
/// comfortably larger than the step; draws closer than that should be
/// skipped. Smooth configurations return infinity.
pub fn kink_margin(params: &ModelParams, batch: &Batch, ctx: &LossContext) -> f64 {
    let mut m = f64::INFINITY;
    if ctx.loss == LossKind::Margin {
        for (p, n) in batch.positives.iter().zip(&batch.negatives) {
            let v = ctx.margin - models::score(params, *p) + models::score(params, *n);
            m = m.min(v.abs());
        }
    }
    let l1 = match params.kind {
        ModelKind::TransE { l1 }
        | ModelKind::TransH { l1 }
        | ModelKind::TransR { l1 }
        | ModelKind::TransD { l1 } => Some(l1),
        _ => None,
    };
    if let Some(l1) = l1 {
        for t in batch.positives.iter().chain(&batch.negatives) {
            let delta = translational_delta(params, *t);
            if l1 {
                for d in &delta {
                    m = m.min(d.abs());
                }
            } else {
                m = m.min(delta.iter().map(|d| d * d).sum::<f64>().sqrt());
            }
        }
    }
    m
}

/// Re-derives the translational displacement vector for kink detection.
fn translational_delta(p: &ModelParams, t: Triple) -> Vec<f64> {
    let d = p.dim;
    let h = p.tensors[0].row(t.head as usize);
    let r = p.tensors[1].row(t.relation as usize);
    let tl = p.tensors[0].row(t.tail as usize);
    match p.kind {
        ModelKind::TransE { .. } => (0..d).map(|i| (h[i] - tl[i]) + r[i]).collect(),
        ModelKind::TransH { .. } => {
            let w = p.tensors[2].row(t.relation as usize);
            let wh: f64 = w.iter().zip(h).map(|(a, b)| a * b).sum();
            let wt: f64 = w.iter().zip(tl).map(|(a, b)| a * b).sum();
            (0..d)
                .map(|i| (h[i] - wh * w[i]) + r[i] - (tl[i] - wt * w[i]))
                .collect()
        }
        ModelKind::TransR { .. } => {
            let m = p.tensors[2].row(t.relation as usize);
            (0..d)
                .map(|i| {
                    let mc: f64 = (0..d).map(|j| m[i * d + j] * (h[j] - tl[j])).sum();
                    mc + r[i]
                })
                .collect()
        }
        ModelKind::TransD { .. } => {
            let hp = p.tensors[2].row(t.head as usize);
            let tp = p.tensors[2].row(t.tail as usize);
            let rp = p.tensors[3].row(t.relation as usize);
            let q: f64 = hp.iter().zip(h).map(|(a, b)| a * b).sum::<f64>()
                - tp.iter().zip(tl).map(|(a, b)| a * b).sum::<f64>();
            (0..d).map(|i| rp[i] * q + h[i] - tl[i] + r[i]).collect()
        }
        _ => unreachable!("not a translational kind"),
    }
}

/// Random parameters: Xavier init, with KG2E variances re-drawn uniformly
/// inside the clamp interval so variance gradients are exercised away
/// from the init value.
pub fn random_params(
    kind: ModelKind,
    n_entities: usize,
    n_relations: usize,
    dim: usize,
    seed: u64,
) -> ModelParams {
    let mut params = init_params(kind, n_entities, n_relations, dim, seed).unwrap();
    if let ModelKind::Kg2e { clamp_min, clamp_max } = kind {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x76_61_72);
        for slot in [2usize, 3] {
            for v in params.tensors[slot].data_mut() {
                *v = clamp_min + (clamp_max - clamp_min) * rng.random::<f64>();
            }
        }
    }
    params
}

/// Pins a subset of KG2E variance components exactly onto the clamp
/// bounds (alternating low/high), for one-sided difference checks.
pub fn pin_kg2e_boundary(params: &mut ModelParams, seed: u64, fraction: f64) {
    let ModelKind::Kg2e { clamp_min, clamp_max } = params.kind else {
        return;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x626e64);
    for slot in [2usize, 3] {
        let mut low = true;
        for v in params.tensors[slot].data_mut() {
            if rng.random::<f64>() < fraction {
                *v = if low { clamp_min } else { clamp_max };
                low = !low;
            }
        }
    }
}

/// A batch of random positives with one-slot corruptions, without any
/// dataset machinery.
pub fn random_batch(
    n_entities: u32,
    n_relations: u32,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Batch {
    let mut positives = Vec::with_capacity(len);
    let mut negatives = Vec::with_capacity(len);
    for _ in 0..len {
        let pos = Triple::new(
            rng.random_range(0..n_entities),
            rng.random_range(0..n_relations),
            rng.random_range(0..n_entities),
        );
        let corrupt_head = rng.random::<f64>() < 0.5;
        let neg = loop {
            let e = rng.random_range(0..n_entities);
            let cand = if corrupt_head {
                Triple::new(e, pos.relation, pos.tail)
            } else {
                Triple::new(pos.head, pos.relation, e)
            };
            if cand != pos {
                break cand;
            }
        };
        positives.push(pos);
        negatives.push(neg);
    }
    Batch {
        positives,
        negatives,
        epoch: 0,
        batch_index: 0,
    }
}

/// Sort-based ranking oracle: builds the full candidate score list, sorts
/// it, and counts strictly better eligible candidates. Independent of the
/// evaluator's single-pass counting.
pub fn brute_force_rank_triple(params: &ModelParams, t: Triple, d: &KgDataset) -> RankOutcome {
    let n = d.n_entities() as u32;
    let rank_dir = |true_id: u32, make: &dyn Fn(u32) -> Triple| -> (u32, u32) {
        let mut scored: Vec<(f64, u32)> = (0..n).map(|e| (models::score(params, make(e)), e)).collect();
        let s_true = scored[true_id as usize].0;
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut raw = 1;
        let mut filtered = 1;
        for &(s, e) in &scored {
            if s <= s_true {
                break;
            }
            if e == true_id {
                continue;
            }
            raw += 1;
            if !d.filter_index.contains(&make(e)) {
                filtered += 1;
            }
        }
        (raw, filtered)
    };
    let (tail_rank_raw, tail_rank_filtered) =
        rank_dir(t.tail, &|e| Triple::new(t.head, t.relation, e));
    let (head_rank_raw, head_rank_filtered) =
        rank_dir(t.head, &|e| Triple::new(e, t.relation, t.tail));
    RankOutcome {
        triple: t,
        head_rank_raw,
        head_rank_filtered,
        tail_rank_raw,
        tail_rank_filtered,
    }
}

/// Random dataset: uniformly drawn triples split into train/valid/test.
pub fn random_kg(
    n_entities: u32,
    n_relations: u32,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    seed: u64,
) -> KgDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b_67);
    let mut vocab = Vocab::new();
    for i in 0..n_entities {
        vocab.intern_entity(&format!("e{i}"));
    }
    for r in 0..n_relations {
        vocab.intern_relation(&format!("r{r}"));
    }
    let mut draw = |n: usize| -> Vec<Triple> {
        (0..n)
            .map(|_| {
                Triple::new(
                    rng.random_range(0..n_entities),
                    rng.random_range(0..n_relations),
                    rng.random_range(0..n_entities),
                )
            })
            .collect()
    };
    let train = draw(n_train);
    let valid = draw(n_valid);
    let test = draw(n_test);
    KgDataset::from_parts(vocab, train, valid, test).unwrap()
}

/// Planted-structure graph: entities 0..n on a ring, one relation per
/// offset, facts (i, +k, (i+k) mod n). A seeded fraction is held out as
/// the test split.
pub fn modular_translation_kg(
    n_entities: u32,
    offsets: &[u32],
    holdout_frac: f64,
    seed: u64,
) -> KgDataset {
    let mut vocab = Vocab::new();
    for i in 0..n_entities {
        vocab.intern_entity(&format!("e{i}"));
    }
    for k in offsets {
        vocab.intern_relation(&format!("+{k}"));
    }
    let mut all = Vec::new();
    for (r, &k) in offsets.iter().enumerate() {
        for i in 0..n_entities {
            all.push(Triple::new(i, r as u32, (i + k) % n_entities));
        }
    }
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f64);
    all.shuffle(&mut rng);
    let n_test = ((all.len() as f64) * holdout_frac).round() as usize;
    let test = all.split_off(all.len() - n_test);
    KgDataset::from_parts(vocab, all, vec![], test).unwrap()
}

/// Mean silhouette coefficient of 2-D points under the given labels.
pub fn silhouette(coords: &[[f64; 2]], labels: &[usize]) -> f64 {
    assert_eq!(coords.len(), labels.len());
    let n = coords.len();
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut own_sum = 0.0;
        let mut own_count = 0usize;
        let mut other: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist(coords[i], coords[j]);
            if labels[j] == labels[i] {
                own_sum += d;
                own_count += 1;
            } else {
                let e = other.entry(labels[j]).or_insert((0.0, 0));
                e.0 += d;
                e.1 += 1;
            }
        }
        if own_count == 0 || clusters.len() < 2 {
            continue;
        }
        let a = own_sum / own_count as f64;
        let b = other
            .values()
            .map(|(s, c)| s / *c as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// Two seeded Gaussian clusters in `dim` dimensions, `per_cluster` points
/// each, centers separated along every axis. Returns (matrix, labels).
pub fn two_gaussian_clusters(
    per_cluster: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> (crate::tensor::Tensor, Vec<usize>) {
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x63_6c);
    let mut rows = Vec::with_capacity(2 * per_cluster);
    let mut labels = Vec::with_capacity(2 * per_cluster);
    for cluster in 0..2usize {
        let center = if cluster == 0 { 0.0 } else { separation };
        for _ in 0..per_cluster {
            let row: Vec<f64> = (0..dim)
                .map(|_| center + rng.sample::<f64, _>(StandardNormal))
                .collect();
            rows.push(row);
            labels.push(cluster);
        }
    }
    (crate::tensor::Tensor::from_rows(rows), labels)
}
