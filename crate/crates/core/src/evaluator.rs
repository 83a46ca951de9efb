//! Link-prediction evaluation: the true entity is ranked against all
//! corruptions of the head and of the tail, raw and filtered.
//!
//! Ties break optimistically (only strictly better candidates count), and
//! the filtered setting excludes candidates that are themselves known
//! facts in train ∪ valid ∪ test. Evaluation is a pure read over the
//! parameters, partitioned across worker threads; the report is invariant
//! to the worker count because outcomes are re-assembled in split order
//! before aggregation.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::kg::{KgDataset, Triple};
use crate::models::{score, ModelParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("split '{0}' is empty")]
    EmptySplit(&'static str),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Which stored split to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Valid,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Ranks of the true head and tail for one triple, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankOutcome {
    pub triple: Triple,
    pub head_rank_raw: u32,
    pub head_rank_filtered: u32,
    pub tail_rank_raw: u32,
    pub tail_rank_filtered: u32,
}

/// Aggregated metrics over one split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mean_rank_raw: f64,
    pub mean_rank_filtered: f64,
    pub hits_ks: Vec<u32>,
    pub hits_raw: Vec<f64>,
    pub hits_filtered: Vec<f64>,
    pub n_triples: usize,
    /// Head plus tail ranks: 2 * n_triples.
    pub n_ranks: usize,
}

/// Ranks the true entity among all candidates under an arbitrary scoring
/// closure. `filter` marks candidate ids that are known facts and must be
/// skipped in the filtered count (the true entity is never skipped).
fn rank_candidates(
    n_entities: u32,
    true_id: u32,
    score_of: impl Fn(u32) -> f64,
    is_known: impl Fn(u32) -> bool,
) -> (u32, u32) {
    let s_true = score_of(true_id);
    let mut raw = 0u32;
    let mut filtered = 0u32;
    for e in 0..n_entities {
        if e == true_id {
            continue;
        }
        if score_of(e) > s_true {
            raw += 1;
            if !is_known(e) {
                filtered += 1;
            }
        }
    }
    (raw + 1, filtered + 1)
}

/// Raw and filtered ranks for both prediction directions of `t`.
pub fn rank_triple(params: &ModelParams, t: Triple, d: &KgDataset) -> RankOutcome {
    let n = d.n_entities() as u32;
    let (tail_rank_raw, tail_rank_filtered) = rank_candidates(
        n,
        t.tail,
        |e| score(params, Triple::new(t.head, t.relation, e)),
        |e| d.filter_index.contains(&Triple::new(t.head, t.relation, e)),
    );
    let (head_rank_raw, head_rank_filtered) = rank_candidates(
        n,
        t.head,
        |e| score(params, Triple::new(e, t.relation, t.tail)),
        |e| d.filter_index.contains(&Triple::new(e, t.relation, t.tail)),
    );
    RankOutcome {
        triple: t,
        head_rank_raw,
        head_rank_filtered,
        tail_rank_raw,
        tail_rank_filtered,
    }
}

/// Ranks every triple of `split`, partitioned over `workers` threads.
/// Output order equals input order regardless of the worker count.
pub fn rank_triples(
    params: &ModelParams,
    split: &[Triple],
    d: &KgDataset,
    workers: usize,
) -> Vec<RankOutcome> {
    let workers = workers.max(1).min(split.len().max(1));
    if workers == 1 {
        return split.iter().map(|&t| rank_triple(params, t, d)).collect();
    }
    let chunk = split.len().div_ceil(workers);
    let mut results: Vec<Vec<RankOutcome>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = split
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&t| rank_triple(params, t, d)).collect::<Vec<_>>()))
            .collect();
        results = handles.into_iter().map(|h| h.join().unwrap()).collect();
    });
    results.into_iter().flatten().collect()
}

/// Pools head and tail ranks into mean rank and hits@k, raw and filtered.
pub fn aggregate(outcomes: &[RankOutcome], ks: &[u32]) -> MetricsReport {
    let n_ranks = outcomes.len() * 2;
    let mut sum_raw = 0.0;
    let mut sum_filtered = 0.0;
    let mut hits_raw = vec![0usize; ks.len()];
    let mut hits_filtered = vec![0usize; ks.len()];
    for o in outcomes {
        for (raw, filt) in [
            (o.head_rank_raw, o.head_rank_filtered),
            (o.tail_rank_raw, o.tail_rank_filtered),
        ] {
            sum_raw += f64::from(raw);
            sum_filtered += f64::from(filt);
            for (i, &k) in ks.iter().enumerate() {
                if raw <= k {
                    hits_raw[i] += 1;
                }
                if filt <= k {
                    hits_filtered[i] += 1;
                }
            }
        }
    }
    let denom = n_ranks.max(1) as f64;
    MetricsReport {
        mean_rank_raw: sum_raw / denom,
        mean_rank_filtered: sum_filtered / denom,
        hits_ks: ks.to_vec(),
        hits_raw: hits_raw.iter().map(|&h| h as f64 / denom).collect(),
        hits_filtered: hits_filtered.iter().map(|&h| h as f64 / denom).collect(),
        n_triples: outcomes.len(),
        n_ranks,
    }
}

/// Full link-prediction evaluation of a stored split.
pub fn evaluate(
    params: &ModelParams,
    d: &KgDataset,
    split: Split,
    ks: &[u32],
    workers: usize,
) -> Result<MetricsReport, EvalError> {
    let triples = match split {
        Split::Valid => &d.valid,
        Split::Test => &d.test,
    };
    if triples.is_empty() {
        return Err(EvalError::EmptySplit(split.name()));
    }
    let outcomes = rank_triples(params, triples, d, workers);
    Ok(aggregate(&outcomes, ks))
}

/// Writes `metrics.csv` as (metric, raw, filtered) rows.
pub fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("metric,raw,filtered\n");
    out.push_str(&format!(
        "mean_rank,{},{}\n",
        report.mean_rank_raw, report.mean_rank_filtered
    ));
    for (i, &k) in report.hits_ks.iter().enumerate() {
        out.push_str(&format!(
            "hits@{},{},{}\n",
            k, report.hits_raw[i], report.hits_filtered[i]
        ));
    }
    out.push_str(&format!(
        "triples,{},{}\n",
        report.n_triples, report.n_triples
    ));
    fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Writes `ranks.csv` with per-triple outcomes (ordinal ids).
pub fn write_ranks_csv(outcomes: &[RankOutcome], path: &Path) -> Result<(), EvalError> {
    let mut out = String::from(
        "head,relation,tail,head_rank_raw,head_rank_filtered,tail_rank_raw,tail_rank_filtered\n",
    );
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            o.triple.head,
            o.triple.relation,
            o.triple.tail,
            o.head_rank_raw,
            o.head_rank_filtered,
            o.tail_rank_raw,
            o.tail_rank_filtered
        ));
    }
    fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_owned(),
        source,
    })
}
