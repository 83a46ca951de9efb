//! `kge` — train, tune, evaluate, and project knowledge graph embeddings.
//!
//! Exit codes: 0 success, 1 user error (bad flags, config, or dataset),
//! 2 internal failure (numeric blow-up, output i/o). Progress goes to
//! stderr; stdout stays clean for machine-readable output such as the
//! tuner's golden-setting echo.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use kge_core::config::{self, Overrides, RunConfig};
use kge_core::evaluator::{self, Split};
use kge_core::kg::{self, KgDataset, SplitFiles};
use kge_core::models::ModelParams;
use kge_core::projector::{self, PointKind, ProjMethod};
use kge_core::sampler::Strategy;
use kge_core::trainer::{self, LossKind, OptKind};
use kge_core::tuner::{self, SearchSpace, TuneOptions};

#[derive(Parser)]
#[command(
    name = "kge",
    version,
    about = "Knowledge graph embedding toolkit: train, tune, evaluate, and project embedding models over triple datasets.",
    after_help = "`-mn` is accepted as an alias for `--model`. Datasets are directories with \
                  train.txt/valid.txt/test.txt (tab-separated head, relation, tail per line)."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model, evaluate it on the test split, and export results
    Train(TrainArgs),
    /// Search hyperparameters with the Bayesian (TPE) tuner
    Tune(TuneArgs),
    /// Evaluate a saved model checkpoint on a split
    Eval(EvalArgs),
    /// Project a saved model's embeddings to 2-D (PCA or t-SNE)
    Project(ProjectArgs),
}

/// Flags shared by train and tune mirroring the config file keys.
#[derive(Args, Clone, Default)]
struct HpFlags {
    /// Model kind (transe, transh, transr, transd, rescal, distmult, complex, kg2e)
    #[arg(long)]
    model: Option<String>,
    /// Dataset directory containing the three split files
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// JSON config file; CLI flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: kge_out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from the model's golden hyperparameter preset
    #[arg(long, num_args(0..=1), default_missing_value = "true")]
    golden: Option<bool>,
    /// Use L1 distance in translational scores (L2 otherwise)
    #[arg(long, value_name = "BOOL", num_args(0..=1), default_missing_value = "true")]
    l1_flag: Option<bool>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Embedding dimension d
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Margin for the ranking loss
    #[arg(long)]
    margin: Option<f64>,
    /// Optimizer: sgd or adam
    #[arg(long)]
    opt: Option<String>,
    /// Negative sampling strategy: uniform or bern
    #[arg(long)]
    samp: Option<String>,
    /// Loss: margin or softplus
    #[arg(long)]
    loss_kind: Option<String>,
    /// L2 weight for the softplus loss
    #[arg(long)]
    lambda_reg: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Validate every N epochs (0 = once at the end)
    #[arg(long)]
    eval_every: Option<usize>,
    /// Sampler and evaluator worker threads
    #[arg(long)]
    workers: Option<usize>,
    /// Bounded batch queue capacity
    #[arg(long)]
    queue_capacity: Option<usize>,
    /// Resample negatives that collide with train facts
    #[arg(long, value_name = "BOOL", num_args(0..=1), default_missing_value = "true")]
    neg_reject: Option<bool>,
    /// Comma-separated hits@k cutoffs, e.g. 1,3,5,10
    #[arg(long, value_parser = parse_hits_ks)]
    hits_ks: Option<std::vec::Vec<u32>>,
}

fn parse_hits_ks(s: &str) -> Result<Vec<u32>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("bad hits@k list: {e}")))
        .collect()
}

impl HpFlags {
    fn overrides(&self) -> Result<Overrides, Failure> {
        let named = |key: &str, v: &Option<String>, f: &dyn Fn(&str) -> bool| -> Result<(), Failure> {
            match v {
                Some(s) if !f(s) => Err(Failure::user(format!("key '{key}': unknown value '{s}'"))),
                _ => Ok(()),
            }
        };
        named("opt", &self.opt, &|s| OptKind::from_name(s).is_some())?;
        named("samp", &self.samp, &|s| Strategy::from_name(s).is_some())?;
        named("loss_kind", &self.loss_kind, &|s| LossKind::from_name(s).is_some())?;
        Ok(Overrides {
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            out: self.out.clone(),
            golden: self.golden,
            l1_flag: self.l1_flag,
            batch_size: self.batch_size,
            epochs: self.epochs,
            hidden_size: self.hidden_size,
            learning_rate: self.learning_rate,
            margin: self.margin,
            opt: self.opt.as_deref().and_then(OptKind::from_name),
            samp: self.samp.as_deref().and_then(Strategy::from_name),
            loss_kind: self.loss_kind.as_deref().and_then(LossKind::from_name),
            lambda_reg: self.lambda_reg,
            seed: self.seed,
            eval_every: self.eval_every,
            workers: self.workers,
            queue_capacity: self.queue_capacity,
            reject_train_positives: self.neg_reject,
            hits_ks: self.hits_ks.clone(),
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    hp: HpFlags,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    hp: HpFlags,
    /// Number of trials to run (including any resumed from the log)
    #[arg(long, default_value_t = 20)]
    budget: usize,
    /// Trial log path (default: <out>/trials.jsonl)
    #[arg(long)]
    trials: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved checkpoint written by `kge train`
    #[arg(long)]
    model_file: PathBuf,
    /// Dataset directory the model was trained on
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Split to evaluate: valid or test
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Comma-separated hits@k cutoffs
    #[arg(long, value_parser = parse_hits_ks)]
    hits_ks: Option<std::vec::Vec<u32>>,
}

#[derive(Args)]
struct ProjectArgs {
    /// Saved checkpoint written by `kge train`
    #[arg(long)]
    model_file: PathBuf,
    /// Dataset directory (provides the labels)
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Projection method: tsne or pca
    #[arg(long, default_value = "tsne")]
    proj: String,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    /// t-SNE gradient descent iterations
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Subsample to at most this many points before projecting
    #[arg(long, default_value_t = 1000)]
    max_points: usize,
    #[arg(long, default_value_t = 13)]
    seed: u64,
}

/// Failure classes mapped to exit codes.
enum Failure {
    User(String),
    Internal(String),
}

impl Failure {
    fn user(msg: impl Into<String>) -> Self {
        Failure::User(msg.into())
    }

    fn internal(msg: impl Into<String>) -> Self {
        Failure::Internal(msg.into())
    }
}

fn main() -> ExitCode {
    // `-mn <model>` mirrors the published example invocations.
    let argv: Vec<String> = std::env::args()
        .map(|a| if a == "-mn" { "--model".to_owned() } else { a })
        .collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Tune(args) => cmd_tune(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Project(args) => cmd_project(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("kge: {msg}");
            eprintln!("hint: check the flags, config file, and dataset; `kge --help` lists every option");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("kge: {msg}");
            eprintln!("hint: this is a runtime failure, not a usage error; try a smaller learning rate or a fresh output directory");
            ExitCode::from(2)
        }
    }
}

/// Loads the dataset through the on-disk cache: a valid cache is reused,
/// anything else (missing, stale version, corrupt) falls back to parsing
/// and rewrites the cache.
fn load_dataset(dir: &Path) -> Result<Arc<KgDataset>, Failure> {
    let cache = kg::cache_path(dir);
    if cache.exists() {
        match kg::load_cache(&cache) {
            Ok(d) => {
                eprintln!("loaded cached dataset from {}", cache.display());
                return Ok(Arc::new(d));
            }
            Err(e) => eprintln!("cache unusable ({e}); re-parsing"),
        }
    }
    let d = kg::parse_dataset(dir, &SplitFiles::default()).map_err(|e| Failure::user(e.to_string()))?;
    let summary = d.load_summary();
    eprintln!(
        "parsed {}: |E|={} |R|={} train={} valid={} test={}",
        dir.display(),
        summary.n_entities,
        summary.n_relations,
        summary.n_train,
        summary.n_valid,
        summary.n_test
    );
    if summary.entities_not_in_train > 0 || summary.relations_not_in_train > 0 {
        eprintln!(
            "warning: {} entities and {} relations appear only in valid/test",
            summary.entities_not_in_train, summary.relations_not_in_train
        );
    }
    if let Err(e) = kg::save_cache(&d, &cache) {
        eprintln!("warning: could not write dataset cache: {e}");
    }
    Ok(Arc::new(d))
}

fn load_run_config(flags: &HpFlags) -> Result<RunConfig, Failure> {
    let cli_ov = flags.overrides()?;
    config::load_config(flags.config.as_deref(), &cli_ov).map_err(|e| Failure::user(e.to_string()))
}

fn ensure_out_dir(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::internal(format!("cannot create output dir {}: {e}", out.display())))
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = load_run_config(&args.hp)?;
    let dataset = load_dataset(&cfg.dataset_dir)?;
    let kind = cfg.model_kind().map_err(|e| Failure::user(e.to_string()))?;
    ensure_out_dir(&cfg.out_dir)?;

    eprintln!(
        "training {} on {} ({} epochs, d={}, {} loss, {} sampling)",
        cfg.model,
        cfg.dataset_dir.display(),
        cfg.hp.epochs,
        cfg.hp.hidden_size,
        cfg.hp.loss_kind.name(),
        cfg.hp.samp.name()
    );
    let epochs = cfg.hp.epochs;
    let (params, record) = trainer::train_with_progress(
        dataset.clone(),
        kind,
        &cfg.hp,
        &cfg.sampler,
        |epoch, loss, secs| {
            eprintln!("epoch {}/{epochs} loss {loss:.6} ({secs:.2}s)", epoch + 1);
        },
    )
    .map_err(|e| match e {
        trainer::TrainError::NonFiniteLoss { .. } => Failure::internal(e.to_string()),
        other => Failure::user(other.to_string()),
    })?;

    let model_path = cfg.out_dir.join("model.bin");
    trainer::save_model(&params, &model_path).map_err(|e| Failure::internal(e.to_string()))?;

    let outcomes = evaluator::rank_triples(&params, &dataset.test, &dataset, cfg.eval.workers);
    if outcomes.is_empty() {
        return Err(Failure::user("test split is empty; nothing to evaluate"));
    }
    let report = evaluator::aggregate(&outcomes, &cfg.eval.hits_ks);
    evaluator::write_ranks_csv(&outcomes, &cfg.out_dir.join("ranks.csv"))
        .map_err(|e| Failure::internal(e.to_string()))?;

    match build_projection(&params, &dataset, ProjMethod::Pca, 30.0, 0, 1000, cfg.hp.seed) {
        Ok(proj) => {
            projector::export_plots(&record, &report, &proj, &cfg.out_dir)
                .map_err(|e| Failure::internal(e.to_string()))?;
        }
        Err(_) => {
            // Embedding too small to project (e.g. d = 1); export the rest.
            trainer::write_loss_csv(&record, &cfg.out_dir.join("loss.csv"))
                .map_err(|e| Failure::internal(e.to_string()))?;
            evaluator::write_metrics_csv(&report, &cfg.out_dir.join("metrics.csv"))
                .map_err(|e| Failure::internal(e.to_string()))?;
        }
    }

    eprintln!(
        "test metrics: mean rank {:.2} (filtered {:.2}), hits@10 {:.3} (filtered {:.3})",
        report.mean_rank_raw,
        report.mean_rank_filtered,
        hits_at(&report, 10).0,
        hits_at(&report, 10).1,
    );
    eprintln!("outputs written to {}", cfg.out_dir.display());
    Ok(())
}

fn hits_at(report: &kge_core::MetricsReport, k: u32) -> (f64, f64) {
    report
        .hits_ks
        .iter()
        .position(|&x| x == k)
        .map(|i| (report.hits_raw[i], report.hits_filtered[i]))
        .unwrap_or((f64::NAN, f64::NAN))
}

fn cmd_tune(args: TuneArgs) -> Result<(), Failure> {
    let cfg = load_run_config(&args.hp)?;
    let dataset = load_dataset(&cfg.dataset_dir)?;
    ensure_out_dir(&cfg.out_dir)?;
    let mut space = SearchSpace::for_model(&cfg.model).map_err(|e| Failure::user(e.to_string()))?;
    space.base = cfg.hp.clone();
    // Hyperparameters set explicitly (config file or flags) are pinned;
    // unset ones are searched.
    let cli_ov = args.hp.overrides()?;
    let file_ov = match &args.hp.config {
        Some(p) => config::parse_file(p).map_err(|e| Failure::user(e.to_string()))?,
        None => Overrides::default(),
    };
    let pinned = file_ov.merged_with(&cli_ov);
    if let Some(v) = pinned.l1_flag {
        space.l1_flag = vec![v];
    }
    if let Some(v) = pinned.opt {
        space.opt = vec![v];
    }
    if let Some(v) = pinned.samp {
        space.samp = vec![v];
    }
    if let Some(v) = pinned.loss_kind {
        space.loss_kind = vec![v];
    }
    if let Some(v) = pinned.batch_size {
        space.batch_size = vec![v];
    }
    if let Some(v) = pinned.hidden_size {
        space.hidden_size = vec![v];
    }
    if let Some(v) = pinned.epochs {
        space.epochs = vec![v];
    }
    if let Some(v) = pinned.learning_rate {
        space.learning_rate = (v, v);
    }
    if let Some(v) = pinned.margin {
        space.margin = (v, v);
    }
    let opts = TuneOptions {
        seed: cfg.hp.seed,
        workers: cfg.sampler.workers,
        queue_capacity: cfg.sampler.queue_capacity,
        reject_train_positives: cfg.sampler.reject_train_positives,
        trials_path: Some(
            args.trials
                .unwrap_or_else(|| cfg.out_dir.join("trials.jsonl")),
        ),
    };
    eprintln!(
        "tuning {} for {} trials (objective: filtered mean rank on valid)",
        cfg.model, args.budget
    );
    let (best, history) = tuner::tune(dataset, &cfg.model, &space, args.budget, &opts).map_err(|e| {
        match e {
            tuner::TuneError::AllTrialsFailed(_) => Failure::internal(e.to_string()),
            tuner::TuneError::Train(trainer::TrainError::NonFiniteLoss { .. }) => {
                Failure::internal(e.to_string())
            }
            other => Failure::user(other.to_string()),
        }
    })?;
    eprintln!(
        "finished {} trials; best filtered mean rank {:.3}",
        history.len(),
        best.objective.unwrap_or(f64::NAN)
    );
    println!("Found Golden Setting:");
    println!("{}", tuner::format_golden(&best.hp));
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let split = Split::from_name(&args.split)
        .ok_or_else(|| Failure::user(format!("unknown split '{}'; use valid or test", args.split)))?;
    let params = trainer::load_model(&args.model_file).map_err(|e| Failure::user(e.to_string()))?;
    let dataset = load_dataset(&args.dataset)?;
    check_model_matches(&params, &dataset)?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("kge_out"));
    ensure_out_dir(&out)?;
    let ks = args.hits_ks.unwrap_or_else(|| vec![1, 3, 5, 10]);
    let triples = match split {
        Split::Valid => &dataset.valid,
        Split::Test => &dataset.test,
    };
    if triples.is_empty() {
        return Err(Failure::user(format!("{} split is empty", split.name())));
    }
    let outcomes = evaluator::rank_triples(&params, triples, &dataset, args.workers.max(1));
    let report = evaluator::aggregate(&outcomes, &ks);
    evaluator::write_metrics_csv(&report, &out.join("metrics.csv"))
        .map_err(|e| Failure::internal(e.to_string()))?;
    evaluator::write_ranks_csv(&outcomes, &out.join("ranks.csv"))
        .map_err(|e| Failure::internal(e.to_string()))?;
    eprintln!(
        "{} on {}: mean rank {:.2} (filtered {:.2}) over {} triples",
        params.kind.name(),
        split.name(),
        report.mean_rank_raw,
        report.mean_rank_filtered,
        report.n_triples
    );
    eprintln!("outputs written to {}", out.display());
    Ok(())
}

fn check_model_matches(params: &ModelParams, dataset: &KgDataset) -> Result<(), Failure> {
    if params.n_entities != dataset.n_entities() || params.n_relations != dataset.n_relations() {
        return Err(Failure::user(format!(
            "checkpoint was trained on |E|={} |R|={} but the dataset has |E|={} |R|={}",
            params.n_entities,
            params.n_relations,
            dataset.n_entities(),
            dataset.n_relations()
        )));
    }
    Ok(())
}

fn cmd_project(args: ProjectArgs) -> Result<(), Failure> {
    let method = ProjMethod::from_name(&args.proj)
        .ok_or_else(|| Failure::user(format!("unknown projection '{}'; use pca or tsne", args.proj)))?;
    let params = trainer::load_model(&args.model_file).map_err(|e| Failure::user(e.to_string()))?;
    let dataset = load_dataset(&args.dataset)?;
    check_model_matches(&params, &dataset)?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("kge_out"));
    ensure_out_dir(&out)?;
    let proj = build_projection(
        &params,
        &dataset,
        method,
        args.perplexity,
        args.iters,
        args.max_points,
        args.seed,
    )
    .map_err(|e| Failure::user(e.to_string()))?;
    projector::write_embedding_csv(&proj, &out.join("embedding_2d.csv"))
        .map_err(|e| Failure::internal(e.to_string()))?;
    projector::write_embedding_svg(&proj, &out.join("embedding_2d.svg"))
        .map_err(|e| Failure::internal(e.to_string()))?;
    eprintln!(
        "projected {} points with {} (objective {:.4}); outputs in {}",
        proj.len(),
        method.name(),
        proj.final_objective,
        out.display()
    );
    Ok(())
}

/// Entity and relation embeddings in one shared projection, subsampled to
/// `max_points` with a seeded draw when necessary.
fn build_projection(
    params: &ModelParams,
    dataset: &KgDataset,
    method: ProjMethod,
    perplexity: f64,
    iters: usize,
    max_points: usize,
    seed: u64,
) -> Result<kge_core::projector::ProjectionResult, kge_core::projector::ProjectorError> {
    let matrix = params.projection_matrix();
    let mut labels: Vec<String> = dataset
        .vocab
        .entity_labels()
        .iter()
        .cloned()
        .chain(dataset.vocab.relation_labels().iter().cloned())
        .collect();
    let mut kinds: Vec<PointKind> = std::iter::repeat_n(PointKind::Entity, params.n_entities)
        .chain(std::iter::repeat_n(PointKind::Relation, params.n_relations))
        .collect();

    let (matrix, labels, kinds) = if matrix.rows() > max_points.max(2) {
        let keep = subsample_indices(matrix.rows(), max_points.max(2), seed);
        let rows: Vec<Vec<f64>> = keep.iter().map(|&i| matrix.row(i).to_vec()).collect();
        let labels: Vec<String> = keep.iter().map(|&i| labels[i].clone()).collect();
        let kinds: Vec<PointKind> = keep.iter().map(|&i| kinds[i]).collect();
        (kge_core::tensor::Tensor::from_rows(rows), labels, kinds)
    } else {
        (matrix, std::mem::take(&mut labels), std::mem::take(&mut kinds))
    };

    let proj = match method {
        ProjMethod::Pca => projector::pca_2d(&matrix)?,
        ProjMethod::Tsne => projector::tsne_2d(&matrix, perplexity, iters, seed)?,
    };
    Ok(proj.with_labels(labels, kinds))
}

fn subsample_indices(n: usize, keep: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x7375_6273);
    idx.shuffle(&mut rng);
    idx.truncate(keep);
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn hits_ks_parser() {
        assert_eq!(parse_hits_ks("1,3,5,10").unwrap(), vec![1, 3, 5, 10]);
        assert_eq!(parse_hits_ks("7").unwrap(), vec![7]);
        assert!(parse_hits_ks("1,x").is_err());
    }

    #[test]
    fn subsample_is_deterministic_and_sorted() {
        let a = subsample_indices(100, 10, 5);
        let b = subsample_indices(100, 10, 5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
