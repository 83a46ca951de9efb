//! Mini-batch generation with negative sampling.
//!
//! Worker threads walk a seeded per-epoch permutation of the train split,
//! corrupt one entity per positive, and push finished batches into a
//! bounded queue. The consumer side is a plain iterator; dropping it
//! closes the queue and the workers drain out cooperatively.
//!
//! Determinism contract: with `workers = 1` and a fixed seed the batch
//! sequence is identical across runs. With several workers each owns a
//! disjoint set of batch indices and its own RNG stream derived from
//! (seed, worker, epoch), so batch contents stay reproducible even though
//! arrival order is not.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{KgDataset, Triple};

/// How the corrupted slot is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Head or tail with probability 1/2.
    Uniform,
    /// Head with probability tph/(tph+hpt) for the triple's relation,
    /// which reduces false negatives on 1-to-N and N-to-1 relations.
    Bern,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::Bern => "bern",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(Strategy::Uniform),
            "bern" => Some(Strategy::Bern),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub batch_size: usize,
    /// Resample negatives that collide with known train triples
    /// (bounded; see [`Corruptor::corrupt`]). Off by default: pure
    /// open-world sampling.
    pub reject_train_positives: bool,
    pub seed: u64,
    pub workers: usize,
    pub queue_capacity: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Bern,
            batch_size: 128,
            reject_train_positives: false,
            seed: 13,
            workers: 1,
            queue_capacity: 8,
        }
    }
}

/// Aligned positives and corrupted negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub positives: Vec<Triple>,
    pub negatives: Vec<Triple>,
    pub epoch: usize,
    pub batch_index: usize,
}

/// Head-replacement probability for a triple under the configured
/// strategy. Falls back to 1/2 when a relation has no train statistics.
pub fn head_probability(d: &KgDataset, strategy: Strategy, relation: u32) -> f64 {
    match strategy {
        Strategy::Uniform => 0.5,
        Strategy::Bern => d
            .bern_stats
            .get(&relation)
            .map(|s| s.tph / (s.tph + s.hpt))
            .unwrap_or(0.5),
    }
}

/// Shared corruption state: dataset handle, optional train index for
/// rejection, and a saturation counter for exhausted rejection loops.
pub struct Corruptor {
    dataset: Arc<KgDataset>,
    strategy: Strategy,
    reject_train_positives: bool,
    train_set: Option<HashSet<Triple>>,
    saturation: AtomicU64,
}

const REJECT_ATTEMPTS: usize = 100;

impl Corruptor {
    pub fn new(dataset: Arc<KgDataset>, cfg: &SamplerConfig) -> Self {
        let train_set = cfg
            .reject_train_positives
            .then(|| dataset.train.iter().copied().collect());
        Self {
            dataset,
            strategy: cfg.strategy,
            reject_train_positives: cfg.reject_train_positives,
            train_set,
            saturation: AtomicU64::new(0),
        }
    }

    /// Replaces the head or tail of `t` with a random entity. The slot is
    /// chosen per the strategy; candidates equal to the original entity
    /// (and, with rejection on, candidates present in the train split)
    /// are resampled up to 100 times. When the bound is exhausted the last
    /// candidate is returned and the saturation counter goes up — a signal
    /// of a near-complete relation, not an error.
    pub fn corrupt<R: Rng>(&self, t: Triple, rng: &mut R) -> Triple {
        let n = self.dataset.n_entities() as u32;
        let p_head = head_probability(&self.dataset, self.strategy, t.relation);
        let corrupt_head = rng.random::<f64>() < p_head;
        let mut candidate = t;
        for _ in 0..REJECT_ATTEMPTS {
            let e = rng.random_range(0..n);
            candidate = if corrupt_head {
                Triple::new(e, t.relation, t.tail)
            } else {
                Triple::new(t.head, t.relation, e)
            };
            let differs = candidate != t;
            let clashes = self.reject_train_positives
                && self
                    .train_set
                    .as_ref()
                    .is_some_and(|s| s.contains(&candidate));
            if differs && !clashes {
                return candidate;
            }
        }
        self.saturation.fetch_add(1, Ordering::Relaxed);
        candidate
    }

    /// Number of corruptions that exhausted the rejection bound.
    pub fn saturation_count(&self) -> u64 {
        self.saturation.load(Ordering::Relaxed)
    }
}

/// Number of batches one epoch yields.
pub fn batches_per_epoch(n_train: usize, batch_size: usize) -> usize {
    n_train.div_ceil(batch_size)
}

fn stream_rng(seed: u64, worker: u64, epoch: u64, tag: u8) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&worker.to_le_bytes());
    key[16..24].copy_from_slice(&epoch.to_le_bytes());
    key[24] = tag;
    ChaCha8Rng::from_seed(key)
}

/// Permutation of train indices for one epoch; identical for every worker
/// given the same seed.
fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, u64::MAX, epoch as u64, 0x50);
    perm.shuffle(&mut rng);
    perm
}

/// Producer-side handle: an iterator over batches for `epochs` epochs.
pub struct BatchStream {
    rx: Option<Receiver<Batch>>,
    handles: Vec<JoinHandle<()>>,
    corruptor: Arc<Corruptor>,
    pub batches_per_epoch: usize,
}

impl BatchStream {
    /// Spawns the worker threads immediately.
    pub fn spawn(dataset: Arc<KgDataset>, cfg: SamplerConfig, epochs: usize) -> Self {
        assert!(cfg.batch_size >= 1 && cfg.workers >= 1 && cfg.queue_capacity >= 1);
        assert!(!dataset.train.is_empty(), "train split is empty");
        let n = dataset.train.len();
        let n_batches = batches_per_epoch(n, cfg.batch_size);
        let corruptor = Arc::new(Corruptor::new(dataset.clone(), &cfg));
        let (tx, rx) = bounded::<Batch>(cfg.queue_capacity);

        let mut handles = Vec::with_capacity(cfg.workers);
        for worker in 0..cfg.workers {
            let dataset = dataset.clone();
            let corruptor = corruptor.clone();
            let tx = tx.clone();
            let cfg = cfg.clone();
            handles.push(std::thread::spawn(move || {
                for epoch in 0..epochs {
                    let perm = epoch_permutation(n, cfg.seed, epoch);
                    let mut rng = stream_rng(cfg.seed, worker as u64, epoch as u64, 0x43);
                    for batch_index in (worker..n_batches).step_by(cfg.workers) {
                        let lo = batch_index * cfg.batch_size;
                        let hi = (lo + cfg.batch_size).min(n);
                        let positives: Vec<Triple> =
                            perm[lo..hi].iter().map(|&i| dataset.train[i]).collect();
                        let negatives: Vec<Triple> = positives
                            .iter()
                            .map(|&t| corruptor.corrupt(t, &mut rng))
                            .collect();
                        let batch = Batch {
                            positives,
                            negatives,
                            epoch,
                            batch_index,
                        };
                        // Consumer gone: stop producing.
                        if tx.send(batch).is_err() {
                            return;
                        }
                    }
                }
            }));
        }
        Self {
            rx: Some(rx),
            handles,
            corruptor,
            batches_per_epoch: n_batches,
        }
    }

    pub fn saturation_count(&self) -> u64 {
        self.corruptor.saturation_count()
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for BatchStream {
    fn drop(&mut self) {
        // Closing the receiver unblocks any worker waiting on a full queue.
        self.rx = None;
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Vocab;
    use std::collections::HashMap;

    fn chain_dataset(n_entities: u32, n_rel: u32) -> Arc<KgDataset> {
        let mut vocab = Vocab::new();
        for i in 0..n_entities {
            vocab.intern_entity(&format!("e{i}"));
        }
        for r in 0..n_rel {
            vocab.intern_relation(&format!("r{r}"));
        }
        let mut train = Vec::new();
        for r in 0..n_rel {
            for i in 0..n_entities {
                train.push(Triple::new(i, r, (i + 1 + r) % n_entities));
            }
        }
        Arc::new(KgDataset::from_parts(vocab, train, vec![], vec![]).unwrap())
    }

    #[test]
    fn batch_sizes_follow_ceiling_division() {
        assert_eq!(batches_per_epoch(10, 4), 3);
        let d = chain_dataset(10, 1);
        let cfg = SamplerConfig {
            batch_size: 4,
            ..SamplerConfig::default()
        };
        let sizes: Vec<usize> = BatchStream::spawn(d, cfg, 1)
            .map(|b| b.positives.len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn epoch_covers_train_exactly_once() {
        let d = chain_dataset(23, 2);
        let cfg = SamplerConfig {
            batch_size: 5,
            workers: 3,
            ..SamplerConfig::default()
        };
        let mut seen: HashMap<Triple, usize> = HashMap::new();
        for b in BatchStream::spawn(d.clone(), cfg, 1) {
            assert_eq!(b.positives.len(), b.negatives.len());
            for t in &b.positives {
                *seen.entry(*t).or_default() += 1;
            }
        }
        let mut expected: HashMap<Triple, usize> = HashMap::new();
        for t in &d.train {
            *expected.entry(*t).or_default() += 1;
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn negatives_differ_in_exactly_one_slot() {
        let d = chain_dataset(17, 2);
        let cfg = SamplerConfig {
            batch_size: 6,
            workers: 2,
            ..SamplerConfig::default()
        };
        for b in BatchStream::spawn(d, cfg, 2) {
            for (p, n) in b.positives.iter().zip(&b.negatives) {
                assert_eq!(p.relation, n.relation);
                let head_changed = p.head != n.head;
                let tail_changed = p.tail != n.tail;
                assert!(head_changed ^ tail_changed, "pos {p:?} neg {n:?}");
            }
        }
    }

    #[test]
    fn single_worker_stream_is_deterministic() {
        let d = chain_dataset(19, 2);
        let cfg = SamplerConfig {
            batch_size: 7,
            seed: 7,
            workers: 1,
            ..SamplerConfig::default()
        };
        let a: Vec<Batch> = BatchStream::spawn(d.clone(), cfg.clone(), 3).collect();
        let b: Vec<Batch> = BatchStream::spawn(d, cfg, 3).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn bern_head_probability_from_stats() {
        // tph=1.5, hpt=1.5 → 0.5; tph=3, hpt=1 → 0.75.
        let mut vocab = Vocab::new();
        for i in 0..6 {
            vocab.intern_entity(&format!("e{i}"));
        }
        vocab.intern_relation("balanced");
        vocab.intern_relation("one_to_n");
        vocab.intern_relation("unseen");
        let train = vec![
            Triple::new(0, 0, 2),
            Triple::new(0, 0, 3),
            Triple::new(1, 0, 2),
            Triple::new(4, 1, 0),
            Triple::new(4, 1, 1),
            Triple::new(4, 1, 2),
        ];
        let d = KgDataset::from_parts(vocab, train, vec![], vec![]).unwrap();
        assert!((head_probability(&d, Strategy::Bern, 0) - 0.5).abs() < 1e-12);
        assert!((head_probability(&d, Strategy::Bern, 1) - 0.75).abs() < 1e-12);
        assert_eq!(head_probability(&d, Strategy::Bern, 2), 0.5); // fallback
        assert_eq!(head_probability(&d, Strategy::Uniform, 1), 0.5);
    }

    #[test]
    fn saturation_on_degenerate_vocabulary() {
        // One entity: the only corruption candidate equals the positive.
        let mut vocab = Vocab::new();
        vocab.intern_entity("only");
        vocab.intern_relation("self");
        let train = vec![Triple::new(0, 0, 0)];
        let d = Arc::new(KgDataset::from_parts(vocab, train, vec![], vec![]).unwrap());
        let cfg = SamplerConfig {
            reject_train_positives: true,
            batch_size: 1,
            ..SamplerConfig::default()
        };
        let c = Corruptor::new(d, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let neg = c.corrupt(Triple::new(0, 0, 0), &mut rng);
        assert_eq!(neg, Triple::new(0, 0, 0));
        assert_eq!(c.saturation_count(), 1);
    }

    #[test]
    fn rejection_avoids_train_positives() {
        // Entity 0 relates to every entity but one; rejection must find it.
        let mut vocab = Vocab::new();
        for i in 0..5 {
            vocab.intern_entity(&format!("e{i}"));
        }
        vocab.intern_relation("r");
        let train: Vec<Triple> = (1..4).map(|t| Triple::new(0, 0, t)).collect();
        let d = Arc::new(KgDataset::from_parts(vocab, train.clone(), vec![], vec![]).unwrap());
        let cfg = SamplerConfig {
            reject_train_positives: true,
            ..SamplerConfig::default()
        };
        let c = Corruptor::new(d, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let neg = c.corrupt(Triple::new(0, 0, 1), &mut rng);
            assert!(!train.contains(&neg), "sampled a train positive: {neg:?}");
        }
    }

    #[test]
    fn uniform_replacement_frequencies_are_uniform() {
        // 10^5 corruptions over 50 entities: each replacement frequency
        // within 5 sigma of 1/50.
        let d = chain_dataset(50, 1);
        let cfg = SamplerConfig::default();
        let c = Corruptor::new(d.clone(), &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000usize;
        let mut counts = vec![0usize; 50];
        let t = Triple::new(0, 0, 1);
        for _ in 0..draws {
            let neg = c.corrupt(t, &mut rng);
            let replacement = if neg.head != t.head { neg.head } else { neg.tail };
            counts[replacement as usize] += 1;
        }
        // Replacements exclude the original slot entity, so the per-slot
        // distribution is uniform over the other 49; pooling head/tail
        // corruptions of (0, r, 1) still leaves ids 2..50 symmetric.
        let p = 1.0 / 49.0;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        for (e, &c) in counts.iter().enumerate().skip(2) {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - p).abs() < 5.0 * sigma,
                "entity {e}: freq {freq} vs expected {p}"
            );
        }
    }
}
