//! On-disk dataset cache.
//!
//! Layout: 4-byte version tag `KGC1`, little-endian payload (vocab, splits,
//! bern stats sorted by relation id), trailing FNV-1a 64 checksum of the
//! payload. Loading a file with a different tag, a bad checksum, or missing
//! bytes fails cleanly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::binio::{fnv1a64, put_f64, put_str, put_u32, put_u64, Reader};

use super::{BernStat, KgDataset, KgError, Triple, Vocab};

pub const CACHE_VERSION: &[u8; 4] = b"KGC1";

/// Conventional cache location for a dataset directory:
/// `<dir>/.kgcache/<dirname>.bin`.
pub fn cache_path(dataset_dir: &Path) -> PathBuf {
    let name = dataset_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_owned());
    dataset_dir.join(".kgcache").join(format!("{name}.bin"))
}

pub fn save_cache(d: &KgDataset, path: &Path) -> Result<(), KgError> {
    let mut payload = Vec::new();
    put_u32(&mut payload, d.vocab.n_entities() as u32);
    for label in d.vocab.entity_labels() {
        put_str(&mut payload, label);
    }
    put_u32(&mut payload, d.vocab.n_relations() as u32);
    for label in d.vocab.relation_labels() {
        put_str(&mut payload, label);
    }
    for split in [&d.train, &d.valid, &d.test] {
        put_u32(&mut payload, split.len() as u32);
        for t in split.iter() {
            put_u32(&mut payload, t.head);
            put_u32(&mut payload, t.relation);
            put_u32(&mut payload, t.tail);
        }
    }
    let mut rels: Vec<u32> = d.bern_stats.keys().copied().collect();
    rels.sort_unstable();
    put_u32(&mut payload, rels.len() as u32);
    for r in rels {
        let s = d.bern_stats[&r];
        put_u32(&mut payload, r);
        put_f64(&mut payload, s.tph);
        put_f64(&mut payload, s.hpt);
    }

    let mut file = Vec::with_capacity(payload.len() + 12);
    file.extend_from_slice(CACHE_VERSION);
    file.extend_from_slice(&payload);
    put_u64(&mut file, fnv1a64(&payload));

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| KgError::Io {
            path: parent.to_owned(),
            source,
        })?;
    }
    // Write-then-rename so concurrent readers never see a torn file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &file).map_err(|source| KgError::Io {
        path: tmp.clone(),
        source,
    })?;
    fs::rename(&tmp, path).map_err(|source| KgError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_cache(path: &Path) -> Result<KgDataset, KgError> {
    let bytes = fs::read(path).map_err(|source| KgError::MissingFile {
        path: path.to_owned(),
        source,
    })?;
    if bytes.len() < 12 {
        return Err(KgError::CacheTruncated);
    }
    let (tag, rest) = bytes.split_at(4);
    if tag != CACHE_VERSION {
        return Err(KgError::CacheVersion {
            expected: String::from_utf8_lossy(CACHE_VERSION).into_owned(),
            found: String::from_utf8_lossy(tag).into_owned(),
        });
    }
    let (payload, checksum) = rest.split_at(rest.len() - 8);
    let stored = u64::from_le_bytes(checksum.try_into().unwrap());
    if fnv1a64(payload) != stored {
        return Err(KgError::CacheChecksum);
    }

    parse_payload(payload).map_err(|_| KgError::CacheTruncated)
}

fn parse_payload(payload: &[u8]) -> Result<KgDataset, crate::binio::Truncated> {
    let mut r = Reader::new(payload);
    let mut vocab = Vocab::new();
    let n_ent = r.u32()? as usize;
    for _ in 0..n_ent {
        vocab.intern_entity(&r.string()?);
    }
    let n_rel = r.u32()? as usize;
    for _ in 0..n_rel {
        vocab.intern_relation(&r.string()?);
    }
    let mut splits: [Vec<Triple>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for split in splits.iter_mut() {
        let n = r.u32()? as usize;
        split.reserve(n);
        for _ in 0..n {
            let head = r.u32()?;
            let relation = r.u32()?;
            let tail = r.u32()?;
            split.push(Triple::new(head, relation, tail));
        }
    }
    let n_stats = r.u32()? as usize;
    let mut stats = std::collections::HashMap::with_capacity(n_stats);
    for _ in 0..n_stats {
        let rel = r.u32()?;
        let tph = r.f64()?;
        let hpt = r.f64()?;
        stats.insert(rel, BernStat { tph, hpt });
    }
    if !r.is_exhausted() {
        return Err(crate::binio::Truncated);
    }
    let [train, valid, test] = splits;
    let filter_index = train.iter().chain(&valid).chain(&test).copied().collect();
    Ok(KgDataset {
        vocab,
        train,
        valid,
        test,
        filter_index,
        bern_stats: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::bern_stats;

    fn toy_dataset() -> KgDataset {
        let mut vocab = Vocab::new();
        for l in ["alpha", "beta", "gamma", "delta"] {
            vocab.intern_entity(l);
        }
        vocab.intern_relation("knows");
        vocab.intern_relation("likes");
        let train = vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2), Triple::new(0, 1, 3)];
        let valid = vec![Triple::new(2, 0, 3)];
        let test = vec![Triple::new(3, 1, 0)];
        KgDataset::from_parts(vocab, train, valid, test).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let d = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.bin");
        save_cache(&d, &path).unwrap();
        let loaded = load_cache(&path).unwrap();
        assert_eq!(loaded, d);
        assert_eq!(loaded.bern_stats, bern_stats(&d.train));
    }

    #[test]
    fn save_is_byte_stable() {
        let d = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        save_cache(&d, &a).unwrap();
        save_cache(&load_cache(&a).unwrap(), &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let d = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.bin");
        save_cache(&d, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cache(&path), Err(KgError::CacheChecksum)));
    }

    #[test]
    fn bumped_version_tag_is_rejected() {
        let d = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.bin");
        save_cache(&d, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] = b'2';
        fs::write(&path, &bytes).unwrap();
        match load_cache(&path) {
            Err(KgError::CacheVersion { found, .. }) => assert_eq!(found, "KGC2"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let d = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.bin");
        save_cache(&d, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        // Drop the tail but keep a consistent checksum over the shortened
        // payload so truncation itself is what gets detected.
        let short = &bytes[..bytes.len() - 24];
        let payload = &short[4..];
        let mut f = short[..4].to_vec();
        f.extend_from_slice(&payload[..payload.len() - 8]);
        let sum = fnv1a64(&payload[..payload.len() - 8]);
        f.extend_from_slice(&sum.to_le_bytes());
        fs::write(&path, &f).unwrap();
        assert!(matches!(load_cache(&path), Err(KgError::CacheTruncated)));
    }
}
