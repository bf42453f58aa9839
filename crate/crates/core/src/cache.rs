//! On-disk artifact cache keyed by content hashes, so interrupted runs can
//! resume without retraining.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::data::EmbeddingSet;
use crate::error::Result;
use crate::io;
use crate::probe::LinearProbe;
use crate::rvq::RvqStack;

/// Hex SHA-256 over an embedding set's values and manifest.
pub fn set_fingerprint(set: &EmbeddingSet<f32>) -> String {
    let mut h = Sha256::new();
    h.update((set.dim() as u64).to_le_bytes());
    for v in set.vectors() {
        h.update(v.to_le_bytes());
    }
    for u in set.utterances() {
        h.update(u.uid.as_bytes());
        h.update([u.label.0]);
        h.update((u.frames.start as u64).to_le_bytes());
        h.update((u.frames.end as u64).to_le_bytes());
        if let Some(s) = &u.soft {
            for p in s.probs() {
                h.update(p.to_le_bytes());
            }
        }
    }
    hex(&h.finalize()[..16])
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default)]
pub struct ArtifactCache {
    dir: Option<PathBuf>,
}

impl ArtifactCache {
    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, key: &str, ext: &str) -> Option<PathBuf> {
        let mut h = Sha256::new();
        h.update(key.as_bytes());
        self.dir.as_ref().map(|d| d.join(format!("{}.{ext}", hex(&h.finalize()[..16]))))
    }

    pub fn stack(&self, key: &str, train: impl FnOnce() -> Result<RvqStack<f32>>) -> Result<RvqStack<f32>> {
        let Some(path) = self.path(key, "rvqc") else { return train() };
        if path.exists() {
            if let Ok(stack) = io::read_codebook(&path) {
                return Ok(stack);
            }
        }
        let stack = train()?;
        write_atomic(&path, &io::codebook_to_bytes(&stack))?;
        Ok(stack)
    }

    pub fn probe(&self, key: &str, train: impl FnOnce() -> Result<LinearProbe<f32>>) -> Result<LinearProbe<f32>> {
        let Some(path) = self.path(key, "prbe") else { return train() };
        if path.exists() {
            if let Ok(p) = io::read_probe(&path) {
                return Ok(p);
            }
        }
        let p = train()?;
        write_atomic(&path, &io::probe_to_bytes(&p))?;
        Ok(p)
    }
}

/// Write to a unique sibling then rename, so concurrent readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp{}-{n}", std::process::id()));
    crate::report::write_bytes(&tmp, bytes)?;
    std::fs::rename(&tmp, path).map_err(|e| crate::error::Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvq::{Codebook, StackMeta};

    #[test]
    fn second_lookup_reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ArtifactCache::at(dir.path());
        let make = || RvqStack::new(vec![Codebook::new(1, 2, vec![1.0f32, 2.0]).unwrap()], StackMeta::default());
        let a = cache.stack("k", make).unwrap();
        let b = cache.stack("k", || panic!("should hit the cache")).unwrap();
        assert_eq!(a, b);
    }
}
