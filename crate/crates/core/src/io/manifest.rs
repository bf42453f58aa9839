use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_bytes};
use crate::data::{EmbeddingSet, SoftLabel, Taxonomy, Utterance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub uid: String,
    pub label: String,
    pub soft: Option<Vec<f64>>,
    pub frames: [usize; 2],
    pub corpus: String,
}

pub fn manifest_to_string<T: Scalar>(set: &EmbeddingSet<T>) -> Result<String> {
    let mut out = String::new();
    for u in set.utterances() {
        let rec = ManifestRecord {
            uid: u.uid.clone(),
            label: set.taxonomy().name(u.label).to_string(),
            soft: u.soft.as_ref().map(|s| s.probs().to_vec()),
            frames: [u.frames.start, u.frames.end],
            corpus: u.corpus.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Serde(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn manifest_from_str(text: &str, taxonomy: &Taxonomy) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::MalformedManifest(format!("line {}: {e}", n + 1)))?;
        let label = taxonomy
            .label(&rec.label)
            .map_err(|_| Error::MalformedManifest(format!("line {}: unknown label '{}'", n + 1, rec.label)))?;
        let soft = rec
            .soft
            .as_deref()
            .map(SoftLabel::from_votes)
            .transpose()
            .map_err(|e| Error::MalformedManifest(format!("line {}: {e}", n + 1)))?;
        out.push(Utterance {
            uid: rec.uid,
            label,
            soft,
            frames: rec.frames[0]..rec.frames[1],
            corpus: rec.corpus,
        });
    }
    Ok(out)
}

pub fn write_manifest<T: Scalar>(path: &Path, set: &EmbeddingSet<T>) -> Result<()> {
    write_bytes(path, manifest_to_string(set)?.as_bytes())
}

pub fn read_manifest(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<Utterance>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::MalformedManifest(format!("not UTF-8: {e}")))?;
    manifest_from_str(&text, taxonomy)
}
