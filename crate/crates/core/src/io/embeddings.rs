use std::path::Path;

use super::{push_f32s, read_file, write_bytes, ByteReader};
use crate::data::{EmbeddingSet, Level, Taxonomy};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMBV";
const VERSION: u16 = 1;
const DTYPE_F32_LE: u8 = 0;
/// magic(4) + version(2) + dtype(1) + n_rows(8) + dim(4)
pub const EMBV_HEADER_LEN: usize = 19;

pub fn embv_to_bytes(dim: usize, vectors: &[f32]) -> Vec<u8> {
    let n_rows = (vectors.len() / dim) as u64;
    let mut out = Vec::with_capacity(EMBV_HEADER_LEN + vectors.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32_LE);
    out.extend_from_slice(&n_rows.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    push_f32s(&mut out, vectors);
    out
}

/// Returns `(dim, row-major values)`.
pub fn embv_from_bytes(buf: &[u8]) -> Result<(usize, Vec<f32>)> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let at = r.offset();
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32_LE {
        return Err(Error::format(at, format!("unsupported dtype {dtype}")));
    }
    let n_rows = r.u64("row count")?;
    let at = r.offset();
    let dim = r.u32("dimension")? as usize;
    if dim == 0 {
        return Err(Error::format(at, "dimension must be positive"));
    }
    let count = usize::try_from(n_rows)
        .ok()
        .and_then(|n| n.checked_mul(dim))
        .ok_or_else(|| Error::format(at, "payload size overflows"))?;
    let vectors = r.f32s(count, "embedding payload")?;
    r.finish()?;
    Ok((dim, vectors))
}

pub fn write_vectors(path: &Path, dim: usize, vectors: &[f32]) -> Result<()> {
    if dim == 0 || !vectors.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!("{} values do not form rows of dimension {dim}", vectors.len())));
    }
    write_bytes(path, &embv_to_bytes(dim, vectors))
}

pub fn read_vectors(path: &Path) -> Result<(usize, Vec<f32>)> {
    embv_from_bytes(&read_file(path)?)
}

/// Writes the matrix to `vectors_path` and the manifest to `manifest_path`.
pub fn write_embeddings(set: &EmbeddingSet<f32>, vectors_path: &Path, manifest_path: &Path) -> Result<()> {
    write_vectors(vectors_path, set.dim(), set.vectors())?;
    super::write_manifest(manifest_path, set)
}

/// Reads a matrix plus manifest. The set is utterance-level when every
/// utterance spans exactly one row, frame-level otherwise.
pub fn read_embeddings(vectors_path: &Path, manifest_path: &Path, taxonomy: &Taxonomy) -> Result<EmbeddingSet<f32>> {
    let (dim, vectors) = read_vectors(vectors_path)?;
    let utterances = super::read_manifest(manifest_path, taxonomy)?;
    let level = if utterances.iter().all(|u| u.frames.len() == 1) {
        Level::Utterance
    } else {
        Level::Frame
    };
    EmbeddingSet::new(dim, vectors, utterances, level, taxonomy.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_matrix_roundtrips_byte_for_byte() {
        let v = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bytes = embv_to_bytes(2, &v);
        assert_eq!(bytes.len(), EMBV_HEADER_LEN + 24);
        let (d, back) = embv_from_bytes(&bytes).unwrap();
        assert_eq!(d, 2);
        assert_eq!(embv_to_bytes(d, &back), bytes);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = embv_to_bytes(2, &[1.0, 2.0, 3.0, 4.0]);
        bytes.truncate(EMBV_HEADER_LEN + 8);
        match embv_from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, EMBV_HEADER_LEN as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = embv_to_bytes(1, &[1.0]);
        bytes[0] = b'X';
        assert!(matches!(embv_from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = embv_to_bytes(1, &[1.0]);
        bytes[4] = 2;
        assert!(matches!(embv_from_bytes(&bytes), Err(Error::Format { offset: 4, .. })));
        let mut bytes = embv_to_bytes(1, &[1.0]);
        bytes.push(0);
        assert!(embv_from_bytes(&bytes).is_err());
    }
}
