//! Little-endian binary formats for embeddings (`EMBV`), codebook stacks
//! (`RVQC`), code sequences (`RVQI`) and probes (`PRBE`), plus the JSON-lines
//! utterance manifest.

mod codebook;
mod codes;
mod embeddings;
mod manifest;
mod probe;

pub use codebook::{codebook_from_bytes, codebook_to_bytes, read_codebook, write_codebook, CODEBOOK_HEADER_LEN};
pub use codes::{codes_from_bytes, codes_to_bytes, index_width, read_codes, write_codes};
pub use embeddings::{
    embv_from_bytes, embv_to_bytes, read_embeddings, read_vectors, write_embeddings, write_vectors, EMBV_HEADER_LEN,
};
pub use manifest::{manifest_from_str, manifest_to_string, read_manifest, write_manifest, ManifestRecord};
pub use probe::{probe_from_bytes, probe_to_bytes, read_probe, write_probe};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) use crate::report::write_bytes;

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Cursor over an in-memory file that reports byte offsets on failure.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} remain", self.buf.len() - self.pos),
            )
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                0,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(expected)),
            ));
        }
        Ok(())
    }

    pub fn version(&mut self, supported: u16) -> Result<()> {
        let at = self.offset();
        let v = self.u16("version")?;
        if v != supported {
            return Err(Error::format(at, format!("unsupported version {v}, expected {supported}")));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// Reads `count` float32 values after checking the whole span is present.
    pub fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.offset(), format!("{what} size overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    out.reserve(vals.len() * 4);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
