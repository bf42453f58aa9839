use std::path::Path;

use super::{read_file, write_bytes, ByteReader};
use crate::error::{Error, Result};
use crate::rvq::CodeSequence;

const MAGIC: &[u8; 4] = b"RVQI";
const VERSION: u16 = 1;
/// magic(4) version(2) n_rows(8) n_stages(4) entries(4)
const HEADER_LEN: usize = 22;

/// Bytes per stored index for a codebook of `entries` codewords.
pub fn index_width(entries: usize) -> usize {
    if entries <= 1 << 8 {
        1
    } else if entries <= 1 << 16 {
        2
    } else {
        4
    }
}

pub fn codes_to_bytes(codes: &CodeSequence) -> Vec<u8> {
    let w = index_width(codes.entries());
    let mut out = Vec::with_capacity(HEADER_LEN + codes.indices().len() * w);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(codes.n_rows() as u64).to_le_bytes());
    out.extend_from_slice(&(codes.n_stages() as u32).to_le_bytes());
    out.extend_from_slice(&(codes.entries() as u32).to_le_bytes());
    for &i in codes.indices() {
        out.extend_from_slice(&i.to_le_bytes()[..w]);
    }
    out
}

pub fn codes_from_bytes(buf: &[u8]) -> Result<CodeSequence> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let at = r.offset();
    let n_rows = r.u64("row count")?;
    let l = r.u32("stage count")? as usize;
    let k = r.u32("entry count")? as usize;
    if l == 0 || k == 0 {
        return Err(Error::format(at, format!("degenerate shape L={l} K={k}")));
    }
    let w = index_width(k);
    let count = usize::try_from(n_rows)
        .ok()
        .and_then(|n| n.checked_mul(l))
        .ok_or_else(|| Error::format(at, "index count overflows"))?;
    let start = r.offset();
    let raw = r.take(count.checked_mul(w).ok_or_else(|| Error::format(start, "payload overflows"))?, "index payload")?;
    r.finish()?;
    let mut indices = Vec::with_capacity(count);
    for (n, chunk) in raw.chunks_exact(w).enumerate() {
        let mut b = [0u8; 4];
        b[..w].copy_from_slice(chunk);
        let v = u32::from_le_bytes(b);
        if v as usize >= k {
            return Err(Error::format(start + (n * w) as u64, format!("index {v} not below K = {k}")));
        }
        indices.push(v);
    }
    CodeSequence::new(l, k, indices)
}

pub fn write_codes(codes: &CodeSequence, path: &Path) -> Result<()> {
    write_bytes(path, &codes_to_bytes(codes))
}

pub fn read_codes(path: &Path) -> Result<CodeSequence> {
    codes_from_bytes(&read_file(path)?)
}
