use std::path::Path;

use super::{push_f32s, read_file, write_bytes, ByteReader};
use crate::error::{Error, Result};
use crate::probe::LinearProbe;

const MAGIC: &[u8; 4] = b"PRBE";
const VERSION: u16 = 1;

/// Serializes weights and bias only; training metadata is not persisted.
pub fn probe_to_bytes(probe: &LinearProbe<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + 4 * (probe.weights().len() + probe.bias().len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(probe.classes() as u32).to_le_bytes());
    out.extend_from_slice(&(probe.dim() as u32).to_le_bytes());
    push_f32s(&mut out, probe.weights());
    push_f32s(&mut out, probe.bias());
    out
}

pub fn probe_from_bytes(buf: &[u8]) -> Result<LinearProbe<f32>> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let at = r.offset();
    let c = r.u32("class count")? as usize;
    let d = r.u32("dimension")? as usize;
    if c == 0 || d == 0 {
        return Err(Error::format(at, format!("degenerate probe C={c} D={d}")));
    }
    let w = r.f32s(c * d, "weights")?;
    let b = r.f32s(c, "bias")?;
    r.finish()?;
    LinearProbe::new(c, d, w, b)
}

pub fn write_probe(probe: &LinearProbe<f32>, path: &Path) -> Result<()> {
    write_bytes(path, &probe_to_bytes(probe))
}

pub fn read_probe(path: &Path) -> Result<LinearProbe<f32>> {
    probe_from_bytes(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_truncation() {
        let p = LinearProbe::new(2, 3, vec![0.5f32, -1.0, 2.0, 0.0, 3.25, -0.125], vec![0.1, -0.2]).unwrap();
        let bytes = probe_to_bytes(&p);
        let back = probe_from_bytes(&bytes).unwrap();
        assert_eq!(back.weights(), p.weights());
        assert_eq!(back.bias(), p.bias());
        assert_eq!(probe_to_bytes(&back), bytes);
        assert!(matches!(probe_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
    }
}
