use std::path::Path;

use super::{push_f32s, read_file, write_bytes, ByteReader};
use crate::data::EmotionLabel;
use crate::error::{Error, Result};
use crate::rvq::{Codebook, RvqStack, StackMeta};
use crate::trainer::RegimeKind;

const MAGIC: &[u8; 4] = b"RVQC";
const VERSION: u16 = 1;
const NONE: u8 = 255;
/// magic(4) version(2) L(4) K(4) D(4) regime(1) target(1) bias(1) seed(8)
pub const CODEBOOK_HEADER_LEN: usize = 29;

pub fn codebook_to_bytes(stack: &RvqStack<f32>) -> Vec<u8> {
    let meta = stack.meta();
    let mut out = Vec::with_capacity(CODEBOOK_HEADER_LEN + stack.payload_bytes() as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(stack.n_stages() as u32).to_le_bytes());
    out.extend_from_slice(&(stack.entries() as u32).to_le_bytes());
    out.extend_from_slice(&(stack.dim() as u32).to_le_bytes());
    out.push(meta.regime.tag());
    out.push(meta.target.map_or(NONE, |t| t.0));
    out.push(meta.bias_percent.unwrap_or(NONE));
    out.extend_from_slice(&meta.seed.to_le_bytes());
    for stage in stack.stages() {
        push_f32s(&mut out, stage.codewords());
    }
    out
}

pub fn codebook_from_bytes(buf: &[u8]) -> Result<RvqStack<f32>> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let at = r.offset();
    let l = r.u32("stage count")? as usize;
    let k = r.u32("entry count")? as usize;
    let d = r.u32("dimension")? as usize;
    if l == 0 || k == 0 || d == 0 {
        return Err(Error::format(at, format!("degenerate shape L={l} K={k} D={d}")));
    }
    let at = r.offset();
    let tag = r.u8("regime tag")?;
    let regime = RegimeKind::from_tag(tag).ok_or_else(|| Error::format(at, format!("unknown regime tag {tag}")))?;
    let target = r.u8("target emotion")?;
    let bias = r.u8("bias percent")?;
    let target = match (regime, target) {
        (RegimeKind::Balanced, NONE) => None,
        (RegimeKind::Balanced, t) => {
            return Err(Error::format(at + 1, format!("balanced stack names target {t}")));
        }
        (_, NONE) => return Err(Error::format(at + 1, "emotion-targeted stack without a target")),
        (_, t) => Some(EmotionLabel(t)),
    };
    let seed = r.u64("seed")?;
    let mut stages = Vec::with_capacity(l);
    for s in 0..l {
        let vals = r.f32s(k * d, &format!("stage {} codewords", s + 1))?;
        stages.push(Codebook::new(k, d, vals)?);
    }
    r.finish()?;
    let meta = StackMeta {
        regime,
        target,
        bias_percent: (bias != NONE).then_some(bias),
        seed,
    };
    RvqStack::new(stages, meta)
}

pub fn write_codebook(stack: &RvqStack<f32>, path: &Path) -> Result<()> {
    write_bytes(path, &codebook_to_bytes(stack))
}

pub fn read_codebook(path: &Path) -> Result<RvqStack<f32>> {
    codebook_from_bytes(&read_file(path)?)
}
