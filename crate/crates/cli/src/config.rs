//! Optional TOML run file. Every key mirrors a command-line flag; flags win.

use std::path::{Path, PathBuf};

use emoq_core::Error;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub stages: Option<usize>,
    pub entries: Option<usize>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub frame_rate: Option<f64>,
    pub normalize: Option<bool>,
    pub kmeans_max_iters: Option<usize>,
    pub kmeans_tol: Option<f64>,
    pub probe_lr: Option<f64>,
    pub probe_l2: Option<f64>,
    pub probe_epochs: Option<usize>,
    pub pairs: Option<Vec<String>>,
    pub bias_levels: Option<Vec<u8>>,
    pub depths: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub baseline_f1: Option<f64>,
    pub cache: Option<PathBuf>,
    pub taxonomy: Option<Vec<String>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Parses `8x32` style stage/entry pairs.
pub fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (l, k) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected LxK, got {s:?}"))?;
    let l = l.trim().parse().map_err(|_| format!("bad stage count in {s:?}"))?;
    let k = k.trim().parse().map_err(|_| format!("bad entry count in {s:?}"))?;
    Ok((l, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs() {
        assert_eq!(parse_pair("8x32"), Ok((8, 32)));
        assert_eq!(parse_pair("128X2"), Ok((128, 2)));
        assert!(parse_pair("8-32").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("stagez = 3").is_err());
        let c: FileConfig = toml::from_str("stages = 3\npairs = [\"8x32\"]").unwrap();
        assert_eq!(c.stages, Some(3));
    }
}
