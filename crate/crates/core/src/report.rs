//! Long-format evaluation tables: one `(layer, emotion, metric) -> value`
//! row per measurement, plus a configuration echo.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALL: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub layer: usize,
    pub emotion: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: BTreeMap<String, String>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_config(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, layer: usize, emotion: &str, metric: &str, value: f64) {
        self.rows.push(ReportRow {
            layer,
            emotion: emotion.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.config.extend(other.config);
    }

    pub fn get(&self, layer: usize, emotion: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.layer == layer && r.emotion == emotion && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn rows_for<'a>(&'a self, emotion: &'a str, metric: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.emotion == emotion && r.metric == metric)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if !r.value.is_finite() {
                return Err(Error::Precondition(format!(
                    "metric {} at layer {} for {} is not finite",
                    r.metric, r.layer, r.emotion
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "emotion", "metric", "value"])
            .map_err(|e| Error::Serde(e.to_string()))?;
        for r in &self.rows {
            w.write_record([r.layer.to_string(), r.emotion.clone(), r.metric.clone(), r.value.to_string()])
                .map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_csv_bytes()?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_json()?.as_bytes())
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut r = EvalReport::new();
        r.set_config("stages", 2);
        r.push(1, "happy", "cosine", 0.5);
        r.push(2, ALL, "entropy", 1.0);
        let csv = String::from_utf8(r.to_csv_bytes().unwrap()).unwrap();
        assert_eq!(csv, "layer,emotion,metric,value\n1,happy,cosine,0.5\n2,ALL,entropy,1\n");
        assert_eq!(r.get(2, ALL, "entropy"), Some(1.0));
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut r = EvalReport::new();
        r.push(1, ALL, "jsd", f64::NAN);
        assert!(r.to_csv_bytes().is_err());
    }
}
