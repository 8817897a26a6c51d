use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::HarnessError;

/// Output directory of one command invocation. Files are written only
/// through this handle, from a single thread.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    /// `<out>/<command>`, or the first free `<out>/<command>.N` when that
    /// exists. With `force` an existing `<out>/<command>` is replaced.
    pub fn create(out: &Path, command: &str, force: bool) -> Result<Self, HarnessError> {
        let base = out.join(command);
        let path = if force || !base.exists() {
            base
        } else {
            (1..)
                .map(|n| out.join(format!("{command}.{n}")))
                .find(|p| !p.exists())
                .expect("unbounded search")
        };
        if force && path.exists() {
            fs::remove_dir_all(&path).map_err(|e| HarnessError::io(&path, e))?;
        }
        fs::create_dir_all(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(RunDir {
            path,
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Names of the files written so far.
    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    /// Writes through a temporary file and a rename, so a reader never sees
    /// a partial file.
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, HarnessError> {
        let path = self.file(name);
        let tmp = self.file(&format!(".{name}.tmp"));
        fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| HarnessError::io(&path, e))?;
        self.record(name);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, HarnessError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Write {
            what: name.to_string(),
            detail: e.to_string(),
        })?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Comma-separated rows with a header taken from the field names.
    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<PathBuf, HarnessError> {
        let err = |e: csv::Error| HarnessError::Write {
            what: name.to_string(),
            detail: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Write {
            what: name.to_string(),
            detail: e.to_string(),
        })?;
        self.write_bytes(name, &bytes)
    }
}

/// Equal-width histograms of several series over a shared range `[0, max]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// One count vector per series.
    pub counts: Vec<Vec<usize>>,
}

pub fn histogram(series: &[&[f64]], bins: usize) -> Histogram {
    assert!(bins > 0, "histogram needs at least one bin");
    let hi = series
        .iter()
        .flat_map(|s| s.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    let counts = series
        .iter()
        .map(|s| {
            let mut c = vec![0usize; bins];
            for v in s.iter() {
                // Non-finite values land in the last bin so counts still sum
                // to the series length.
                let idx = if v.is_finite() {
                    ((v.max(0.0) / width) as usize).min(bins - 1)
                } else {
                    bins - 1
                };
                c[idx] += 1;
            }
            c
        })
        .collect();
    Histogram { edges, counts }
}
