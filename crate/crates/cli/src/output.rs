//! Artifact writers. Floats use the shortest round-trip form so identical
//! runs produce identical bytes.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::CliError;

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io(path, e))
}

/// A CSV table assembled column by column.
#[derive(Debug, Default)]
pub struct Table {
    headers: Vec<String>,
    columns: Vec<Vec<String>>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn numbers(mut self, name: impl Into<String>, values: impl IntoIterator<Item = f64>) -> Self {
        self.headers.push(name.into());
        self.columns.push(values.into_iter().map(|v| v.to_string()).collect());
        self
    }

    pub fn text(mut self, name: impl Into<String>, values: impl IntoIterator<Item = String>) -> Self {
        self.headers.push(name.into());
        self.columns.push(values.into_iter().collect());
        self
    }

    /// One column per input dimension.
    pub fn inputs(mut self, names: &[String], x: &DMatrix<f64>) -> Self {
        for (j, name) in names.iter().enumerate() {
            self = self.numbers(name.clone(), x.column(j).iter().copied());
        }
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let rows = self.columns.first().map_or(0, Vec::len);
        if let Some(bad) = self.columns.iter().position(|c| c.len() != rows) {
            return Err(CliError::Io(format!(
                "column `{}` has {} rows, expected {rows}",
                self.headers[bad],
                self.columns[bad].len()
            )));
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
        w.write_record(&self.headers).map_err(|e| io(path, e))?;
        for i in 0..rows {
            w.write_record(self.columns.iter().map(|c| c[i].as_str()))
                .map_err(|e| io(path, e))?;
        }
        w.flush().map_err(|e| io(path, e))
    }
}

pub fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}
