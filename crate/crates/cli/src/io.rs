use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use linked_gp::{Error, Result};
use serde_json::Value;

/// A numeric table read from CSV with a header row.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Config(format!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                header.len(),
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(k, v)| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Config(format!("{}: line {line}, column {}: '{v}' is not a finite number", path.display(), k + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

/// Comma-separated numbers, as given on the command line.
pub fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("'{v}' in '{s}' is not a number")))
        })
        .collect()
}

/// Output target: a file, or standard output for `-`.
pub fn writer(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        Ok(Box::new(io::stdout().lock()))
    } else {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Box::new(io::BufWriter::new(File::create(path)?)))
    }
}

pub fn output_path(explicit: &Option<PathBuf>, out_dir: &Path, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out_dir.join(default))
}

/// Parse the `--config` file, if any, as JSON.
pub fn config_value(path: Option<&Path>) -> Result<Option<Value>> {
    path.map(|p| {
        let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
    })
    .transpose()
}

pub fn from_config<T: serde::de::DeserializeOwned + Default>(v: &Option<Value>) -> Result<T> {
    match v {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("config: {e}"))),
        None => Ok(T::default()),
    }
}
