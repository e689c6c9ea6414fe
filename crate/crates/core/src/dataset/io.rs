use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Writes `f0,...,f{D-1},label` followed by one row per sample. Floats use the
/// shortest representation that parses back to the same bits.
pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for j in 0..ds.dims() {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for (row, y) in ds.features().iter_rows().zip(ds.labels()) {
        for v in row {
            out.push_str(&format!("{v:?},"));
        }
        out.push_str(&format!("{y}\n"));
    }
    write_atomic(path, out.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Reads a dataset CSV. When `num_classes` is `None` the class count is
/// inferred as `max(label) + 1`.
pub fn load_dataset(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, num_classes)
}

pub(crate) fn parse_dataset(text: &str, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: None, msg: "no header".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dims = cols.len().saturating_sub(1);
    if cols.last() != Some(&"label") || dims == 0 {
        return Err(Error::parse(1, "header must be f0,...,f{D-1},label"));
    }
    for (j, c) in cols[..dims].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::parse(1, format!("expected column f{j}, found '{c}'")));
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dims + 1 {
            return Err(Error::parse(
                lineno,
                format!("expected {} columns, found {}", dims + 1, fields.len()),
            ));
        }
        for f in &fields[..dims] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(lineno, format!("'{f}' is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(lineno, format!("'{f}' is not finite")));
            }
            values.push(v);
        }
        let y: usize = fields[dims]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("'{}' is not a class label", fields[dims])))?;
        if let Some(c) = num_classes {
            if y >= c {
                return Err(Error::parse(
                    lineno,
                    format!("label {y} out of range for {c} classes"),
                ));
            }
        }
        labels.push(y);
    }
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let n = labels.len();
    LabeledDataset::new(Matrix::from_vec(n, dims, values)?, labels, c)
}

#[derive(Debug, Serialize, Deserialize)]
struct CountsFile {
    counts: Vec<usize>,
}

/// Writes `{"counts": [n0, ...]}`.
pub fn save_counts(counts: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let s = serde_json::to_string_pretty(&CountsFile { counts: counts.to_vec() })?;
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn load_counts(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: CountsFile = serde_json::from_str(&text)?;
    Ok(f.counts)
}
