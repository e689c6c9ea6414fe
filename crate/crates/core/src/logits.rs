//! CSV exchange format for raw class scores: `id,logit_0,…,logit_{C-1},label`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scores::LogitMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitDump {
    pub ids: Vec<String>,
    pub logits: LogitMatrix,
    pub labels: Vec<usize>,
}

impl LogitDump {
    pub fn new(ids: Vec<String>, logits: LogitMatrix, labels: Vec<usize>) -> Result<Self> {
        if ids.len() != logits.rows() || labels.len() != logits.rows() {
            return Err(Error::Dimension(format!(
                "{} ids and {} labels for {} rows",
                ids.len(),
                labels.len(),
                logits.rows()
            )));
        }
        let c = logits.num_classes();
        if let Some(l) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Dimension(format!("label {l} out of range for {c} classes")));
        }
        Ok(Self { ids, logits, labels })
    }

    /// Ids `0..n`.
    pub fn with_row_ids(logits: LogitMatrix, labels: Vec<usize>) -> Result<Self> {
        let ids = (0..logits.rows()).map(|i| i.to_string()).collect();
        Self::new(ids, logits, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.num_classes()
    }

    pub fn select_rows(&self, idx: &[usize]) -> LogitDump {
        LogitDump {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            logits: self.logits.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Same ids and labels, new scores.
    pub fn with_logits(&self, logits: LogitMatrix) -> Result<LogitDump> {
        Self::new(self.ids.clone(), logits, self.labels.clone())
    }

    pub fn to_csv(&self) -> String {
        let c = self.num_classes();
        let mut s = String::from("id");
        for k in 0..c {
            let _ = write!(s, ",logit_{k}");
        }
        s.push_str(",label\n");
        for (i, row) in self.logits.matrix().iter_rows().enumerate() {
            s.push_str(&self.ids[i]);
            for v in row {
                let _ = write!(s, ",{v:?}");
            }
            let _ = writeln!(s, ",{}", self.labels[i]);
        }
        s
    }
}

pub fn parse_logit_dump(text: &str) -> Result<LogitDump> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "no header"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"id") {
        return Err(Error::parse(1, "first column must be 'id'"));
    }
    if cols.last() != Some(&"label") {
        return Err(Error::parse(1, "missing 'label' column"));
    }
    let c = cols.len() - 2;
    for (k, name) in cols[1..cols.len() - 1].iter().enumerate() {
        if *name != format!("logit_{k}") {
            return Err(Error::parse(1, format!("column {} should be 'logit_{k}', found '{name}'", k + 1)));
        }
    }
    if c < 2 {
        return Err(Error::parse(1, format!("need at least 2 logit columns, found {c}")));
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != c + 2 {
            return Err(Error::parse(lineno, format!("expected {} fields, found {}", c + 2, f.len())));
        }
        ids.push(f[0].to_string());
        for v in &f[1..=c] {
            let x: f64 = v.parse().map_err(|_| Error::parse(lineno, format!("bad logit '{v}'")))?;
            if !x.is_finite() {
                return Err(Error::parse(lineno, format!("non-finite logit '{v}'")));
            }
            values.push(x);
        }
        let y: usize = f[c + 1]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad label '{}'", f[c + 1])))?;
        if y >= c {
            return Err(Error::parse(lineno, format!("label {y} out of range for {c} classes")));
        }
        labels.push(y);
    }
    let n = labels.len();
    LogitDump::new(ids, LogitMatrix::new(Matrix::from_vec(n, c, values)?)?, labels)
}

pub fn load_logit_dump(path: impl AsRef<Path>) -> Result<LogitDump> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_logit_dump(&text)
}

pub fn save_logit_dump(dump: &LogitDump, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), dump.to_csv().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Matrix::from_rows(&[vec![0.1, -2.5e-9, 3.0], vec![1.0 / 3.0, 7.0, -1e300]], 3).unwrap();
        let d = LogitDump::with_row_ids(LogitMatrix::new(m).unwrap(), vec![2, 0]).unwrap();
        let text = d.to_csv();
        assert!(text.starts_with("id,logit_0,logit_1,logit_2,label\n"));
        assert_eq!(parse_logit_dump(&text).unwrap(), d);
    }

    #[test]
    fn errors() {
        let missing = "id,logit_0,logit_1\n0,1.0,2.0\n";
        assert!(matches!(parse_logit_dump(missing), Err(Error::Parse { line: Some(1), .. })));
        let short = "id,logit_0,logit_1,label\n0,1.0,2.0,1\n1,1.0,1\n";
        assert!(matches!(parse_logit_dump(short), Err(Error::Parse { line: Some(3), .. })));
        let range = "id,logit_0,logit_1,label\n0,1.0,2.0,2\n";
        assert!(matches!(parse_logit_dump(range), Err(Error::Parse { line: Some(2), .. })));
        assert!(matches!(parse_logit_dump(""), Err(Error::Parse { .. })));
    }
}
