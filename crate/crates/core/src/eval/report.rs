use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    balanced_accuracy, confusion_matrix, group_accuracy, per_class_accuracy, prior_mismatch, top1_accuracy,
    GroupAccuracy, GroupThresholds,
};
use crate::adjust::achieved_prior;
use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::ProbVector;
use crate::scores::LogitMatrix;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub model: String,
    pub adjustment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub samples: usize,
    pub top1: f64,
    pub balanced_accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub groups: GroupAccuracy,
    pub confusion: Vec<Vec<usize>>,
    pub achieved_prior: ProbVector,
    pub target_prior: ProbVector,
    pub prior_l1: f64,
    pub prior_kl: Option<f64>,
    pub provenance: ReportProvenance,
}

/// Full report for one score matrix. Predictions are the row argmax of the logits.
pub fn evaluate(
    logits: &LogitMatrix,
    labels: &[usize],
    train_counts: Option<&[usize]>,
    thresholds: &GroupThresholds,
    target: &ProbVector,
    provenance: ReportProvenance,
) -> Result<EvalReport> {
    let c = logits.num_classes();
    if target.len() != c {
        return Err(Error::Dimension(format!("target prior has {} classes, scores {c}", target.len())));
    }
    let pred = logits.predictions();
    let top1 = top1_accuracy(&pred, labels)?;
    let confusion = confusion_matrix(&pred, labels, c)?;
    let per_class = per_class_accuracy(&confusion);
    let groups = match train_counts {
        Some(n) => group_accuracy(&per_class, n, thresholds)?,
        None => GroupAccuracy::default(),
    };
    let achieved = achieved_prior(&logits.softmax())?;
    let mm = prior_mismatch(&achieved, target)?;
    Ok(EvalReport {
        schema: REPORT_SCHEMA,
        samples: labels.len(),
        top1,
        balanced_accuracy: balanced_accuracy(&per_class)?,
        per_class,
        groups,
        confusion,
        achieved_prior: achieved,
        target_prior: target.clone(),
        prior_l1: mm.l1,
        prior_kl: mm.kl,
        provenance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "table" | "table-text" => Ok(Self::Table),
            other => Err(Error::Usage(format!("unknown report format '{other}'"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Csv => "csv",
            Self::Table => "txt",
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,accuracy,test_count,achieved_prior,target_prior\n");
        for (k, acc) in self.per_class.iter().enumerate() {
            let n: usize = self.confusion[k].iter().sum();
            let _ = writeln!(
                s,
                "{k},{},{n},{:?},{:?}",
                opt(*acc),
                self.achieved_prior[k],
                self.target_prior[k]
            );
        }
        let _ = writeln!(s, "top1,{:?},{},,", self.top1, self.samples);
        let _ = writeln!(s, "balanced,{:?},{},,", self.balanced_accuracy, self.samples);
        let _ = writeln!(s, "many,{},,,", opt(self.groups.many));
        let _ = writeln!(s, "medium,{},,,", opt(self.groups.medium));
        let _ = writeln!(s, "few,{},,,", opt(self.groups.few));
        let _ = writeln!(s, "prior_l1,{:?},,,", self.prior_l1);
        let _ = writeln!(s, "prior_kl,{},,,", opt(self.prior_kl));
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>8} {:>8} {:>8} {:>8} {:>10}", "Many", "Medium", "Few", "All", "Balanced");
        let _ = writeln!(
            s,
            "{:>8} {:>8} {:>8} {:>8} {:>10}",
            pct(self.groups.many),
            pct(self.groups.medium),
            pct(self.groups.few),
            pct(Some(self.top1)),
            pct(Some(self.balanced_accuracy))
        );
        let _ = writeln!(
            s,
            "prior L1 {:.4}  KL {}",
            self.prior_l1,
            self.prior_kl.map(|k| format!("{k:.4}")).unwrap_or_else(|| "undefined".into())
        );
        s
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let text = match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)?,
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Table => report.to_table(),
    };
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let r: EvalReport = serde_json::from_str(&text)?;
    if r.schema != REPORT_SCHEMA {
        return Err(Error::Schema(format!("report schema {} is not supported", r.schema)));
    }
    Ok(r)
}
