//! Accuracy metrics, prior diagnostics and report/figure output.

mod figure;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ProbVector;

pub use figure::{boundary_line_points, export_boundary_2d, export_prior_bars, BoundarySeries};
pub use report::{emit_report, evaluate, load_report, EvalReport, ReportFormat, ReportProvenance, REPORT_SCHEMA};

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Dimension("accuracy of an empty set".into()));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn top1_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `m[true][predicted]` counts.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check_pair(pred, truth)?;
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Dimension(format!("label {} out of range for {classes} classes", p.max(t))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Recall per class; `None` for classes absent from the evaluation set.
pub fn per_class_accuracy(confusion: &[Vec<usize>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[k] as f64 / n as f64)
        })
        .collect()
}

/// Unweighted mean of the defined per-class accuracies.
pub fn balanced_accuracy(per_class: &[Option<f64>]) -> Result<f64> {
    let vals: Vec<f64> = per_class.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::Dimension("no class has evaluation samples".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds")]
pub struct GroupThresholds {
    many_min: usize,
    few_max: usize,
}

#[derive(Deserialize)]
struct RawThresholds {
    many_min: usize,
    few_max: usize,
}

impl TryFrom<RawThresholds> for GroupThresholds {
    type Error = Error;
    fn try_from(r: RawThresholds) -> Result<Self> {
        GroupThresholds::new(r.many_min, r.few_max)
    }
}

impl Default for GroupThresholds {
    fn default() -> Self {
        Self { many_min: 100, few_max: 20 }
    }
}

impl GroupThresholds {
    pub fn new(many_min: usize, few_max: usize) -> Result<Self> {
        if few_max < 1 || many_min <= few_max {
            return Err(Error::Config(format!(
                "group thresholds need many ({many_min}) > few ({few_max}) >= 1"
            )));
        }
        Ok(Self { many_min, few_max })
    }

    pub fn many_min(&self) -> usize {
        self.many_min
    }

    pub fn few_max(&self) -> usize {
        self.few_max
    }

    pub fn group_of(&self, count: usize) -> Group {
        if count > self.many_min {
            Group::Many
        } else if count < self.few_max {
            Group::Few
        } else {
            Group::Medium
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Many,
    Medium,
    Few,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Many => "many",
            Group::Medium => "medium",
            Group::Few => "few",
        }
    }
}

/// Mean accuracy per training-count bucket; empty buckets are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

pub fn group_accuracy(per_class: &[Option<f64>], train_counts: &[usize], th: &GroupThresholds) -> Result<GroupAccuracy> {
    if per_class.len() != train_counts.len() {
        return Err(Error::Dimension(format!(
            "{} accuracies for {} class counts",
            per_class.len(),
            train_counts.len()
        )));
    }
    let mut sums = [(0.0, 0usize); 3];
    for (acc, &n) in per_class.iter().zip(train_counts) {
        if let Some(a) = acc {
            let slot = &mut sums[th.group_of(n) as usize];
            slot.0 += a;
            slot.1 += 1;
        }
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok(GroupAccuracy { many: mean(sums[0]), medium: mean(sums[1]), few: mean(sums[2]) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorMismatch {
    pub l1: f64,
    /// Undefined when the target is zero where the achieved prior is not.
    pub kl: Option<f64>,
}

/// `Σ aᵢ log(aᵢ / tᵢ)` with `0 log 0 = 0`.
pub fn kl_divergence(a: &ProbVector, t: &ProbVector) -> Result<f64> {
    if a.len() != t.len() {
        return Err(Error::Dimension(format!("priors of {} and {} classes", a.len(), t.len())));
    }
    let mut s = 0.0;
    for k in 0..a.len() {
        if a[k] == 0.0 {
            continue;
        }
        if t[k] == 0.0 {
            return Err(Error::Domain(format!("target is zero at class {k} where achieved is not")));
        }
        s += a[k] * (a[k] / t[k]).ln();
    }
    Ok(s.max(0.0))
}

pub fn prior_mismatch(achieved: &ProbVector, target: &ProbVector) -> Result<PriorMismatch> {
    if achieved.len() != target.len() {
        return Err(Error::Dimension(format!(
            "priors of {} and {} classes",
            achieved.len(),
            target.len()
        )));
    }
    let l1 = achieved.as_slice().iter().zip(target.as_slice()).map(|(a, t)| (a - t).abs()).sum();
    Ok(PriorMismatch { l1, kl: kl_divergence(achieved, target).ok() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn top1_examples() {
        assert_eq!(top1_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(top1_accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(top1_accuracy(&[0], &[0, 1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn group_examples() {
        let th = GroupThresholds::default();
        let g = group_accuracy(&[Some(0.9), Some(0.6), Some(0.3)], &[5000, 50, 5], &th).unwrap();
        assert_eq!(g, GroupAccuracy { many: Some(0.9), medium: Some(0.6), few: Some(0.3) });
        let pc = [Some(0.8), Some(0.4)];
        let g = group_accuracy(&pc, &[500, 700], &th).unwrap();
        assert_eq!(g.many, Some(balanced_accuracy(&pc).unwrap()));
        assert_eq!((g.medium, g.few), (None, None));
        let g = group_accuracy(&[Some(0.7); 3], &[1000, 50, 2], &th).unwrap();
        assert_eq!(g, GroupAccuracy { many: Some(0.7), medium: Some(0.7), few: Some(0.7) });
        assert!(GroupThresholds::new(20, 20).is_err());
        assert!(GroupThresholds::new(5, 0).is_err());
    }

    #[test]
    fn mismatch_examples() {
        let a = ProbVector::new(vec![1.0, 0.0]).unwrap();
        let t = ProbVector::uniform(2).unwrap();
        let m = prior_mismatch(&a, &t).unwrap();
        assert_abs_diff_eq!(m.l1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.kl.unwrap(), 2f64.ln(), epsilon = 1e-15);
        let same = prior_mismatch(&t, &t).unwrap();
        assert_eq!((same.l1, same.kl), (0.0, Some(0.0)));
        let back = prior_mismatch(&t, &a).unwrap();
        assert_eq!(back.l1, m.l1);
        assert_eq!(back.kl, None);
        assert!(matches!(kl_divergence(&t, &a), Err(Error::Domain(_))));
    }

    #[test]
    fn confusion_consistency() {
        let truth = [0, 0, 1, 1, 1, 2];
        let pred = [0, 1, 1, 1, 0, 2];
        let cm = confusion_matrix(&pred, &truth, 3).unwrap();
        let total: usize = cm.iter().flatten().sum();
        assert_eq!(total, 6);
        let trace: usize = (0..3).map(|k| cm[k][k]).sum();
        assert_eq!(trace as f64 / 6.0, top1_accuracy(&pred, &truth).unwrap());
        let pc = per_class_accuracy(&cm);
        assert_eq!(pc, vec![Some(0.5), Some(2.0 / 3.0), Some(1.0)]);
        assert_abs_diff_eq!(balanced_accuracy(&pc).unwrap(), (0.5 + 2.0 / 3.0 + 1.0) / 3.0, epsilon = 1e-15);
        let absent = per_class_accuracy(&confusion_matrix(&[0, 0], &[0, 0], 2).unwrap());
        assert_eq!(absent, vec![Some(1.0), None]);
    }

    fn simplex(c: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, c).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn mismatch_ranges(a in simplex(4), t in simplex(4)) {
            let (a, t) = (ProbVector::new(a).unwrap(), ProbVector::new(t).unwrap());
            let m = prior_mismatch(&a, &t).unwrap();
            prop_assert!((0.0..=2.0 + 1e-12).contains(&m.l1));
            prop_assert!(m.kl.unwrap() >= 0.0);
            prop_assert_eq!(m.l1, prior_mismatch(&t, &a).unwrap().l1);
            prop_assert!(prior_mismatch(&a, &a).unwrap().kl.unwrap().abs() <= 1e-12);
        }
    }
}
