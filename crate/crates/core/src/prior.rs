//! Estimates of the class prior a trained model has absorbed, and α tuning.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adjust::{adjust_logits, AdjustMethod, AdjustmentSpec};
use crate::dataset::{empirical_prior, write_atomic, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::top1_accuracy;
use crate::model::Model;
use crate::numerics::{normalize_to_simplex, ProbVector};
use crate::scores::{LogitMatrix, PosteriorMatrix};

/// Floor applied to every estimate before renormalization.
pub const PRIOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Column means of training-set posteriors.
    TrainSide,
    /// Column means of held-out posteriors drawn from the target distribution.
    ValSide,
    /// Training-set posteriors reweighted by target/train prior ratio.
    TrainReweighted,
    /// Mean of a val-side and a train-reweighted estimate.
    Averaged,
    /// Empirical class frequencies.
    Frequency,
}

impl EstimatorKind {
    /// True for the estimators of the prior left over after logit-adjusted training.
    pub fn is_residual(self) -> bool {
        matches!(self, Self::ValSide | Self::TrainReweighted | Self::Averaged)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrainSide => "train-side",
            Self::ValSide => "val-side",
            Self::TrainReweighted => "train-reweighted",
            Self::Averaged => "averaged",
            Self::Frequency => "frequency",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "train-side" => Ok(Self::TrainSide),
            "val" | "val-side" => Ok(Self::ValSide),
            "train-reweighted" => Ok(Self::TrainReweighted),
            "averaged" => Ok(Self::Averaged),
            "frequency" | "freq" => Ok(Self::Frequency),
            other => Err(Error::Usage(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior")]
pub struct EffectivePrior {
    pub probs: ProbVector,
    pub estimator: EstimatorKind,
    pub samples: usize,
    /// Exponent applied to `probs` at adjustment time.
    pub alpha: f64,
}

#[derive(Deserialize)]
struct RawPrior {
    probs: ProbVector,
    estimator: EstimatorKind,
    samples: usize,
    #[serde(default = "one")]
    alpha: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawPrior> for EffectivePrior {
    type Error = Error;
    fn try_from(r: RawPrior) -> Result<Self> {
        EffectivePrior::new(r.probs, r.estimator, r.samples)?.with_alpha(r.alpha)
    }
}

impl EffectivePrior {
    pub fn new(probs: ProbVector, estimator: EstimatorKind, samples: usize) -> Result<Self> {
        if !probs.is_strictly_positive() {
            return Err(Error::Domain("effective prior must be strictly positive".into()));
        }
        if samples == 0 {
            return Err(Error::Dimension("effective prior from zero samples".into()));
        }
        Ok(Self { probs, estimator, samples, alpha: 1.0 })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {alpha} must be >= 0")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    /// Frequency prior from training counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let p = empirical_prior(counts)?;
        Self::new(floor_and_normalize(p.as_slice())?, EstimatorKind::Frequency, counts.iter().sum())
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Raises every entry to at least [`PRIOR_FLOOR`] and renormalizes.
pub fn floor_and_normalize(v: &[f64]) -> Result<ProbVector> {
    let floored: Vec<f64> = v.iter().map(|&p| p.max(PRIOR_FLOOR)).collect();
    normalize_to_simplex(&floored)
}

fn column_mean_prior(post: &PosteriorMatrix, kind: EstimatorKind) -> Result<EffectivePrior> {
    let means = post.matrix().column_means()?;
    EffectivePrior::new(floor_and_normalize(&means)?, kind, post.rows())
}

/// Mean training-set posterior.
pub fn effective_prior_train(posteriors: &PosteriorMatrix) -> Result<EffectivePrior> {
    column_mean_prior(posteriors, EstimatorKind::TrainSide)
}

/// Mean posterior over held-out samples from the target distribution.
pub fn pmbar_from_val(posteriors: &PosteriorMatrix) -> Result<EffectivePrior> {
    column_mean_prior(posteriors, EstimatorKind::ValSide)
}

/// Mean training-set posterior reweighted entry-wise by `target / train_prior`.
pub fn pmbar_from_train(
    train_posteriors: &PosteriorMatrix,
    target: &ProbVector,
    train_prior: &ProbVector,
) -> Result<EffectivePrior> {
    let c = train_posteriors.num_classes();
    if target.len() != c || train_prior.len() != c {
        return Err(Error::Dimension(format!(
            "posteriors have {c} classes, target {} and train prior {}",
            target.len(),
            train_prior.len()
        )));
    }
    if !train_prior.is_strictly_positive() {
        return Err(Error::Domain("train prior has a zero entry".into()));
    }
    let means = train_posteriors.matrix().column_means()?;
    let w: Vec<f64> = (0..c).map(|k| means[k] * target[k] / train_prior[k]).collect();
    let p = normalize_to_simplex(&w)?;
    EffectivePrior::new(
        floor_and_normalize(p.as_slice())?,
        EstimatorKind::TrainReweighted,
        train_posteriors.rows(),
    )
}

/// Probability-space mean of two residual-prior estimates.
pub fn average_estimates(a: &EffectivePrior, b: &EffectivePrior) -> Result<EffectivePrior> {
    if !a.estimator.is_residual() || !b.estimator.is_residual() {
        return Err(Error::EstimatorKind(format!(
            "cannot average {} with {}",
            a.estimator, b.estimator
        )));
    }
    if a.num_classes() != b.num_classes() {
        return Err(Error::Dimension(format!(
            "averaging priors of {} and {} classes",
            a.num_classes(),
            b.num_classes()
        )));
    }
    let m: Vec<f64> = a
        .probs
        .as_slice()
        .iter()
        .zip(b.probs.as_slice())
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    EffectivePrior::new(
        floor_and_normalize(&m)?,
        EstimatorKind::Averaged,
        a.samples + b.samples,
    )
}

/// `{0, 0.25, …, 2.0}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=8).map(|i| i as f64 * 0.25).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub best: f64,
    /// `(alpha, holdout top-1)` in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Holdout accuracy for every α in `grid`; the best is the smallest α
/// attaining the maximum.
pub fn sweep_alpha(
    logits: &LogitMatrix,
    labels: &[usize],
    method: AdjustMethod,
    estimated: &EffectivePrior,
    target: &ProbVector,
    grid: &[f64],
) -> Result<AlphaSweep> {
    if grid.is_empty() {
        return Err(Error::Config("empty alpha grid".into()));
    }
    if let Some(a) = grid.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Config(format!("alpha {a} must be >= 0")));
    }
    if logits.rows() == 0 {
        return Err(Error::Dimension("empty holdout set".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &alpha in grid {
        let spec = AdjustmentSpec::new(method, estimated.clone(), target.clone(), alpha)?;
        let acc = top1_accuracy(&adjust_logits(logits, &spec)?.predictions(), labels)?;
        curve.push((alpha, acc));
        best = match best {
            Some((ba, bacc)) if bacc > acc || (bacc == acc && ba <= alpha) => Some((ba, bacc)),
            _ => Some((alpha, acc)),
        };
    }
    Ok(AlphaSweep { best: best.map(|b| b.0).unwrap_or(0.0), curve })
}

/// Grid search for α on a holdout set, using the model's logits.
pub fn tune_alpha(
    model: &Model,
    method: AdjustMethod,
    estimated: &EffectivePrior,
    grid: &[f64],
    holdout: &LabeledDataset,
    target: &ProbVector,
) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::Dimension("empty holdout set".into()));
    }
    let logits = model.predict_logits(holdout.features())?;
    Ok(sweep_alpha(&logits, holdout.labels(), method, estimated, target, grid)?.best)
}

pub fn save_prior(prior: &EffectivePrior, path: impl AsRef<Path>) -> Result<()> {
    let s = serde_json::to_string_pretty(prior)?;
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn load_prior(path: impl AsRef<Path>) -> Result<EffectivePrior> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn post(rows: &[Vec<f64>]) -> PosteriorMatrix {
        PosteriorMatrix::new(Matrix::from_rows(rows, rows[0].len()).unwrap()).unwrap()
    }

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn column_mean_examples() {
        let p = effective_prior_train(&post(&vec![vec![0.7, 0.3]; 5])).unwrap();
        assert_abs_diff_eq!(p.probs[0], 0.7, epsilon = 1e-12);
        assert_eq!(p.estimator, EstimatorKind::TrainSide);
        assert_eq!(p.samples, 5);
        let p = pmbar_from_val(&post(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(p.probs.as_slice(), &[0.5, 0.5]);
        let p = pmbar_from_val(&post(&[vec![0.2, 0.8]])).unwrap();
        assert_abs_diff_eq!(p.probs[1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let empty = PosteriorMatrix::new(Matrix::zeros(0, 2)).unwrap();
        assert!(matches!(effective_prior_train(&empty), Err(Error::Dimension(_))));
        assert!(matches!(pmbar_from_val(&empty), Err(Error::Dimension(_))));
    }

    #[test]
    fn flooring_keeps_entries_positive() {
        let p = effective_prior_train(&post(&[vec![1.0, 0.0, 0.0]])).unwrap();
        assert!(p.probs.is_strictly_positive());
        assert!((p.probs[0] - 1.0).abs() <= PRIOR_FLOOR * 3.0);
    }

    #[test]
    fn reweighted_example() {
        let p = pmbar_from_train(
            &post(&vec![vec![0.8, 0.2]; 3]),
            &pv(&[0.5, 0.5]),
            &pv(&[0.9, 0.1]),
        )
        .unwrap();
        assert_abs_diff_eq!(p.probs[0], 0.4 / 0.9 / (0.4 / 0.9 + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p.probs[0], 0.3077, epsilon = 1e-4);
        assert_abs_diff_eq!(p.probs[1], 0.6923, epsilon = 1e-4);
        assert_eq!(p.estimator, EstimatorKind::TrainReweighted);

        let same = pmbar_from_train(&post(&[vec![0.6, 0.4], vec![0.2, 0.8]]), &pv(&[0.3, 0.7]), &pv(&[0.3, 0.7])).unwrap();
        assert_abs_diff_eq!(same.probs[0], 0.4, epsilon = 1e-12);

        let zero = pv(&[1.0, 0.0]);
        assert!(matches!(
            pmbar_from_train(&post(&[vec![0.5, 0.5]]), &pv(&[0.5, 0.5]), &zero),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn averaging_rules() {
        let a = pmbar_from_val(&post(&[vec![0.6, 0.4]])).unwrap();
        let same = average_estimates(&a, &a).unwrap();
        assert_abs_diff_eq!(same.probs[0], 0.6, epsilon = 1e-15);
        assert_eq!(same.estimator, EstimatorKind::Averaged);
        let x = pmbar_from_val(&post(&[vec![1.0, 0.0]])).unwrap();
        let y = pmbar_from_val(&post(&[vec![0.0, 1.0]])).unwrap();
        assert_abs_diff_eq!(average_estimates(&x, &y).unwrap().probs[0], 0.5, epsilon = 1e-12);
        let t = effective_prior_train(&post(&[vec![0.6, 0.4]])).unwrap();
        assert!(matches!(average_estimates(&a, &t), Err(Error::EstimatorKind(_))));
    }

    #[test]
    fn sweep_tie_break_and_single_value() {
        let logits = LogitMatrix::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap()).unwrap();
        let labels = [0, 1];
        let uniform = EffectivePrior::new(ProbVector::uniform(2).unwrap(), EstimatorKind::TrainSide, 2).unwrap();
        let target = ProbVector::uniform(2).unwrap();
        let s = sweep_alpha(&logits, &labels, AdjustMethod::P2pCe, &uniform, &target, &[1.5, 0.5, 1.0]).unwrap();
        assert_eq!(s.best, 0.5);
        let s = sweep_alpha(&logits, &labels, AdjustMethod::P2pCe, &uniform, &target, &[1.0]).unwrap();
        assert_eq!(s.best, 1.0);
        assert!(matches!(
            sweep_alpha(&logits, &labels, AdjustMethod::P2pCe, &uniform, &target, &[]),
            Err(Error::Config(_))
        ));
        let empty = LogitMatrix::new(Matrix::zeros(0, 2)).unwrap();
        assert!(matches!(
            sweep_alpha(&empty, &[], AdjustMethod::P2pCe, &uniform, &target, &[1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let p = pmbar_from_val(&post(&[vec![0.25, 0.75]])).unwrap().with_alpha(0.5).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"estimator\":\"val-side\""));
        let back: EffectivePrior = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<EffectivePrior>(
            r#"{"probs":[1.0,0.0],"estimator":"val-side","samples":3,"alpha":1.0}"#
        )
        .is_err());
        assert!(serde_json::from_str::<EffectivePrior>(
            r#"{"probs":[0.5,0.5],"estimator":"val-side","samples":0,"alpha":1.0}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn column_mean_bounds(rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..20)) {
            let rows: Vec<Vec<f64>> = rows.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let p = pmbar_from_val(&post(&rows)).unwrap();
            for k in 0..3 {
                let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p.probs[k] >= lo - 1e-12 && p.probs[k] <= hi + 1e-12);
            }
            prop_assert!(ProbVector::new(p.probs.as_slice().to_vec()).is_ok());
        }
    }
}
