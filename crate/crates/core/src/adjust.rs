//! Post-hoc prior correction of logits and posteriors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ProbVector};
use crate::prior::{EffectivePrior, EstimatorKind};
use crate::scores::{LogitMatrix, PosteriorMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjustMethod {
    None,
    /// Divide by the empirical class frequencies.
    ClassFrequency,
    /// Divide by the effective prior of a plain cross-entropy model.
    P2pCe,
    /// Divide by the residual prior of a logit-adjusted model.
    P2pLa,
}

impl AdjustMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::ClassFrequency => "class-frequency",
            Self::P2pCe => "p2p-ce",
            Self::P2pLa => "p2p-la",
        }
    }

    /// Whether priors from `kind` may be used with this method.
    pub fn accepts(self, kind: EstimatorKind) -> bool {
        match self {
            Self::None => true,
            Self::ClassFrequency => kind == EstimatorKind::Frequency,
            Self::P2pCe => kind == EstimatorKind::TrainSide,
            Self::P2pLa => kind.is_residual(),
        }
    }
}

impl fmt::Display for AdjustMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdjustMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "class-frequency" | "freq" => Ok(Self::ClassFrequency),
            "p2p-ce" => Ok(Self::P2pCe),
            "p2p-la" => Ok(Self::P2pLa),
            other => Err(Error::Usage(format!("unknown adjustment method '{other}'"))),
        }
    }
}

/// A validated correction `z − α·log P̂ + log Pᵗ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct AdjustmentSpec {
    method: AdjustMethod,
    estimated: EffectivePrior,
    target: ProbVector,
    alpha: f64,
}

#[derive(Deserialize)]
struct RawSpec {
    method: AdjustMethod,
    estimated: EffectivePrior,
    target: ProbVector,
    alpha: f64,
}

impl TryFrom<RawSpec> for AdjustmentSpec {
    type Error = Error;
    fn try_from(r: RawSpec) -> Result<Self> {
        AdjustmentSpec::new(r.method, r.estimated, r.target, r.alpha)
    }
}

impl AdjustmentSpec {
    pub fn new(method: AdjustMethod, estimated: EffectivePrior, target: ProbVector, alpha: f64) -> Result<Self> {
        if !method.accepts(estimated.estimator) {
            return Err(Error::Spec(format!(
                "method {method} cannot use a {} prior",
                estimated.estimator
            )));
        }
        if estimated.num_classes() != target.len() {
            return Err(Error::Dimension(format!(
                "estimated prior has {} classes, target {}",
                estimated.num_classes(),
                target.len()
            )));
        }
        if !target.is_strictly_positive() {
            return Err(Error::Domain("target prior has a zero entry".into()));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {alpha} must be >= 0")));
        }
        Ok(Self { method, estimated, target, alpha })
    }

    /// Uses the α stored on the estimate.
    pub fn from_prior(method: AdjustMethod, estimated: EffectivePrior, target: ProbVector) -> Result<Self> {
        let alpha = estimated.alpha;
        Self::new(method, estimated, target, alpha)
    }

    /// The identity adjustment on `classes` classes.
    pub fn none(classes: usize) -> Result<Self> {
        let u = ProbVector::uniform(classes)?;
        let est = EffectivePrior::new(u.clone(), EstimatorKind::Frequency, 1)?;
        Self::new(AdjustMethod::None, est, u, 0.0)
    }

    pub fn method(&self) -> AdjustMethod {
        self.method
    }

    pub fn estimated(&self) -> &EffectivePrior {
        &self.estimated
    }

    pub fn target(&self) -> &ProbVector {
        &self.target
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_classes(&self) -> usize {
        self.target.len()
    }

    /// Per-class additive logit shift; all zeros for `none`.
    pub fn log_shift(&self) -> Vec<f64> {
        if self.method == AdjustMethod::None {
            return vec![0.0; self.num_classes()];
        }
        self.estimated
            .probs
            .as_slice()
            .iter()
            .zip(self.target.as_slice())
            .map(|(p, t)| t.ln() - self.alpha * p.ln())
            .collect()
    }
}

/// Posteriors after correction, with the spec that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedPosteriors {
    pub matrix: PosteriorMatrix,
    pub spec: AdjustmentSpec,
}

fn check_classes(have: usize, spec: &AdjustmentSpec) -> Result<()> {
    if have != spec.num_classes() {
        return Err(Error::Dimension(format!(
            "scores have {have} classes, adjustment {}",
            spec.num_classes()
        )));
    }
    Ok(())
}

pub fn adjust_logits(logits: &LogitMatrix, spec: &AdjustmentSpec) -> Result<LogitMatrix> {
    check_classes(logits.num_classes(), spec)?;
    if spec.method == AdjustMethod::None {
        return Ok(logits.clone());
    }
    let shift = spec.log_shift();
    let c = shift.len();
    let vals: Vec<f64> = logits
        .matrix()
        .values()
        .iter()
        .enumerate()
        .map(|(i, z)| z + shift[i % c])
        .collect();
    LogitMatrix::new(Matrix::from_vec(logits.rows(), c, vals)?)
}

/// Rows multiplied by `Pᵗ / P̂^α` and renormalized. Zero entries stay zero.
pub fn adjust_posteriors(post: &PosteriorMatrix, spec: &AdjustmentSpec) -> Result<AdjustedPosteriors> {
    check_classes(post.num_classes(), spec)?;
    if spec.method == AdjustMethod::None {
        return Ok(AdjustedPosteriors { matrix: post.clone(), spec: spec.clone() });
    }
    let shift = spec.log_shift();
    let c = shift.len();
    let mut out = post.matrix().clone();
    let mut logs = vec![0.0; c];
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mut m = f64::NEG_INFINITY;
        for k in 0..c {
            logs[k] = if row[k] > 0.0 { row[k].ln() + shift[k] } else { f64::NEG_INFINITY };
            m = m.max(logs[k]);
        }
        let mut s = 0.0;
        for k in 0..c {
            row[k] = (logs[k] - m).exp();
            s += row[k];
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(AdjustedPosteriors { matrix: PosteriorMatrix::from_trusted(out), spec: spec.clone() })
}

/// Mean posterior over the given samples.
pub fn achieved_prior(post: &PosteriorMatrix) -> Result<ProbVector> {
    let means = post.matrix().column_means()?;
    crate::numerics::normalize_to_simplex(&means)
}
