use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{lse_unchecked, Matrix, ProbVector};
use crate::scores::LogitMatrix;

/// `(−log softmax(z)[label], softmax(z) − onehot(label))`.
pub fn ce_loss_and_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Dimension(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite logit".into()));
    }
    let l = lse_unchecked(logits);
    let mut g: Vec<f64> = logits.iter().map(|z| (z - l).exp()).collect();
    g[label] -= 1.0;
    Ok((l - logits[label], g))
}

/// Cross-entropy on `zₖ + α log P(yₖ)`. The shift is constant in `z`, so the
/// gradient with respect to `z` is the plain CE gradient at the shifted point.
pub fn la_loss_and_grad(
    logits: &[f64],
    label: usize,
    prior: &ProbVector,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    if prior.len() != logits.len() {
        return Err(Error::Dimension(format!(
            "prior has {} classes, logits {}",
            prior.len(),
            logits.len()
        )));
    }
    let lp = prior.ln()?;
    let shifted: Vec<f64> = logits.iter().zip(&lp).map(|(z, l)| z + alpha * l).collect();
    ce_loss_and_grad(&shifted, label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossSpec {
    PlainCe,
    LogitAdjusted { prior: ProbVector, alpha: f64 },
}

impl LossSpec {
    pub fn logit_adjusted(prior: ProbVector, alpha: f64) -> Result<Self> {
        if !prior.is_strictly_positive() {
            return Err(Error::Domain(
                "logit-adjusted loss needs a strictly positive prior".into(),
            ));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {alpha} must be >= 0")));
        }
        Ok(LossSpec::LogitAdjusted { prior, alpha })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LossSpec::PlainCe => "plain-ce",
            LossSpec::LogitAdjusted { .. } => "logit-adjusted",
        }
    }

    /// The scores the loss sees: raw logits, or logits shifted by `α log P`.
    pub fn training_logits(&self, logits: &LogitMatrix) -> Result<LogitMatrix> {
        let (prior, alpha) = match self {
            LossSpec::PlainCe => return Ok(logits.clone()),
            LossSpec::LogitAdjusted { prior, alpha } => (prior, *alpha),
        };
        let c = logits.num_classes();
        if prior.len() != c {
            return Err(Error::Dimension(format!("prior has {} classes, logits {c}", prior.len())));
        }
        let lp = prior.ln()?;
        let vals = logits.matrix().values().iter().enumerate().map(|(i, z)| z + alpha * lp[i % c]).collect();
        LogitMatrix::new(Matrix::from_vec(logits.rows(), c, vals)?)
    }

    pub fn loss_and_grad(&self, logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        match self {
            LossSpec::PlainCe => ce_loss_and_grad(logits, label),
            LossSpec::LogitAdjusted { prior, alpha } => la_loss_and_grad(logits, label, prior, *alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ce_examples() {
        let (l, g) = ce_loss_and_grad(&[0.0, 0.0], 0).unwrap();
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-15);
        assert_eq!(g, vec![-0.5, 0.5]);
        let (l, _) = ce_loss_and_grad(&[60.0, -60.0], 0).unwrap();
        assert!(l < 1e-50);
        assert!(matches!(ce_loss_and_grad(&[0.0, 0.0], 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn la_examples() {
        let p = ProbVector::new(vec![0.9, 0.1]).unwrap();
        let (l, _) = la_loss_and_grad(&[0.0, 0.0], 1, &p, 1.0).unwrap();
        assert_abs_diff_eq!(l, 10f64.ln(), epsilon = 1e-12);
        let (l0, g0) = la_loss_and_grad(&[0.3, -0.2], 0, &p, 0.0).unwrap();
        let (lc, gc) = ce_loss_and_grad(&[0.3, -0.2], 0).unwrap();
        assert_eq!(l0, lc);
        assert_eq!(g0, gc);
        let zero = ProbVector::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(la_loss_and_grad(&[0.0, 0.0], 0, &zero, 1.0), Err(Error::Domain(_))));
        assert!(LossSpec::logit_adjusted(zero, 1.0).is_err());
    }

    #[test]
    fn training_logits_shift() {
        let l = LogitMatrix::new(Matrix::from_rows(&[vec![0.0, 0.0]], 2).unwrap()).unwrap();
        assert_eq!(LossSpec::PlainCe.training_logits(&l).unwrap(), l);
        let spec = LossSpec::logit_adjusted(ProbVector::new(vec![0.9, 0.1]).unwrap(), 2.0).unwrap();
        let t = spec.training_logits(&l).unwrap();
        assert_abs_diff_eq!(t.matrix().get(0, 1), 2.0 * 0.1f64.ln(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn grad_sums_to_zero(z in prop::collection::vec(-30.0f64..30.0, 2..8), pick in 0usize..8) {
            let y = pick % z.len();
            let (_, g) = ce_loss_and_grad(&z, y).unwrap();
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn uniform_prior_matches_ce(z in prop::collection::vec(-30.0f64..30.0, 2..8), pick in 0usize..8, alpha in 0.0f64..3.0) {
            let y = pick % z.len();
            let u = ProbVector::uniform(z.len()).unwrap();
            let (la, gla) = la_loss_and_grad(&z, y, &u, alpha).unwrap();
            let (ce, gce) = ce_loss_and_grad(&z, y).unwrap();
            prop_assert!((la - ce).abs() <= 1e-12);
            for (a, b) in gla.iter().zip(&gce) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
