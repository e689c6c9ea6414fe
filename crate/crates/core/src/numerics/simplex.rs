use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-sum constraint when constructing a [`ProbVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex with at least two entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Dimension(format!(
                "a probability vector needs at least 2 entries, got {}",
                probs.len()
            )));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Normalization(format!(
                "entry {i} = {} is not a probability",
                probs[i]
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Normalization(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Dimension(format!(
                "uniform prior needs at least 2 classes, got {classes}"
            )));
        }
        Ok(Self(vec![1.0 / classes as f64; classes]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&p| p > 0.0)
    }

    /// Entry-wise logarithm; fails on a zero entry.
    pub fn ln(&self) -> Result<Vec<f64>> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if p > 0.0 {
                    Ok(p.ln())
                } else {
                    Err(Error::Domain(format!("log of zero prior entry {i}")))
                }
            })
            .collect()
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        ProbVector::new(v).map_err(serde::de::Error::custom)
    }
}

fn check_input(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::Dimension("empty score vector".into()));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("score {i} = {} is not finite", z[i])));
    }
    Ok(())
}

/// `log Σ exp(zᵢ)`, evaluated as `m + log Σ exp(zᵢ − m)` with `m = max z`.
pub fn log_sum_exp(z: &[f64]) -> Result<f64> {
    check_input(z)?;
    Ok(lse_unchecked(z))
}

pub(crate) fn lse_unchecked(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Result<ProbVector> {
    check_input(z)?;
    if z.len() < 2 {
        return Err(Error::Dimension(
            "softmax output must have at least 2 classes".into(),
        ));
    }
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    Ok(ProbVector(out))
}

/// Softmax over a row buffer, no validation. Callers guarantee finite, non-empty input.
pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// `zᵢ − log_sum_exp(z)`.
pub fn log_softmax(z: &[f64]) -> Result<Vec<f64>> {
    let l = log_sum_exp(z)?;
    Ok(z.iter().map(|v| v - l).collect())
}

/// Divides non-negative entries by their sum.
pub fn normalize_to_simplex(v: &[f64]) -> Result<ProbVector> {
    if v.len() < 2 {
        return Err(Error::Dimension(format!(
            "cannot normalize {} entries onto a simplex",
            v.len()
        )));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Normalization(format!(
            "entry {i} = {} is negative or not finite",
            v[i]
        )));
    }
    let s: f64 = v.iter().sum();
    if s <= 0.0 {
        return Err(Error::Normalization("all entries are zero".into()));
    }
    Ok(ProbVector(v.iter().map(|x| x / s).collect()))
}
