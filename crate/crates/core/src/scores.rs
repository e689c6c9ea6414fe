//! Per-sample score matrices: raw logits and row-stochastic posteriors.

use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax_in_place, Matrix, SIMPLEX_TOL};

/// Row `i` holds the unnormalized class scores of sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Matrix);

impl LogitMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.cols() < 2 {
            return Err(Error::Dimension(format!(
                "logits need at least 2 classes, got {}",
                m.cols()
            )));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn softmax(&self) -> PosteriorMatrix {
        let mut m = self.0.clone();
        for i in 0..m.rows() {
            softmax_in_place(m.row_mut(i));
        }
        PosteriorMatrix(m)
    }

    /// Row-wise argmax, ties to the smaller class index.
    pub fn predictions(&self) -> Vec<usize> {
        self.0.iter_rows().map(argmax).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> LogitMatrix {
        LogitMatrix(self.0.select_rows(idx))
    }
}

/// Rows lie on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix(Matrix);

impl PosteriorMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.cols() < 2 {
            return Err(Error::Dimension(format!(
                "posteriors need at least 2 classes, got {}",
                m.cols()
            )));
        }
        for (i, r) in m.iter_rows().enumerate() {
            let s: f64 = r.iter().sum();
            if r.iter().any(|&p| p < 0.0) || (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Normalization(format!(
                    "posterior row {i} is not on the simplex (sum {s})"
                )));
            }
        }
        Ok(Self(m))
    }

    pub(crate) fn from_trusted(m: Matrix) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.0.iter_rows().map(argmax).collect()
    }

    /// Entry-wise natural log. Zero probabilities map to `-inf`, so the result
    /// is only a valid [`LogitMatrix`] when every entry is positive.
    pub fn ln(&self) -> Result<LogitMatrix> {
        let vals: Vec<f64> = self.0.values().iter().map(|p| p.ln()).collect();
        LogitMatrix::new(Matrix::from_vec(self.0.rows(), self.0.cols(), vals)?)
    }

    pub fn select_rows(&self, idx: &[usize]) -> PosteriorMatrix {
        PosteriorMatrix(self.0.select_rows(idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_are_posteriors() {
        let l = LogitMatrix::new(Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, -1.0]], 2).unwrap()).unwrap();
        let p = l.softmax();
        assert!(PosteriorMatrix::new(p.matrix().clone()).is_ok());
        assert_eq!(p.matrix().row(0), &[0.5, 0.5]);
        assert_eq!(l.predictions(), vec![0, 0]);
    }

    #[test]
    fn rejects_off_simplex_rows() {
        let m = Matrix::from_rows(&[vec![0.6, 0.6]], 2).unwrap();
        assert!(matches!(PosteriorMatrix::new(m), Err(Error::Normalization(_))));
        let one = Matrix::from_rows(&[vec![1.0]], 1).unwrap();
        assert!(LogitMatrix::new(one).is_err());
    }
}
