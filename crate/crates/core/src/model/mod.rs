//! Small softmax classifiers, their losses, SGD training and persistence.

mod io;
mod loss;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};
use crate::scores::LogitMatrix;

pub use io::{load_model, save_model, Provenance, SavedModel, MODEL_SCHEMA};
pub use loss::{ce_loss_and_grad, la_loss_and_grad, LossSpec};
pub use train::{stage2_retrain, train, Schedule, StageTwoMode, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::Usage(format!("unknown activation '{other}'"))),
        }
    }
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative at pre-activation `v`.
    fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }
}

/// `z = W x + b` with `W` of shape C × D.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxModel {
    weights: Matrix,
    biases: Vec<f64>,
}

impl LinearSoftmaxModel {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::Dimension(format!(
                "{} weight rows but {} biases",
                weights.rows(),
                biases.len()
            )));
        }
        if weights.rows() < 2 {
            return Err(Error::Dimension("a classifier needs at least 2 classes".into()));
        }
        if biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("bias is not finite".into()));
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(classes: usize, dims: usize) -> Result<Self> {
        Self::new(Matrix::zeros(classes, dims), vec![0.0; classes])
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn num_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn dims(&self) -> usize {
        self.weights.cols()
    }

    /// Adds a per-class constant to the biases, which is how a post-hoc logit
    /// shift looks from the model's side.
    pub fn with_bias_shift(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.biases.len() {
            return Err(Error::Dimension("bias shift length mismatch".into()));
        }
        let b = self.biases.iter().zip(shift).map(|(b, s)| b + s).collect();
        Self::new(self.weights.clone(), b)
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.biases[c] + crate::numerics::dot(self.weights.row(c), x);
        }
    }

    fn param_count(&self) -> usize {
        self.weights.values().len() + self.biases.len()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.values());
        out.extend_from_slice(&self.biases);
    }

    fn read_params(&mut self, p: &[f64]) {
        let nw = self.weights.values().len();
        self.weights = Matrix::from_vec(self.weights.rows(), self.weights.cols(), p[..nw].to_vec())
            .expect("parameter buffer has the weight shape");
        let nb = self.biases.len();
        self.biases.copy_from_slice(&p[nw..nw + nb]);
    }

    /// Adds `g xᵀ` and `g` into a flat gradient laid out like [`Self::write_params`].
    fn accumulate(&self, x: &[f64], g: &[f64], grad: &mut [f64]) {
        let d = self.dims();
        let nw = self.weights.values().len();
        for (c, &gc) in g.iter().enumerate() {
            let row = &mut grad[c * d..(c + 1) * d];
            for (r, xv) in row.iter_mut().zip(x) {
                *r += gc * xv;
            }
            grad[nw + c] += gc;
        }
    }
}

/// One hidden layer followed by a linear softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    hidden_weights: Matrix,
    hidden_biases: Vec<f64>,
    activation: Activation,
    head: LinearSoftmaxModel,
}

impl MlpModel {
    pub fn new(
        hidden_weights: Matrix,
        hidden_biases: Vec<f64>,
        activation: Activation,
        head: LinearSoftmaxModel,
    ) -> Result<Self> {
        if hidden_weights.rows() == 0 || hidden_weights.rows() != hidden_biases.len() {
            return Err(Error::Dimension("hidden layer shape mismatch".into()));
        }
        if head.dims() != hidden_weights.rows() {
            return Err(Error::Dimension(format!(
                "head expects {} features but hidden layer has {} units",
                head.dims(),
                hidden_weights.rows()
            )));
        }
        Ok(Self { hidden_weights, hidden_biases, activation, head })
    }

    pub fn hidden_weights(&self) -> &Matrix {
        &self.hidden_weights
    }

    pub fn hidden_biases(&self) -> &[f64] {
        &self.hidden_biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> &LinearSoftmaxModel {
        &self.head
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_biases.len()
    }

    fn hidden_into(&self, x: &[f64], pre: &mut [f64], h: &mut [f64]) {
        for j in 0..self.hidden_units() {
            pre[j] = self.hidden_biases[j] + crate::numerics::dot(self.hidden_weights.row(j), x);
            h[j] = self.activation.apply(pre[j]);
        }
    }

    fn body_param_count(&self) -> usize {
        self.hidden_weights.values().len() + self.hidden_biases.len()
    }
}

/// A trainable classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearSoftmaxModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn linear_zero(classes: usize, dims: usize) -> Result<Self> {
        Ok(Model::Linear(LinearSoftmaxModel::zeros(classes, dims)?))
    }

    /// Hidden weights uniform in `[−1/√D, 1/√D]`, hidden biases and head zero.
    pub fn mlp_init(
        classes: usize,
        dims: usize,
        hidden: usize,
        activation: Activation,
        rng: RngStream,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("hidden layer needs at least one unit".into()));
        }
        let bound = 1.0 / (dims as f64).sqrt();
        let mut r = rng.rng();
        let w: Vec<f64> = (0..hidden * dims).map(|_| r.random_range(-bound..=bound)).collect();
        Ok(Model::Mlp(MlpModel::new(
            Matrix::from_vec(hidden, dims, w)?,
            vec![0.0; hidden],
            activation,
            LinearSoftmaxModel::zeros(classes, hidden)?,
        )?))
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Linear(m) => m.num_classes(),
            Model::Mlp(m) => m.head.num_classes(),
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            Model::Linear(m) => m.dims(),
            Model::Mlp(m) => m.hidden_weights.cols(),
        }
    }

    pub fn as_linear(&self) -> Option<&LinearSoftmaxModel> {
        match self {
            Model::Linear(m) => Some(m),
            Model::Mlp(_) => None,
        }
    }

    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Model::Linear(m) => m.logits_into(x, out),
            Model::Mlp(m) => {
                let mut pre = vec![0.0; m.hidden_units()];
                let mut h = vec![0.0; m.hidden_units()];
                m.hidden_into(x, &mut pre, &mut h);
                m.head.logits_into(&h, out);
            }
        }
    }

    /// Row `i` of the result is the logit vector of feature row `i`.
    pub fn predict_logits(&self, features: &Matrix) -> Result<LogitMatrix> {
        if features.cols() != self.dims() {
            return Err(Error::Dimension(format!(
                "model expects {} features, data has {}",
                self.dims(),
                features.cols()
            )));
        }
        let c = self.num_classes();
        let mut out = Matrix::zeros(features.rows(), c);
        for (i, x) in features.iter_rows().enumerate() {
            self.logits_into(x, out.row_mut(i));
        }
        if out.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model produced non-finite logits".into()));
        }
        LogitMatrix::new(out)
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Linear(m) => m.param_count(),
            Model::Mlp(m) => m.body_param_count() + m.head.param_count(),
        }
    }

    /// Flat parameters: hidden weights, hidden biases (MLP only), then head weights and biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match self {
            Model::Linear(m) => m.write_params(&mut out),
            Model::Mlp(m) => {
                out.extend_from_slice(m.hidden_weights.values());
                out.extend_from_slice(&m.hidden_biases);
                m.head.write_params(&mut out);
            }
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "{} parameters for a model with {}",
                p.len(),
                self.param_count()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("non-finite parameter".into()));
        }
        match self {
            Model::Linear(m) => m.read_params(p),
            Model::Mlp(m) => {
                let nw = m.hidden_weights.values().len();
                let nb = m.hidden_biases.len();
                m.hidden_weights =
                    Matrix::from_vec(m.hidden_weights.rows(), m.hidden_weights.cols(), p[..nw].to_vec())?;
                m.hidden_biases.copy_from_slice(&p[nw..nw + nb]);
                m.head.read_params(&p[nw + nb..]);
            }
        }
        Ok(())
    }

    /// Offset of the classifier head inside [`Self::params`].
    pub fn head_offset(&self) -> usize {
        match self {
            Model::Linear(_) => 0,
            Model::Mlp(m) => m.body_param_count(),
        }
    }

    /// Resets the classifier head to zero.
    pub fn reset_head(&mut self) {
        let head = match self {
            Model::Linear(m) => m,
            Model::Mlp(m) => &mut m.head,
        };
        *head = LinearSoftmaxModel::zeros(head.num_classes(), head.dims())
            .expect("existing head shape is valid");
    }

    /// Loss for one sample and its gradient with respect to the flat
    /// parameters, added into `grad`. With `head_only` the body gradient is skipped.
    pub(crate) fn loss_and_accumulate(
        &self,
        x: &[f64],
        label: usize,
        loss: &LossSpec,
        grad: &mut [f64],
        head_only: bool,
    ) -> Result<f64> {
        let c = self.num_classes();
        let mut z = vec![0.0; c];
        match self {
            Model::Linear(m) => {
                m.logits_into(x, &mut z);
                let (l, g) = loss.loss_and_grad(&z, label)?;
                m.accumulate(x, &g, grad);
                Ok(l)
            }
            Model::Mlp(m) => {
                let hu = m.hidden_units();
                let mut pre = vec![0.0; hu];
                let mut h = vec![0.0; hu];
                m.hidden_into(x, &mut pre, &mut h);
                m.head.logits_into(&h, &mut z);
                let (l, g) = loss.loss_and_grad(&z, label)?;
                let off = m.body_param_count();
                m.head.accumulate(&h, &g, &mut grad[off..]);
                if !head_only {
                    let d = x.len();
                    let nw = m.hidden_weights.values().len();
                    for j in 0..hu {
                        let back: f64 = (0..c).map(|k| m.head.weights.get(k, j) * g[k]).sum();
                        let dpre = back * m.activation.derivative(pre[j]);
                        if dpre != 0.0 {
                            let row = &mut grad[j * d..(j + 1) * d];
                            for (r, xv) in row.iter_mut().zip(x) {
                                *r += dpre * xv;
                            }
                        }
                        grad[nw + j] += dpre;
                    }
                }
                Ok(l)
            }
        }
    }

    /// Loss for one sample and its gradient with respect to [`Model::params`].
    pub fn loss_and_grad(&self, x: &[f64], label: usize, loss: &LossSpec) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dims() || label >= self.num_classes() {
            return Err(Error::Dimension(format!(
                "sample has {} features and label {label}; model expects {} and < {}",
                x.len(),
                self.dims(),
                self.num_classes()
            )));
        }
        let mut g = vec![0.0; self.param_count()];
        let l = self.loss_and_accumulate(x, label, loss, &mut g, false)?;
        Ok((l, g))
    }

    /// Mean loss over a dataset (no gradient).
    pub fn mean_loss(&self, features: &Matrix, labels: &[usize], loss: &LossSpec) -> Result<f64> {
        let logits = self.predict_logits(features)?;
        let mut total = 0.0;
        for (z, &y) in logits.matrix().iter_rows().zip(labels) {
            total += loss.loss_and_grad(z, y)?.0;
        }
        Ok(total / labels.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{normalize_to_simplex, ProbVector, SIMPLEX_TOL};
    use rand::Rng;

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = Model::linear_zero(3, 4).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0, 0.5]], 4).unwrap();
        assert_eq!(m.predict_logits(&x).unwrap().matrix().row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_weights() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
        let m = Model::Linear(LinearSoftmaxModel::new(w, vec![0.0, 0.0]).unwrap());
        let x = Matrix::from_rows(&[vec![1.0, 0.0]], 2).unwrap();
        assert_eq!(m.predict_logits(&x).unwrap().matrix().row(0), &[1.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = Model::linear_zero(2, 3).unwrap();
        let x = Matrix::zeros(1, 2);
        assert!(matches!(m.predict_logits(&x), Err(Error::Dimension(_))));
    }

    fn random_model(seed: u64, mlp: bool) -> Model {
        let mut r = RngStream::new(seed, 0).rng();
        let mut m = if mlp {
            Model::mlp_init(3, 4, 5, Activation::Tanh, RngStream::new(seed, 1)).unwrap()
        } else {
            Model::linear_zero(3, 4).unwrap()
        };
        let p: Vec<f64> = (0..m.param_count()).map(|_| r.random_range(-1.0..1.0)).collect();
        m.set_params(&p).unwrap();
        m
    }

    #[test]
    fn random_model_rows_on_simplex() {
        for mlp in [false, true] {
            let m = random_model(7, mlp);
            let x = Matrix::from_rows(&[vec![0.3, -1.0, 2.0, 0.1], vec![5.0, 5.0, -5.0, 0.0]], 4).unwrap();
            let p = m.predict_logits(&x).unwrap().softmax();
            for r in p.matrix().iter_rows() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < SIMPLEX_TOL);
            }
        }
    }

    /// Central differences against the analytic parameter gradient.
    fn check_gradients(loss: &LossSpec, mlp: bool) {
        let mut worst: f64 = 0.0;
        for trial in 0..25u64 {
            let m = random_model(100 + trial, mlp);
            let mut r = RngStream::new(trial, 9).rng();
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let y = (trial % 3) as usize;
            let mut grad = vec![0.0; m.param_count()];
            m.loss_and_accumulate(&x, y, loss, &mut grad, false).unwrap();
            let p0 = m.params();
            let h = 1e-5;
            for k in 0..p0.len() {
                let mut mp = m.clone();
                let mut pp = p0.clone();
                pp[k] += h;
                mp.set_params(&pp).unwrap();
                let mut scratch = vec![0.0; p0.len()];
                let lp = mp.loss_and_accumulate(&x, y, loss, &mut scratch, false).unwrap();
                pp[k] -= 2.0 * h;
                mp.set_params(&pp).unwrap();
                let lm = mp.loss_and_accumulate(&x, y, loss, &mut scratch, false).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(grad[k].abs()).max(1e-6);
                worst = worst.max((fd - grad[k]).abs() / denom);
            }
        }
        assert!(worst < 1e-5, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let prior = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
        for mlp in [false, true] {
            check_gradients(&LossSpec::PlainCe, mlp);
            check_gradients(&LossSpec::logit_adjusted(prior.clone(), 1.3).unwrap(), mlp);
        }
    }

    #[test]
    fn bias_shift() {
        let m = LinearSoftmaxModel::zeros(2, 2).unwrap();
        let s = m.with_bias_shift(&[0.5, -0.5]).unwrap();
        assert_eq!(s.biases(), &[0.5, -0.5]);
        assert!(normalize_to_simplex(&[1.0, 1.0]).is_ok());
    }
}
