use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LossSpec, Model};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::{ProbVector, RngStream};

/// Mean epoch loss above this aborts training.
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: RngStream,
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Config(format!(
                "batch size {} must lie in 1..={n}",
                self.batch_size
            )));
        }
        Ok(())
    }

    fn rate_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let t = step as f64 / self.iterations.max(1) as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTwoMode {
    /// Re-initialize and train the classifier head only.
    Cl,
    /// Train every parameter, starting from the stage-1 weights.
    Ft,
}

impl std::str::FromStr for StageTwoMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cl" => Ok(Self::Cl),
            "ft" => Ok(Self::Ft),
            other => Err(Error::Usage(format!("unknown stage-2 mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean per-sample loss of each epoch; a trailing partial epoch is included.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch SGD with per-epoch reshuffling.
pub fn train(
    init: &Model,
    ds: &LabeledDataset,
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run_sgd(init, ds, loss, cfg, false)
}

fn check_epoch(mean: f64, epoch: usize) -> Result<()> {
    if !mean.is_finite() || mean > DIVERGENCE_LIMIT {
        return Err(Error::Divergence(format!(
            "mean loss {mean} in epoch {epoch}; lower the learning rate"
        )));
    }
    Ok(())
}

fn run_sgd(
    init: &Model,
    ds: &LabeledDataset,
    loss: &LossSpec,
    cfg: &TrainConfig,
    head_only: bool,
) -> Result<TrainOutcome> {
    if ds.dims() != init.dims() || ds.num_classes() != init.num_classes() {
        return Err(Error::Dimension(format!(
            "model is {} classes x {} features, data is {} x {}",
            init.num_classes(),
            init.dims(),
            ds.num_classes(),
            ds.dims()
        )));
    }
    if cfg.iterations == 0 {
        return Ok(TrainOutcome { model: init.clone(), loss_trace: Vec::new() });
    }
    cfg.validate(ds.len())?;

    let mut model = init.clone();
    let mut params = model.params();
    let start = if head_only { model.head_offset() } else { 0 };
    let mut grad = vec![0.0; params.len()];
    let mut rng = cfg.seed.rng();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;
    let mut epoch_loss = 0.0;
    let mut epoch_seen = 0usize;
    let mut trace = Vec::new();
    let bs = cfg.batch_size;

    for step in 0..cfg.iterations {
        if pos + bs > order.len() {
            let mean = epoch_loss / epoch_seen as f64;
            check_epoch(mean, trace.len())?;
            trace.push(mean);
            order.shuffle(&mut rng);
            pos = 0;
            epoch_loss = 0.0;
            epoch_seen = 0;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut batch_loss = 0.0;
        for &i in &order[pos..pos + bs] {
            batch_loss += model.loss_and_accumulate(
                ds.features().row(i),
                ds.labels()[i],
                loss,
                &mut grad,
                head_only,
            )?;
        }
        if !batch_loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite batch loss at step {step}")));
        }
        pos += bs;
        epoch_loss += batch_loss;
        epoch_seen += bs;
        let eta = cfg.rate_at(step) / bs as f64;
        for (p, g) in params[start..].iter_mut().zip(&grad[start..]) {
            *p -= eta * g;
        }
        model.set_params(&params).map_err(|_| {
            Error::Divergence(format!("parameters became non-finite at step {step}"))
        })?;
    }
    if epoch_seen > 0 {
        let mean = epoch_loss / epoch_seen as f64;
        check_epoch(mean, trace.len())?;
        trace.push(mean);
    }
    Ok(TrainOutcome { model, loss_trace: trace })
}

/// Second training stage under the logit-adjusted loss.
///
/// `Cl` resets the head to zero and freezes everything else, so the hidden
/// layer of an MLP is bit-identical afterwards. A linear model has no body;
/// `Cl` then retrains the whole (re-initialized) model. `Ft` continues from
/// the stage-1 parameters and updates all of them.
pub fn stage2_retrain(
    stage1: &Model,
    ds: &LabeledDataset,
    mode: StageTwoMode,
    cfg: &TrainConfig,
    prior: &ProbVector,
    alpha: f64,
) -> Result<TrainOutcome> {
    let loss = LossSpec::logit_adjusted(prior.clone(), alpha)?;
    match mode {
        StageTwoMode::Cl => {
            if matches!(stage1, Model::Linear(_)) {
                log::warn!("classifier retraining on a linear model retrains the whole model");
            }
            let mut init = stage1.clone();
            init.reset_head();
            run_sgd(&init, ds, &loss, cfg, true)
        }
        StageTwoMode::Ft => run_sgd(stage1, ds, &loss, cfg, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{empirical_prior, sample_dataset, ClassComponent, GaussianMixtureSpec};
    use crate::model::Activation;

    fn cfg(iterations: usize, batch_size: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            schedule: Schedule::Constant,
            iterations,
            batch_size,
            seed: RngStream::new(17, 0),
        }
    }

    fn toy_data(counts: &[usize]) -> LabeledDataset {
        sample_dataset(&GaussianMixtureSpec::toy(), counts, RngStream::new(1, 1)).unwrap()
    }

    #[test]
    fn zero_iterations_is_identity() {
        let ds = toy_data(&[50, 10]);
        let m = Model::mlp_init(2, 2, 3, Activation::Relu, RngStream::new(1, 2)).unwrap();
        let out = train(&m, &ds, &LossSpec::PlainCe, &cfg(0, 8, 0.1)).unwrap();
        assert_eq!(out.model, m);
        assert!(out.loss_trace.is_empty());
        let prior = empirical_prior(ds.counts()).unwrap();
        let ft = stage2_retrain(&m, &ds, StageTwoMode::Ft, &cfg(0, 8, 0.1), &prior, 1.0).unwrap();
        assert_eq!(ft.model, m);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = toy_data(&[200, 20]);
        let m = Model::linear_zero(2, 2).unwrap();
        let a = train(&m, &ds, &LossSpec::PlainCe, &cfg(300, 16, 0.1)).unwrap();
        let b = train(&m, &ds, &LossSpec::PlainCe, &cfg(300, 16, 0.1)).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn separable_problem_is_learned() {
        let g = GaussianMixtureSpec::new(
            2,
            vec![
                ClassComponent { mean: vec![-3.0, 0.0], sigma: 0.5 },
                ClassComponent { mean: vec![3.0, 0.0], sigma: 0.5 },
            ],
        )
        .unwrap();
        let ds = sample_dataset(&g, &[500, 500], RngStream::new(4, 0)).unwrap();
        let out = train(&Model::linear_zero(2, 2).unwrap(), &ds, &LossSpec::PlainCe, &cfg(2000, 32, 0.1)).unwrap();
        let pred = out.model.predict_logits(ds.features()).unwrap().predictions();
        let acc = pred.iter().zip(ds.labels()).filter(|(a, b)| a == b).count() as f64 / ds.len() as f64;
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn full_batch_trace_is_monotone() {
        let ds = toy_data(&[300, 100]);
        let n = ds.len();
        let out = train(&Model::linear_zero(2, 2).unwrap(), &ds, &LossSpec::PlainCe, &cfg(200, n, 0.5)).unwrap();
        assert_eq!(out.loss_trace.len(), 200);
        for w in out.loss_trace[10..].windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn minibatch_trace_upticks_are_small() {
        let ds = toy_data(&[300, 100]);
        let out = train(&Model::linear_zero(2, 2).unwrap(), &ds, &LossSpec::PlainCe, &cfg(2000, 40, 0.2)).unwrap();
        for w in out.loss_trace[10..].windows(2) {
            assert!(w[1] <= w[0] * 1.01, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let g = GaussianMixtureSpec::toy().scaled(1e3).unwrap();
        let ds = sample_dataset(&g, &[50, 50], RngStream::new(2, 0)).unwrap();
        let err = train(&Model::linear_zero(2, 2).unwrap(), &ds, &LossSpec::PlainCe, &cfg(200, 10, 1e6)).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }

    #[test]
    fn config_validation() {
        let ds = toy_data(&[5, 5]);
        let m = Model::linear_zero(2, 2).unwrap();
        assert!(matches!(train(&m, &ds, &LossSpec::PlainCe, &cfg(5, 11, 0.1)), Err(Error::Config(_))));
        assert!(matches!(train(&m, &ds, &LossSpec::PlainCe, &cfg(5, 2, -1.0)), Err(Error::Config(_))));
    }

    #[test]
    fn classifier_retraining_freezes_body() {
        let ds = toy_data(&[400, 40]);
        let m = Model::mlp_init(2, 2, 6, Activation::Relu, RngStream::new(3, 3)).unwrap();
        let s1 = train(&m, &ds, &LossSpec::PlainCe, &cfg(300, 32, 0.1)).unwrap().model;
        let prior = empirical_prior(ds.counts()).unwrap();
        let s2 = stage2_retrain(&s1, &ds, StageTwoMode::Cl, &cfg(300, 32, 0.1), &prior, 1.0).unwrap().model;
        let (Model::Mlp(a), Model::Mlp(b)) = (&s1, &s2) else { panic!("mlp expected") };
        assert_eq!(a.hidden_weights(), b.hidden_weights());
        assert_eq!(a.hidden_biases(), b.hidden_biases());
        assert_ne!(a.head(), b.head());
        let ft = stage2_retrain(&s1, &ds, StageTwoMode::Ft, &cfg(300, 32, 0.1), &prior, 1.0).unwrap().model;
        let Model::Mlp(c) = &ft else { panic!() };
        assert_ne!(a.hidden_weights(), c.hidden_weights());
    }
}
