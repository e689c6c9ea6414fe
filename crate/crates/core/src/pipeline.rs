//! End-to-end experiment flows built from the library pieces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjust::{adjust_logits, AdjustMethod, AdjustmentSpec};
use crate::dataset::{
    empirical_prior, make_shifted_counts, sample_dataset, GaussianMixtureSpec, LabeledDataset, ShiftSpec,
};
use crate::error::{Error, Result};
use crate::eval::{balanced_accuracy, confusion_matrix, per_class_accuracy, top1_accuracy};
use crate::logits::LogitDump;
use crate::model::{stage2_retrain, train, LinearSoftmaxModel, LossSpec, Model, Schedule, StageTwoMode, TrainConfig};
use crate::numerics::{purpose, ProbVector, RngStream};
use crate::oracle::{bayes_classify, boundary_offset};
use crate::prior::{
    average_estimates, default_alpha_grid, effective_prior_train, pmbar_from_train, pmbar_from_val, sweep_alpha,
    AlphaSweep, EffectivePrior, EstimatorKind,
};
use crate::scores::LogitMatrix;

/// Splits `samples` over classes with weights `IF^(−i/(C−1))`; the head class absorbs rounding.
pub fn spread_counts(samples: usize, imbalance: f64, classes: usize) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::Profile(format!("need at least 2 classes, got {classes}")));
    }
    if !(imbalance >= 1.0 && imbalance.is_finite()) {
        return Err(Error::Profile(format!("imbalance factor {imbalance} must be >= 1")));
    }
    let w: Vec<f64> = (0..classes)
        .map(|i| imbalance.powf(-(i as f64) / (classes - 1) as f64))
        .collect();
    let total: f64 = w.iter().sum();
    let mut counts: Vec<usize> = w
        .iter()
        .map(|x| (samples as f64 * x / total).round_ties_even() as usize)
        .collect();
    let rest: usize = counts[1..].iter().sum();
    if rest >= samples {
        return Err(Error::Profile("too few samples for this profile".into()));
    }
    counts[0] = samples - rest;
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Profile(format!("class {i} would have zero samples")));
    }
    Ok(counts)
}

pub fn balanced_accuracy_of(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    balanced_accuracy(&per_class_accuracy(&confusion_matrix(pred, truth, classes)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub mixture: GaussianMixtureSpec,
    pub samples: usize,
    pub imbalance: f64,
    pub test_per_class: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub iterations: usize,
    pub batch_size: usize,
    pub alpha: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            mixture: GaussianMixtureSpec::toy(),
            samples: 10_000,
            imbalance: 100.0,
            test_per_class: 5000,
            learning_rate: 0.1,
            schedule: Schedule::Constant,
            iterations: 2000,
            batch_size: 64,
            alpha: 1.0,
        }
    }
}

impl ToyConfig {
    pub fn train_counts(&self) -> Result<Vec<usize>> {
        spread_counts(self.samples, self.imbalance, self.mixture.num_classes())
    }

    fn train_config(&self, seed: RngStream) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            schedule: self.schedule,
            iterations: self.iterations,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// One value per post-hoc variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variants {
    pub ce: f64,
    pub class_frequency: f64,
    pub p2p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrial {
    pub trial: u64,
    pub train_counts: Vec<usize>,
    pub frequency_prior: ProbVector,
    pub effective_prior: ProbVector,
    pub balanced_accuracy: Variants,
    pub bayes_balanced_accuracy: f64,
    /// Signed offsets to the Bayes boundary; two-class mixtures only.
    pub boundary_offset: Option<Variants>,
    pub achieved_prior_l1: Variants,
    #[serde(skip)]
    pub models: Option<[LinearSoftmaxModel; 3]>,
}

impl ToyTrial {
    /// Head-class effective prior above its frequency and tail-class below.
    pub fn head_bias_exceeds_frequency(&self) -> bool {
        let c = self.frequency_prior.len();
        self.effective_prior[0] > self.frequency_prior[0] && self.effective_prior[c - 1] < self.frequency_prior[c - 1]
    }
}

fn l1_to(p: &ProbVector, q: &ProbVector) -> f64 {
    p.as_slice().iter().zip(q.as_slice()).map(|(a, b)| (a - b).abs()).sum()
}

/// Data, CE training and the three post-hoc variants for one trial.
pub fn run_toy_trial(cfg: &ToyConfig, master_seed: u64, trial: u64) -> Result<ToyTrial> {
    let st = RngStream::new(master_seed, trial);
    let gmm = &cfg.mixture;
    let c = gmm.num_classes();
    let counts = cfg.train_counts()?;
    let train_ds = sample_dataset(gmm, &counts, st.derive(purpose::TRAIN_DATA))?;
    let test_ds = sample_dataset(gmm, &vec![cfg.test_per_class; c], st.derive(purpose::TEST_DATA))?;

    let init = Model::linear_zero(c, gmm.dims())?;
    let ce = train(&init, &train_ds, &LossSpec::PlainCe, &cfg.train_config(st.derive(purpose::STAGE1)))?.model;

    let uniform = ProbVector::uniform(c)?;
    let eff = effective_prior_train(&ce.predict_logits(train_ds.features())?.softmax())?;
    let freq = EffectivePrior::from_counts(&counts)?;
    let cf_spec = AdjustmentSpec::new(AdjustMethod::ClassFrequency, freq.clone(), uniform.clone(), cfg.alpha)?;
    let p2p_spec = AdjustmentSpec::new(AdjustMethod::P2pCe, eff.clone(), uniform.clone(), cfg.alpha)?;

    let lin = ce.as_linear().expect("toy model is linear").clone();
    let cf_model = lin.with_bias_shift(&cf_spec.log_shift())?;
    let p2p_model = lin.with_bias_shift(&p2p_spec.log_shift())?;

    let test_logits = ce.predict_logits(test_ds.features())?;
    let variants = [
        test_logits.clone(),
        adjust_logits(&test_logits, &cf_spec)?,
        adjust_logits(&test_logits, &p2p_spec)?,
    ];
    let mut acc = [0.0; 3];
    let mut l1 = [0.0; 3];
    for (i, l) in variants.iter().enumerate() {
        acc[i] = balanced_accuracy_of(&l.predictions(), test_ds.labels(), c)?;
        l1[i] = l1_to(&crate::adjust::achieved_prior(&l.softmax())?, &uniform);
    }
    let bayes_pred = bayes_classify(gmm, &uniform, test_ds.features())?;
    let bayes_acc = balanced_accuracy_of(&bayes_pred, test_ds.labels(), c)?;

    let v = |a: [f64; 3]| Variants { ce: a[0], class_frequency: a[1], p2p: a[2] };
    let (offsets, models) = if c == 2 {
        let mut off = [0.0; 3];
        for (i, m) in [&lin, &cf_model, &p2p_model].into_iter().enumerate() {
            off[i] = boundary_offset(&Model::Linear(m.clone()), gmm, &uniform)?;
        }
        (Some(v(off)), Some([lin, cf_model, p2p_model]))
    } else {
        (None, None)
    };
    Ok(ToyTrial {
        trial,
        train_counts: counts,
        frequency_prior: freq.probs,
        effective_prior: eff.probs,
        balanced_accuracy: v(acc),
        bayes_balanced_accuracy: bayes_acc,
        boundary_offset: offsets,
        achieved_prior_l1: v(l1),
        models,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; absent for a single value.
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub ce: Stat,
    pub class_frequency: Stat,
    pub p2p: Stat,
}

impl VariantStats {
    fn collect(trials: &[ToyTrial], f: impl Fn(&ToyTrial) -> Variants) -> Self {
        let vs: Vec<Variants> = trials.iter().map(f).collect();
        Self {
            ce: Stat::of(&vs.iter().map(|v| v.ce).collect::<Vec<_>>()),
            class_frequency: Stat::of(&vs.iter().map(|v| v.class_frequency).collect::<Vec<_>>()),
            p2p: Stat::of(&vs.iter().map(|v| v.p2p).collect::<Vec<_>>()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub trials: usize,
    pub balanced_accuracy: VariantStats,
    pub abs_boundary_offset: Option<VariantStats>,
    pub achieved_prior_l1: VariantStats,
    pub bayes_balanced_accuracy: Stat,
    /// `ce < class-frequency <= p2p` on mean balanced accuracy.
    pub accuracy_ordering_holds: bool,
    /// `p2p < class-frequency < ce` on mean absolute boundary offset.
    pub offset_ordering_holds: bool,
    /// Trials whose effective prior over-weights the head and under-weights the tail relative to frequency.
    pub head_bias_trials: usize,
}

pub fn summarize(trials: &[ToyTrial]) -> Result<ToySummary> {
    if trials.is_empty() {
        return Err(Error::Config("no trials to summarize".into()));
    }
    let acc = VariantStats::collect(trials, |t| t.balanced_accuracy);
    let off = trials.iter().all(|t| t.boundary_offset.is_some()).then(|| {
        VariantStats::collect(trials, |t| {
            let o = t.boundary_offset.expect("checked above");
            Variants { ce: o.ce.abs(), class_frequency: o.class_frequency.abs(), p2p: o.p2p.abs() }
        })
    });
    let accuracy_ordering_holds = acc.ce.mean < acc.class_frequency.mean && acc.class_frequency.mean <= acc.p2p.mean;
    let offset_ordering_holds = off
        .as_ref()
        .is_some_and(|o| o.p2p.mean < o.class_frequency.mean && o.class_frequency.mean < o.ce.mean);
    Ok(ToySummary {
        trials: trials.len(),
        bayes_balanced_accuracy: Stat::of(&trials.iter().map(|t| t.bayes_balanced_accuracy).collect::<Vec<_>>()),
        achieved_prior_l1: VariantStats::collect(trials, |t| t.achieved_prior_l1),
        balanced_accuracy: acc,
        abs_boundary_offset: off,
        accuracy_ordering_holds,
        offset_ordering_holds,
        head_bias_trials: trials.iter().filter(|t| t.head_bias_exceeds_frequency()).count(),
    })
}

/// Runs `trials` independent trials, one stream per trial index, on `workers`
/// threads (all available when `None`). Results are in trial order.
pub fn run_toy_experiment(cfg: &ToyConfig, master_seed: u64, trials: usize, workers: Option<usize>) -> Result<Vec<ToyTrial>> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let job = || {
        (0..trials as u64)
            .into_par_iter()
            .map(|t| run_toy_trial(cfg, master_seed, t))
            .collect::<Result<Vec<_>>>()
    };
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStageConfig {
    pub toy: ToyConfig,
    pub mode: StageTwoMode,
    pub stage2_iterations: usize,
    pub stage2_learning_rate: f64,
    pub loss_alpha: f64,
    pub val_per_class: usize,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self {
            toy: ToyConfig::default(),
            mode: StageTwoMode::Ft,
            stage2_iterations: 2000,
            stage2_learning_rate: 0.5,
            loss_alpha: 1.0,
            val_per_class: 1000,
        }
    }
}

/// A stage-2 model with its data.
#[derive(Debug, Clone)]
pub struct TwoStageRun {
    pub stage1: Model,
    pub stage2: Model,
    /// Loss the second stage was trained with.
    pub loss: LossSpec,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn run_two_stage(cfg: &TwoStageConfig, st: RngStream) -> Result<TwoStageRun> {
    let gmm = &cfg.toy.mixture;
    let c = gmm.num_classes();
    let counts = cfg.toy.train_counts()?;
    let train_ds = sample_dataset(gmm, &counts, st.derive(purpose::TRAIN_DATA))?;
    let val = sample_dataset(gmm, &vec![cfg.val_per_class; c], st.derive(purpose::VAL_DATA))?;
    let test = sample_dataset(gmm, &vec![cfg.toy.test_per_class; c], st.derive(purpose::TEST_DATA))?;
    let init = Model::linear_zero(c, gmm.dims())?;
    let stage1 = train(&init, &train_ds, &LossSpec::PlainCe, &cfg.toy.train_config(st.derive(purpose::STAGE1)))?.model;
    let s2cfg = TrainConfig {
        learning_rate: cfg.stage2_learning_rate,
        schedule: cfg.toy.schedule,
        iterations: cfg.stage2_iterations,
        batch_size: cfg.toy.batch_size,
        seed: st.derive(purpose::STAGE2),
    };
    let prior = empirical_prior(&counts)?;
    let stage2 = stage2_retrain(&stage1, &train_ds, cfg.mode, &s2cfg, &prior, cfg.loss_alpha)?.model;
    let loss = LossSpec::logit_adjusted(prior, cfg.loss_alpha)?;
    Ok(TwoStageRun { stage1, stage2, loss, train: train_ds, val, test })
}

/// The three residual-prior estimates of a stage-2 model for target `target`:
/// held-out inference posteriors, reweighted training-time posteriors, and their mean.
pub fn residual_priors(run: &TwoStageRun, target: &ProbVector) -> Result<[EffectivePrior; 3]> {
    let val = pmbar_from_val(&run.stage2.predict_logits(run.val.features())?.softmax())?;
    let train_prior = empirical_prior(run.train.counts())?;
    let train_time = run.loss.training_logits(&run.stage2.predict_logits(run.train.features())?)?;
    let tr = pmbar_from_train(&train_time.softmax(), target, &train_prior)?;
    let avg = average_estimates(&val, &tr)?;
    Ok([val, tr, avg])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationTrial {
    pub unadjusted: f64,
    pub val_side: f64,
    pub train_reweighted: f64,
    pub averaged: f64,
}

/// Test balanced accuracy of the stage-2 model under each residual-prior estimate.
pub fn run_estimator_ablation(cfg: &TwoStageConfig, st: RngStream) -> Result<AblationTrial> {
    let run = run_two_stage(cfg, st)?;
    let c = run.test.num_classes();
    let uniform = ProbVector::uniform(c)?;
    let logits = run.stage2.predict_logits(run.test.features())?;
    let score = |l: &LogitMatrix| balanced_accuracy_of(&l.predictions(), run.test.labels(), c);
    let [v, t, a] = residual_priors(&run, &uniform)?;
    let adj = |p: EffectivePrior| -> Result<f64> {
        score(&adjust_logits(&logits, &AdjustmentSpec::new(AdjustMethod::P2pLa, p, uniform.clone(), cfg.toy.alpha)?)?)
    };
    Ok(AblationTrial { unadjusted: score(&logits)?, val_side: adj(v)?, train_reweighted: adj(t)?, averaged: adj(a)? })
}

/// Adjustment method matching the kind of prior estimate.
pub fn method_for(kind: EstimatorKind) -> AdjustMethod {
    match kind {
        EstimatorKind::Frequency => AdjustMethod::ClassFrequency,
        EstimatorKind::TrainSide => AdjustMethod::P2pCe,
        _ => AdjustMethod::P2pLa,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub shift: ShiftSpec,
    pub test_counts: Vec<usize>,
    pub unadjusted: f64,
    pub p2p: f64,
}

/// Top-1 accuracy on resampled test sets, with and without correction towards each shifted prior.
/// Every shift draws from the same stream, so the uniform shift reproduces the balanced test set.
pub fn shift_eval(
    model: &Model,
    estimated: &EffectivePrior,
    gmm: &GaussianMixtureSpec,
    test_per_class: usize,
    shifts: &[ShiftSpec],
    st: RngStream,
) -> Result<Vec<ShiftRow>> {
    let c = gmm.num_classes();
    let base = vec![test_per_class; c];
    let method = method_for(estimated.estimator);
    shifts
        .iter()
        .map(|shift| {
            let counts = make_shifted_counts(&base, shift)?;
            let ds = sample_dataset(gmm, &counts, st.derive(purpose::TEST_DATA))?;
            let logits = model.predict_logits(ds.features())?;
            let spec = AdjustmentSpec::from_prior(method, estimated.clone(), shift.target_prior(c)?)?;
            Ok(ShiftRow {
                shift: *shift,
                unadjusted: top1_accuracy(&logits.predictions(), ds.labels())?,
                p2p: top1_accuracy(&adjust_logits(&logits, &spec)?.predictions(), ds.labels())?,
                test_counts: counts,
            })
        })
        .collect()
}

/// Shift evaluation of a fresh stage-2 model with its averaged residual prior.
pub fn run_shift_trial(cfg: &TwoStageConfig, shifts: &[ShiftSpec], st: RngStream) -> Result<Vec<ShiftRow>> {
    let run = run_two_stage(cfg, st)?;
    let uniform = ProbVector::uniform(run.test.num_classes())?;
    let [_, _, avg] = residual_priors(&run, &uniform)?;
    let avg = avg.with_alpha(cfg.toy.alpha)?;
    shift_eval(&run.stage2, &avg, &cfg.toy.mixture, cfg.toy.test_per_class, shifts, st)
}

/// Deterministic held-out split: `(val, rest)` index sets, each ascending.
pub fn split_indices(n: usize, val_frac: f64, st: RngStream) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(Error::Config(format!("val fraction {val_frac} must lie in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::Dimension("need at least 2 rows to split".into()));
    }
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut st.rng());
    let k = ((n as f64 * val_frac).round() as usize).clamp(1, n - 1);
    let mut val = idx[..k].to_vec();
    let mut rest = idx[k..].to_vec();
    val.sort_unstable();
    rest.sort_unstable();
    Ok((val, rest))
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub prior: EffectivePrior,
    pub spec: AdjustmentSpec,
    pub sweep: AlphaSweep,
    pub val_rows: Vec<usize>,
    pub eval_rows: Vec<usize>,
    pub before: f64,
    pub after: f64,
    /// Corrected scores of the evaluation rows.
    pub adjusted: LogitDump,
}

/// Residual-prior correction of externally produced logits.
///
/// The prior is estimated on a held-out split of `dump`; when a training-side
/// dump and its class counts are given, the reweighted training estimate is
/// averaged in. α is tuned on the held-out split and the rest is corrected.
pub fn ingest_logits(
    dump: &LogitDump,
    train: Option<(&LogitDump, &[usize])>,
    val_frac: f64,
    target: &ProbVector,
    grid: &[f64],
    st: RngStream,
) -> Result<IngestOutcome> {
    let c = dump.num_classes();
    if target.len() != c {
        return Err(Error::Dimension(format!("target prior has {} classes, dump {c}", target.len())));
    }
    let (val_rows, eval_rows) = split_indices(dump.len(), val_frac, st.derive(purpose::SPLIT))?;
    let val = dump.select_rows(&val_rows);
    let rest = dump.select_rows(&eval_rows);
    let mut prior = pmbar_from_val(&val.logits.softmax())?;
    if let Some((tdump, counts)) = train {
        if tdump.num_classes() != c || counts.len() != c {
            return Err(Error::Dimension(format!(
                "dump has {c} classes, training dump {} and counts {}",
                tdump.num_classes(),
                counts.len()
            )));
        }
        let tr = pmbar_from_train(&tdump.logits.softmax(), target, &empirical_prior(counts)?)?;
        prior = average_estimates(&prior, &tr)?;
    }
    let sweep = sweep_alpha(&val.logits, &val.labels, AdjustMethod::P2pLa, &prior, target, grid)?;
    let prior = prior.with_alpha(sweep.best)?;
    let spec = AdjustmentSpec::from_prior(AdjustMethod::P2pLa, prior.clone(), target.clone())?;
    let adjusted = rest.with_logits(adjust_logits(&rest.logits, &spec)?)?;
    Ok(IngestOutcome {
        before: top1_accuracy(&rest.logits.predictions(), &rest.labels)?,
        after: top1_accuracy(&adjusted.logits.predictions(), &adjusted.labels)?,
        prior,
        spec,
        sweep,
        val_rows,
        eval_rows,
        adjusted,
    })
}

/// Default α grid exposed for callers that do not configure one.
pub fn alpha_grid_or_default(grid: Option<&[f64]>) -> Vec<f64> {
    grid.map(<[f64]>::to_vec).unwrap_or_else(default_alpha_grid)
}
