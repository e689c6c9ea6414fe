use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjust::{adjust_logits, AdjustMethod, AdjustmentSpec};
use crate::dataset::{
    load_counts, load_dataset, make_longtail_counts, make_shifted_counts, sample_dataset, save_counts, save_dataset,
    write_atomic, GaussianMixtureSpec, LabeledDataset, LongTailProfile, ProfileShape, ShiftDirection, ShiftSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    emit_report, evaluate, export_boundary_2d, export_prior_bars, BoundarySeries, GroupThresholds, ReportFormat,
    ReportProvenance,
};
use crate::logits::{load_logit_dump, save_logit_dump, LogitDump};
use crate::model::{
    load_model, save_model, stage2_retrain, train, Activation, LossSpec, Model, Provenance, SavedModel, Schedule,
    StageTwoMode, TrainConfig,
};
use crate::numerics::{purpose, ProbVector, RngStream};
use crate::pipeline::{
    alpha_grid_or_default, ingest_logits, method_for, run_toy_experiment, shift_eval, summarize, Stat, ToyConfig,
};
use crate::prior::{
    average_estimates, effective_prior_train, load_prior, pmbar_from_train, pmbar_from_val, save_prior, sweep_alpha,
    AlphaSweep, EffectivePrior, EstimatorKind,
};

/// Files a command read and wrote, plus text for stdout.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    pub stdout: String,
}

struct Out<'a> {
    dir: &'a Path,
    outcome: Outcome,
}

impl<'a> Out<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, outcome: Outcome::default() }
    }

    fn file(&mut self, name: &str) -> PathBuf {
        self.outcome.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn input(&mut self, p: &Path) {
        self.outcome.inputs.push(p.to_path_buf());
    }

    fn say(&mut self, line: impl AsRef<str>) {
        self.outcome.stdout.push_str(line.as_ref());
        self.outcome.stdout.push('\n');
    }
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Usage(format!("missing required --{flag}")))
}

fn target_or_uniform(t: &Option<Vec<f64>>, classes: usize) -> Result<ProbVector> {
    match t {
        Some(v) => {
            let p = ProbVector::new(v.clone())?;
            if p.len() != classes {
                return Err(Error::Dimension(format!("target prior has {} classes, expected {classes}", p.len())));
            }
            Ok(p)
        }
        None => {
            log::info!("no target prior given; using uniform over {classes} classes");
            ProbVector::uniform(classes)
        }
    }
}

fn load_saved(out: &mut Out, p: &Path) -> Result<SavedModel> {
    out.input(p);
    load_model(p)
}

fn load_data(out: &mut Out, p: &Path, classes: Option<usize>) -> Result<LabeledDataset> {
    out.input(p);
    load_dataset(p, classes)
}

/// Scores either from a logit dump or from a model applied to a dataset.
fn load_scores(
    out: &mut Out,
    logits: &Option<PathBuf>,
    model: &Option<PathBuf>,
    data: &Option<PathBuf>,
) -> Result<(LogitDump, Option<SavedModel>)> {
    match (logits, model) {
        (Some(_), Some(_)) => Err(Error::Usage("give either --logits or --model, not both".into())),
        (Some(l), None) => {
            out.input(l);
            Ok((load_logit_dump(l)?, None))
        }
        (None, Some(m)) => {
            let saved = load_saved(out, m)?;
            let ds = load_data(out, need(data, "data")?, Some(saved.model.num_classes()))?;
            let l = saved.model.predict_logits(ds.features())?;
            Ok((LogitDump::with_row_ids(l, ds.labels().to_vec())?, Some(saved)))
        }
        (None, None) => Err(Error::Usage("need --logits or --model with --data".into())),
    }
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub mixture: Option<GaussianMixtureSpec>,
    pub classes: usize,
    pub max_count: usize,
    pub imbalance: f64,
    pub shape: ProfileShape,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub shift_direction: ShiftDirection,
    pub shift_ratio: f64,
    pub seed: u64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            mixture: None,
            classes: 2,
            max_count: 9901,
            imbalance: 100.0,
            shape: ProfileShape::Exponential,
            val_per_class: 1000,
            test_per_class: 5000,
            shift_direction: ShiftDirection::Uniform,
            shift_ratio: 1.0,
            seed: 0,
        }
    }
}

fn gen_data(cfg: &GenDataConfig, dir: &Path) -> Result<Outcome> {
    let counts = make_longtail_counts(&LongTailProfile {
        num_classes: cfg.classes,
        max_count: cfg.max_count,
        imbalance_factor: cfg.imbalance,
        shape: cfg.shape.clone(),
    })?;
    let gmm = match &cfg.mixture {
        Some(m) if m.num_classes() != cfg.classes => {
            return Err(Error::Config(format!(
                "mixture has {} classes but classes = {}",
                m.num_classes(),
                cfg.classes
            )))
        }
        Some(m) => m.clone(),
        None if cfg.classes == 2 => GaussianMixtureSpec::toy(),
        None => GaussianMixtureSpec::ring(cfg.classes, 2.0, 1.0)?,
    };
    let shift = ShiftSpec::new(cfg.shift_direction, cfg.shift_ratio)?;
    let val_counts = make_shifted_counts(&vec![cfg.val_per_class; cfg.classes], &shift)?;
    let test_counts = make_shifted_counts(&vec![cfg.test_per_class; cfg.classes], &shift)?;
    let st = RngStream::new(cfg.seed, 0);
    let mut out = Out::new(dir);
    for (name, c, p) in [
        ("train.csv", &counts, purpose::TRAIN_DATA),
        ("val.csv", &val_counts, purpose::VAL_DATA),
        ("test.csv", &test_counts, purpose::TEST_DATA),
    ] {
        let ds = sample_dataset(&gmm, c, st.derive(p))?;
        save_dataset(&ds, out.file(name))?;
    }
    save_counts(&counts, out.file("counts.json"))?;
    write_atomic(&out.file("mixture.json"), serde_json::to_string_pretty(&gmm)?.as_bytes())?;
    out.say(format!("{:>6} {:>8} {:>8} {:>8}", "class", "train", "val", "test"));
    for k in 0..cfg.classes {
        out.say(format!("{k:>6} {:>8} {:>8} {:>8}", counts[k], val_counts[k], test_counts[k]));
    }
    Ok(out.outcome)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Linear,
    Mlp,
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::Usage(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub data: Option<PathBuf>,
    pub stage: u8,
    pub init: Option<PathBuf>,
    pub mode: StageTwoMode,
    pub arch: Arch,
    pub hidden: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub iterations: usize,
    pub batch_size: usize,
    pub loss_alpha: f64,
    pub seed: u64,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            data: None,
            stage: 1,
            init: None,
            mode: StageTwoMode::Ft,
            arch: Arch::Linear,
            hidden: 16,
            activation: Activation::Relu,
            learning_rate: 0.1,
            schedule: Schedule::Constant,
            iterations: 2000,
            batch_size: 64,
            loss_alpha: 1.0,
            seed: 0,
        }
    }
}

fn train_cmd(cfg: &TrainCmdConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Out::new(dir);
    let data = need(&cfg.data, "data")?;
    let st = RngStream::new(cfg.seed, 0);
    let (outcome, provenance) = match cfg.stage {
        1 => {
            let ds = load_data(&mut out, data, None)?;
            let init = match cfg.arch {
                Arch::Linear => Model::linear_zero(ds.num_classes(), ds.dims())?,
                Arch::Mlp => {
                    Model::mlp_init(ds.num_classes(), ds.dims(), cfg.hidden, cfg.activation, st.derive(purpose::INIT))?
                }
            };
            let tc = TrainConfig {
                learning_rate: cfg.learning_rate,
                schedule: cfg.schedule,
                iterations: cfg.iterations,
                batch_size: cfg.batch_size,
                seed: st.derive(purpose::STAGE1),
            };
            (train(&init, &ds, &LossSpec::PlainCe, &tc)?, Provenance::stage1(tc.seed))
        }
        2 => {
            let init = cfg
                .init
                .as_ref()
                .ok_or_else(|| Error::Usage("a stage-2 run needs --init <stage-1 model>".into()))?;
            let s1 = load_saved(&mut out, init)?;
            let ds = load_data(&mut out, data, Some(s1.model.num_classes()))?;
            let prior = crate::dataset::empirical_prior(ds.counts())?;
            let tc = TrainConfig {
                learning_rate: cfg.learning_rate,
                schedule: cfg.schedule,
                iterations: cfg.iterations,
                batch_size: cfg.batch_size,
                seed: st.derive(purpose::STAGE2),
            };
            let o = stage2_retrain(&s1.model, &ds, cfg.mode, &tc, &prior, cfg.loss_alpha)?;
            (o, Provenance::stage2(cfg.mode, prior, cfg.loss_alpha, tc.seed))
        }
        s => return Err(Error::Config(format!("stage must be 1 or 2, got {s}"))),
    };
    save_model(&SavedModel { model: outcome.model, provenance }, out.file("model.json"))?;
    let mut trace = String::from("epoch,loss\n");
    for (i, l) in outcome.loss_trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{l:?}");
    }
    write_atomic(&out.file("loss_trace.csv"), trace.as_bytes())?;
    if let Some(l) = outcome.loss_trace.last() {
        out.say(format!("final epoch loss {l:.6}"));
    }
    Ok(out.outcome)
}

// ---------------------------------------------------------------- estimate-prior

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatePriorConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub estimator: EstimatorKind,
    pub target_prior: Option<Vec<f64>>,
    pub alpha: f64,
    pub many_min: usize,
    pub few_max: usize,
}

impl Default for EstimatePriorConfig {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            val: None,
            estimator: EstimatorKind::TrainSide,
            target_prior: None,
            alpha: 1.0,
            many_min: 100,
            few_max: 20,
        }
    }
}

fn estimate_prior(cfg: &EstimatePriorConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Out::new(dir);
    let saved = load_saved(&mut out, need(&cfg.model, "model")?)?;
    let m = &saved.model;
    let c = m.num_classes();
    let la = saved.provenance.is_logit_adjusted();
    let need_data = matches!(
        cfg.estimator,
        EstimatorKind::TrainSide | EstimatorKind::TrainReweighted | EstimatorKind::Averaged | EstimatorKind::Frequency
    );
    let need_val = matches!(cfg.estimator, EstimatorKind::ValSide | EstimatorKind::Averaged);
    if cfg.estimator == EstimatorKind::Averaged && (cfg.data.is_none() || cfg.val.is_none()) {
        return Err(Error::Usage("the averaged estimator needs both --data and --val".into()));
    }
    if cfg.estimator == EstimatorKind::TrainSide && la {
        return Err(Error::EstimatorKind(
            "train-side estimate of a logit-adjusted model; use val, train-reweighted or averaged".into(),
        ));
    }
    let train_ds = if need_data || cfg.data.is_some() {
        Some(load_data(&mut out, need(&cfg.data, "data")?, Some(c))?)
    } else {
        None
    };
    let val_ds = if need_val { Some(load_data(&mut out, need(&cfg.val, "val")?, Some(c))?) } else { None };
    let target = target_or_uniform(&cfg.target_prior, c)?;
    let reweighted = |ds: &LabeledDataset| -> Result<EffectivePrior> {
        let loss = saved.provenance.loss()?;
        let tl = loss.training_logits(&m.predict_logits(ds.features())?)?;
        pmbar_from_train(&tl.softmax(), &target, &crate::dataset::empirical_prior(ds.counts())?)
    };
    let val_side = |ds: &LabeledDataset| pmbar_from_val(&m.predict_logits(ds.features())?.softmax());
    let est = match cfg.estimator {
        EstimatorKind::TrainSide => {
            effective_prior_train(&m.predict_logits(train_ds.as_ref().expect("loaded").features())?.softmax())?
        }
        EstimatorKind::ValSide => val_side(val_ds.as_ref().expect("loaded"))?,
        EstimatorKind::TrainReweighted => reweighted(train_ds.as_ref().expect("loaded"))?,
        EstimatorKind::Averaged => average_estimates(
            &val_side(val_ds.as_ref().expect("loaded"))?,
            &reweighted(train_ds.as_ref().expect("loaded"))?,
        )?,
        EstimatorKind::Frequency => EffectivePrior::from_counts(train_ds.as_ref().expect("loaded").counts())?,
    }
    .with_alpha(cfg.alpha)?;
    save_prior(&est, out.file("prior.json"))?;
    match &train_ds {
        Some(ds) => {
            let freq = crate::dataset::empirical_prior(ds.counts())?;
            let th = GroupThresholds::new(cfg.many_min, cfg.few_max)?;
            export_prior_bars(&freq, &est.probs, ds.counts(), &th, out.file("prior_bars.csv"))?;
            out.say(format!("{:>6} {:>14} {:>14}", "class", "frequency", est.estimator));
            for k in 0..c {
                out.say(format!("{k:>6} {:>14.6} {:>14.6}", freq[k], est.probs[k]));
            }
        }
        None => {
            out.say(format!("{:>6} {:>14}", "class", est.estimator));
            for k in 0..c {
                out.say(format!("{k:>6} {:>14.6}", est.probs[k]));
            }
        }
    }
    Ok(out.outcome)
}

// ---------------------------------------------------------------- adjust

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjustConfig {
    pub logits: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub method: Option<AdjustMethod>,
    pub target_prior: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub alpha_from_sweep: Option<PathBuf>,
}

fn adjust_cmd(cfg: &AdjustConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Out::new(dir);
    let (dump, _) = load_scores(&mut out, &cfg.logits, &cfg.model, &cfg.data)?;
    let c = dump.num_classes();
    let spec = match (&cfg.prior, cfg.method) {
        (None, None) | (None, Some(AdjustMethod::None)) => AdjustmentSpec::none(c)?,
        (None, Some(m)) => return Err(Error::Usage(format!("method {m} needs --prior"))),
        (Some(p), method) => {
            out.input(p);
            let est = load_prior(p)?;
            let method = method.unwrap_or_else(|| method_for(est.estimator));
            if method == AdjustMethod::None {
                AdjustmentSpec::none(c)?
            } else {
                let alpha = match (cfg.alpha, &cfg.alpha_from_sweep) {
                    (Some(a), _) => a,
                    (None, Some(s)) => {
                        out.input(s);
                        let text = std::fs::read_to_string(s).map_err(|e| Error::io(s, e))?;
                        serde_json::from_str::<AlphaSweep>(&text)?.best
                    }
                    (None, None) => est.alpha,
                };
                let target = target_or_uniform(&cfg.target_prior, c)?;
                AdjustmentSpec::new(method, est, target, alpha)?
            }
        }
    };
    let adjusted = dump.with_logits(adjust_logits(&dump.logits, &spec)?)?;
    save_logit_dump(&adjusted, out.file("adjusted.csv"))?;
    write_atomic(&out.file("adjustment.json"), serde_json::to_string_pretty(&spec)?.as_bytes())?;
    out.say(format!("{} rows adjusted with {} (alpha {})", adjusted.len(), spec.method(), spec.alpha()));
    Ok(out.outcome)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub logits: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub many_min: usize,
    pub few_max: usize,
    pub groups: Option<Vec<usize>>,
    pub target_prior: Option<Vec<f64>>,
    pub formats: Vec<ReportFormat>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            logits: None,
            model: None,
            data: None,
            counts: None,
            many_min: 100,
            few_max: 20,
            groups: None,
            target_prior: None,
            formats: vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Table],
        }
    }
}

fn eval_cmd(cfg: &EvalConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Out::new(dir);
    let th = match cfg.groups.as_deref() {
        None => GroupThresholds::new(cfg.many_min, cfg.few_max)?,
        Some(&[many, few]) => GroupThresholds::new(many, few)?,
        Some(g) => return Err(Error::Config(format!("groups takes MANY_MIN,FEW_MAX, got {} values", g.len()))),
    };
    let (dump, _) = load_scores(&mut out, &cfg.logits, &cfg.model, &cfg.data)?;
    let counts = match &cfg.counts {
        Some(p) => {
            out.input(p);
            Some(load_counts(p)?)
        }
        None => None,
    };
    let target = target_or_uniform(&cfg.target_prior, dump.num_classes())?;
    let provenance = ReportProvenance {
        model: cfg
            .model
            .as_ref()
            .or(cfg.logits.as_ref())
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
        adjustment: "as-given".into(),
    };
    let report = evaluate(&dump.logits, &dump.labels, counts.as_deref(), &th, &target, provenance)?;
    for f in &cfg.formats {
        emit_report(&report, *f, out.file(&format!("report.{}", f.extension())))?;
    }
    out.outcome.stdout.push_str(&report.to_table());
    Ok(out.outcome)
}

// ---------------------------------------------------------------- toy-experiment

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyExperimentConfig {
    pub trials: usize,
    pub samples: usize,
    pub imbalance: f64,
    pub test_per_class: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub workers: Option<usize>,
    pub seed: u64,
}

impl Default for ToyExperimentConfig {
    fn default() -> Self {
        let t = ToyConfig::default();
        Self {
            trials: 100,
            samples: t.samples,
            imbalance: t.imbalance,
            test_per_class: t.test_per_class,
            learning_rate: t.learning_rate,
            iterations: t.iterations,
            batch_size: t.batch_size,
            alpha: t.alpha,
            workers: None,
            seed: 0,
        }
    }
}

fn pm(s: &Stat, scale: f64, digits: usize) -> String {
    match s.std {
        Some(sd) => format!("{:.*} ± {:.*}", digits, s.mean * scale, digits, sd * scale),
        None => format!("{:.*}", digits, s.mean * scale),
    }
}

fn toy_experiment(cfg: &ToyExperimentConfig, dir: &Path) -> Result<Outcome> {
    let toy = ToyConfig {
        samples: cfg.samples,
        imbalance: cfg.imbalance,
        test_per_class: cfg.test_per_class,
        learning_rate: cfg.learning_rate,
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        alpha: cfg.alpha,
        ..ToyConfig::default()
    };
    let trials = run_toy_experiment(&toy, cfg.seed, cfg.trials, cfg.workers)?;
    let s = summarize(&trials)?;
    let mut out = Out::new(dir);
    write_atomic(&out.file("summary.json"), serde_json::to_string_pretty(&s)?.as_bytes())?;

    let mut csv = String::from(
        "trial,ce_acc,class_frequency_acc,p2p_acc,bayes_acc,ce_offset,class_frequency_offset,p2p_offset,head_effective_prior,head_frequency_prior\n",
    );
    for t in &trials {
        let o = t.boundary_offset.expect("toy mixture has two classes");
        let a = t.balanced_accuracy;
        let _ = writeln!(
            csv,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            t.trial,
            a.ce,
            a.class_frequency,
            a.p2p,
            t.bayes_balanced_accuracy,
            o.ce,
            o.class_frequency,
            o.p2p,
            t.effective_prior[0],
            t.frequency_prior[0]
        );
    }
    write_atomic(&out.file("trials.csv"), csv.as_bytes())?;

    let t0 = &trials[0];
    if let Some([ce, cf, p2p]) = &t0.models {
        let series = [
            BoundarySeries { name: "ce".into(), model: ce.clone() },
            BoundarySeries { name: "class-frequency".into(), model: cf.clone() },
            BoundarySeries { name: "p2p".into(), model: p2p.clone() },
        ];
        let uniform = ProbVector::uniform(2)?;
        export_boundary_2d(&series, &toy.mixture, &uniform, 4.0, 41, out.file("boundary_trial0.csv"))?;
    }
    export_prior_bars(
        &t0.frequency_prior,
        &t0.effective_prior,
        &t0.train_counts,
        &GroupThresholds::default(),
        out.file("prior_bars_trial0.csv"),
    )?;

    let mut table = format!("{:<16} {:>18} {:>18}\n", "variant", "balanced acc (%)", "|offset|");
    let off = s.abs_boundary_offset.as_ref();
    for (name, acc, o) in [
        ("ce", &s.balanced_accuracy.ce, off.map(|o| &o.ce)),
        ("class-frequency", &s.balanced_accuracy.class_frequency, off.map(|o| &o.class_frequency)),
        ("p2p", &s.balanced_accuracy.p2p, off.map(|o| &o.p2p)),
    ] {
        let _ = writeln!(
            table,
            "{name:<16} {:>18} {:>18}",
            pm(acc, 100.0, 2),
            o.map(|o| pm(o, 1.0, 4)).unwrap_or_else(|| "-".into())
        );
    }
    let _ = writeln!(table, "{:<16} {:>18} {:>18}", "bayes", pm(&s.bayes_balanced_accuracy, 100.0, 2), "0");
    let holds = |b: bool| if b { "holds" } else { "violated" };
    let _ = writeln!(table, "accuracy ordering ce < class-frequency <= p2p: {}", holds(s.accuracy_ordering_holds));
    let _ = writeln!(table, "offset ordering p2p < class-frequency < ce: {}", holds(s.offset_ordering_holds));
    let _ = writeln!(
        table,
        "trials with head effective prior above frequency: {}/{}",
        s.head_bias_trials, s.trials
    );
    write_atomic(&out.file("summary.txt"), table.as_bytes())?;
    out.outcome.stdout.push_str(&table);
    Ok(out.outcome)
}

// ---------------------------------------------------------------- shift-eval

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftEvalConfig {
    pub model: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub mixture: Option<PathBuf>,
    pub test_per_class: usize,
    pub directions: Vec<ShiftDirection>,
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl Default for ShiftEvalConfig {
    fn default() -> Self {
        Self {
            model: None,
            prior: None,
            mixture: None,
            test_per_class: 5000,
            directions: vec![ShiftDirection::Forward, ShiftDirection::Backward],
            ratios: vec![5.0, 10.0, 50.0],
            seed: 0,
        }
    }
}

fn shift_eval_cmd(cfg: &ShiftEvalConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Out::new(dir);
    let saved = load_saved(&mut out, need(&cfg.model, "model")?)?;
    let p = need(&cfg.prior, "prior")?;
    out.input(p);
    let est = load_prior(p)?;
    let gmm = match &cfg.mixture {
        Some(p) => {
            out.input(p);
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<GaussianMixtureSpec>(&text)?
        }
        None => GaussianMixtureSpec::toy(),
    };
    let mut shifts = vec![ShiftSpec::uniform()];
    for d in &cfg.directions {
        if *d == ShiftDirection::Uniform {
            continue;
        }
        for r in &cfg.ratios {
            shifts.push(ShiftSpec::new(*d, *r)?);
        }
    }
    let rows = shift_eval(&saved.model, &est, &gmm, cfg.test_per_class, &shifts, RngStream::new(cfg.seed, 0))?;
    let mut csv = String::from("direction,ratio,unadjusted,p2p\n");
    out.say(format!("{:<10} {:>6} {:>12} {:>8}", "direction", "ratio", "unadjusted", "p2p"));
    for r in &rows {
        let _ = writeln!(csv, "{},{:?},{:?},{:?}", r.shift.direction(), r.shift.ratio(), r.unadjusted, r.p2p);
        out.say(format!(
            "{:<10} {:>6} {:>12.2} {:>8.2}",
            r.shift.direction().to_string(),
            r.shift.ratio(),
            100.0 * r.unadjusted,
            100.0 * r.p2p
        ));
    }
    write_atomic(&out.file("shift.csv"), csv.as_bytes())?;
    Ok(out.outcome)
}

// ---------------------------------------------------------------- ingest-logits

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub dump: Option<PathBuf>,
    pub train_dump: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub val_frac: f64,
    pub target_prior: Option<Vec<f64>>,
    pub grid: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { dump: None, train_dump: None, counts: None, val_frac: 0.2, target_prior: None, grid: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSummary {
    pub val_rows: usize,
    pub eval_rows: usize,
    pub alpha: f64,
    pub estimator: EstimatorKind,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

fn sweep_csv(s: &AlphaSweep) -> String {
    let mut csv = String::from("alpha,accuracy\n");
    for (a, acc) in &s.curve {
        let _ = writeln!(csv, "{a:?},{acc:?}");
    }
    csv
}

fn ingest_cmd(cfg: &IngestConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Out::new(dir);
    let p = need(&cfg.dump, "dump")?;
    out.input(p);
    let dump = load_logit_dump(p)?;
    let train = match (&cfg.train_dump, &cfg.counts) {
        (Some(t), Some(c)) => {
            out.input(t);
            out.input(c);
            Some((load_logit_dump(t)?, load_counts(c)?))
        }
        (None, None) => None,
        _ => return Err(Error::Usage("--train-dump and --counts go together".into())),
    };
    let target = target_or_uniform(&cfg.target_prior, dump.num_classes())?;
    let grid = alpha_grid_or_default(cfg.grid.as_deref());
    let r = ingest_logits(
        &dump,
        train.as_ref().map(|(d, c)| (d, c.as_slice())),
        cfg.val_frac,
        &target,
        &grid,
        RngStream::new(cfg.seed, 0),
    )?;
    save_prior(&r.prior, out.file("prior.json"))?;
    save_logit_dump(&r.adjusted, out.file("adjusted.csv"))?;
    write_atomic(&out.file("sweep.csv"), sweep_csv(&r.sweep).as_bytes())?;
    let summary = IngestSummary {
        val_rows: r.val_rows.len(),
        eval_rows: r.eval_rows.len(),
        alpha: r.sweep.best,
        estimator: r.prior.estimator,
        before: r.before,
        after: r.after,
        delta: r.after - r.before,
    };
    write_atomic(&out.file("report.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    out.say(format!(
        "held-out rows {}, evaluated rows {}, alpha {}",
        summary.val_rows, summary.eval_rows, summary.alpha
    ));
    out.say(format!(
        "top-1 before {:.2}%, after {:.2}%, delta {:+.2} points",
        100.0 * r.before,
        100.0 * r.after,
        100.0 * summary.delta
    ));
    Ok(out.outcome)
}

// ---------------------------------------------------------------- sweep-alpha

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub logits: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub method: Option<AdjustMethod>,
    pub grid: Option<Vec<f64>>,
    pub target_prior: Option<Vec<f64>>,
}

fn sweep_cmd(cfg: &SweepConfig, dir: &Path) -> Result<Outcome> {
    let mut out = Out::new(dir);
    let (dump, _) = load_scores(&mut out, &cfg.logits, &cfg.model, &cfg.data)?;
    let p = need(&cfg.prior, "prior")?;
    out.input(p);
    let est = load_prior(p)?;
    let method = cfg.method.unwrap_or_else(|| method_for(est.estimator));
    let target = target_or_uniform(&cfg.target_prior, dump.num_classes())?;
    let grid = alpha_grid_or_default(cfg.grid.as_deref());
    let s = sweep_alpha(&dump.logits, &dump.labels, method, &est, &target, &grid)?;
    write_atomic(&out.file("sweep.csv"), sweep_csv(&s).as_bytes())?;
    write_atomic(&out.file("sweep.json"), serde_json::to_string_pretty(&s)?.as_bytes())?;
    out.say(format!("chosen alpha {}", s.best));
    Ok(out.outcome)
}

// ---------------------------------------------------------------- dispatch

/// Commands that draw random numbers and so carry a master seed.
pub const SEEDED: &[&str] = &["gen-data", "train", "toy-experiment", "shift-eval", "ingest-logits"];

/// Runs `command` with a fully merged JSON configuration, writing into `dir`.
/// Returns the resolved configuration alongside the outcome.
pub fn execute(command: &str, config: serde_json::Value, dir: &Path) -> Result<(serde_json::Value, Outcome)> {
    fn run<C: Serialize + for<'de> Deserialize<'de>>(
        config: serde_json::Value,
        dir: &Path,
        f: fn(&C, &Path) -> Result<Outcome>,
    ) -> Result<(serde_json::Value, Outcome)> {
        let cfg: C = serde_json::from_value(config).map_err(|e| Error::Config(e.to_string()))?;
        let resolved = serde_json::to_value(&cfg)?;
        Ok((resolved, f(&cfg, dir)?))
    }
    match command {
        "gen-data" => run(config, dir, gen_data),
        "train" => run(config, dir, train_cmd),
        "estimate-prior" => run(config, dir, estimate_prior),
        "adjust" => run(config, dir, adjust_cmd),
        "eval" => run(config, dir, eval_cmd),
        "toy-experiment" => run(config, dir, toy_experiment),
        "shift-eval" => run(config, dir, shift_eval_cmd),
        "ingest-logits" => run(config, dir, ingest_cmd),
        "sweep-alpha" => run(config, dir, sweep_cmd),
        other => Err(Error::Usage(format!("unknown command '{other}'"))),
    }
}
