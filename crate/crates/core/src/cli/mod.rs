//! Command-line front end. Every subcommand merges a JSON config file with
//! its flags (flags win), runs, and leaves a manifest in its output directory.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

pub use commands::{execute, Arch, Outcome, SEEDED};

use crate::adjust::AdjustMethod;
use crate::dataset::ShiftDirection;
use crate::error::{Error, Result};
use crate::eval::ReportFormat;
use crate::manifest::{diff_outputs, load_manifest, save_manifest, sha256_bytes, FileDigest, RunManifest, MANIFEST_FILE};
use crate::model::{Activation, Schedule, StageTwoMode};
use crate::prior::EstimatorKind;

pub const SEED_ENV: &str = "TAILCAL_SEED";

#[derive(Debug, Parser)]
#[command(name = "tailcal", version, about = "Effective-prior estimation and post-hoc correction for long-tailed classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// JSON file with option values; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory. Defaults to runs/<timestamp>-<hash>.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample long-tailed train, val and test sets from a Gaussian mixture.
    GenData(GenDataArgs),
    /// Stage-1 (plain CE) or stage-2 (logit-adjusted) training.
    Train(TrainArgs),
    /// Estimate a model's effective prior.
    EstimatePrior(EstimatePriorArgs),
    /// Apply a prior correction to logits.
    Adjust(AdjustArgs),
    /// Accuracy, group and prior-mismatch report.
    Eval(EvalArgs),
    /// Repeated two-class toy comparison of CE, class-frequency and effective-prior correction.
    ToyExperiment(ToyArgs),
    /// Accuracy under test-time label shift with and without correction.
    ShiftEval(ShiftArgs),
    /// Correct externally produced logits with a held-out prior estimate.
    IngestLogits(IngestArgs),
    /// Accuracy as a function of the correction exponent.
    SweepAlpha(SweepArgs),
    /// Re-run a recorded command and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_count: Option<usize>,
    /// Head-to-tail count ratio.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imbalance: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_per_class: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_direction: Option<ShiftDirection>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_ratio: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<u8>,
    /// Stage-1 model to continue from.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    /// cl | ft
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<StageTwoMode>,
    /// linear | mlp
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<Arch>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// relu | tanh
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// constant | cosine
    #[arg(long, value_parser = parse_schedule)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Exponent on the training prior in the stage-2 loss.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimatePriorArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Training data.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Balanced validation data.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    /// train | val | train-reweighted | averaged | frequency
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorKind>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_prior: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub many_min: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub few_max: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AdjustArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Logit dump (`id,logit_0,…,label`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<PathBuf>,
    /// none | class-frequency | p2p-ce | p2p-la
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<AdjustMethod>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_prior: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// sweep.json whose best α is used.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_from_sweep: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Training class counts, for many/medium/few groups.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub many_min: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub few_max: Option<usize>,
    /// MANY_MIN,FEW_MAX in one flag.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_prior: Option<Vec<f64>>,
    /// json,csv,table
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<ReportFormat>>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ToyArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imbalance: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ShiftArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<PathBuf>,
    /// mixture.json from gen-data; defaults to the two-class toy mixture.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    /// forward,backward (uniform is always evaluated)
    #[arg(long, alias = "direction", value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<ShiftDirection>>,
    /// Head-to-tail ratios, each >= 1.
    #[arg(long, alias = "ratio", value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Balanced evaluation-side logit dump.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump: Option<PathBuf>,
    /// Training-time logit dump; needs --counts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_dump: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<PathBuf>,
    /// Fraction of rows held out to estimate the prior and tune α.
    #[arg(long, alias = "split")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_frac: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_prior: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<AdjustMethod>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_prior: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A run directory or its manifest.json.
    pub manifest: PathBuf,
    /// Where to write the re-run. Defaults to <run dir>-replay.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_schedule(s: &str) -> std::result::Result<Schedule, String> {
    match s {
        "constant" => Ok(Schedule::Constant),
        "cosine" => Ok(Schedule::Cosine),
        other => Err(format!("unknown schedule '{other}'")),
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::EstimatePrior(_) => "estimate-prior",
            Command::Adjust(_) => "adjust",
            Command::Eval(_) => "eval",
            Command::ToyExperiment(_) => "toy-experiment",
            Command::ShiftEval(_) => "shift-eval",
            Command::IngestLogits(_) => "ingest-logits",
            Command::SweepAlpha(_) => "sweep-alpha",
            Command::Replay(_) => "replay",
        }
    }

    fn flags(&self) -> Result<(Value, &Common)> {
        fn v<'a, T: Serialize>(a: &T, c: &'a Common) -> Result<(Value, &'a Common)> {
            Ok((serde_json::to_value(a)?, c))
        }
        match self {
            Command::GenData(a) => v(a, &a.common),
            Command::Train(a) => v(a, &a.common),
            Command::EstimatePrior(a) => v(a, &a.common),
            Command::Adjust(a) => v(a, &a.common),
            Command::Eval(a) => v(a, &a.common),
            Command::ToyExperiment(a) => v(a, &a.common),
            Command::ShiftEval(a) => v(a, &a.common),
            Command::IngestLogits(a) => v(a, &a.common),
            Command::SweepAlpha(a) => v(a, &a.common),
            Command::Replay(_) => unreachable!("replay carries no config"),
        }
    }
}

fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}='{s}' is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Config file overlaid with flags; seeded commands get flag > file > environment > 0.
pub fn merge_config(command: &str, file: Option<&Path>, flags: Value) -> Result<Value> {
    let mut merged = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            match serde_json::from_str::<Value>(&text)? {
                Value::Object(m) => m,
                _ => return Err(Error::Config(format!("{} must hold a JSON object", p.display()))),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(f) = flags {
        merged.extend(f);
    }
    if SEEDED.contains(&command) && !merged.contains_key("seed") {
        merged.insert("seed".into(), Value::from(env_seed()?));
    }
    Ok(Value::Object(merged))
}

fn default_out_dir(command: &str, config: &Value) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let hash = sha256_bytes(format!("{command}\n{config}").as_bytes());
    PathBuf::from("runs").join(format!("{stamp}-{}", &hash[..12]))
}

fn run_recorded(command: &str, config: Value, out: Option<PathBuf>) -> Result<(RunManifest, PathBuf, Outcome)> {
    let dir = out.unwrap_or_else(|| default_out_dir(command, &config));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let started = chrono::Local::now().to_rfc3339();
    let clock = Instant::now();
    let (resolved, outcome) = execute(command, config, &dir)?;
    let wall = clock.elapsed().as_secs_f64();
    let inputs = outcome
        .inputs
        .iter()
        .map(|p| FileDigest::of(p, p.display().to_string()))
        .collect::<Result<Vec<_>>>()?;
    let outputs = outcome
        .outputs
        .iter()
        .map(|name| FileDigest::of(&dir.join(name), name.clone()))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: resolved.get("seed").and_then(Value::as_u64),
        config: resolved,
        cwd: std::env::current_dir().map_err(|e| Error::io(".", e))?,
        inputs,
        outputs,
        started,
        wall_clock_secs: wall,
    };
    save_manifest(&manifest, &dir)?;
    Ok((manifest, dir, outcome))
}

fn replay(args: &ReplayArgs) -> Result<String> {
    let mpath = if args.manifest.is_dir() { args.manifest.join(MANIFEST_FILE) } else { args.manifest.clone() };
    let recorded = load_manifest(&mpath)?;
    let run_dir = std::path::absolute(mpath.parent().unwrap_or(Path::new(".")))
        .map_err(|e| Error::io(&mpath, e))?;
    let out = match &args.out {
        Some(o) => std::path::absolute(o).map_err(|e| Error::io(o, e))?,
        None => {
            let mut name = run_dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push("-replay");
            run_dir.with_file_name(name)
        }
    };
    std::env::set_current_dir(&recorded.cwd).map_err(|e| Error::io(&recorded.cwd, e))?;
    let mut problems = Vec::new();
    for i in &recorded.inputs {
        match crate::manifest::sha256_file(Path::new(&i.path)) {
            Ok(d) if d == i.sha256 => {}
            Ok(_) => problems.push(format!("input {} changed", i.path)),
            Err(_) => problems.push(format!("input {} unreadable", i.path)),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Mismatch(problems.join("; ")));
    }
    let (fresh, _, _) = run_recorded(&recorded.command, recorded.config.clone(), Some(out.clone()))?;
    let bad = diff_outputs(&recorded.outputs, &fresh.outputs);
    if !bad.is_empty() {
        return Err(Error::Mismatch(bad.join("; ")));
    }
    Ok(format!(
        "replayed {} into {}: {} outputs identical\n",
        recorded.command,
        out.display(),
        fresh.outputs.len()
    ))
}

/// Parses `args` and runs the command, printing its report to stdout.
pub fn run(cli: Cli) -> Result<()> {
    if let Command::Replay(a) = &cli.command {
        print!("{}", replay(a)?);
        return Ok(());
    }
    let name = cli.command.name();
    let (flags, common) = cli.command.flags()?;
    let config = merge_config(name, common.config.as_deref(), flags)?;
    let (_, dir, outcome) = run_recorded(name, config, common.out.clone())?;
    print!("{}", outcome.stdout);
    println!("outputs in {}", dir.display());
    Ok(())
}

/// Full entry point: parse, run, map errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_seed_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"trials": 3, "imbalance": 10.0, "seed": 7}"#).unwrap();
        let flags = serde_json::json!({"trials": 5});
        let m = merge_config("toy-experiment", Some(&p), flags).unwrap();
        assert_eq!(m["trials"], 5);
        assert_eq!(m["imbalance"], 10.0);
        assert_eq!(m["seed"], 7);
        let m = merge_config("adjust", None, serde_json::json!({})).unwrap();
        assert!(m.get("seed").is_none());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = execute("toy-experiment", serde_json::json!({"trails": 3}), dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn absent_flags_are_not_serialized() {
        let cli = Cli::try_parse_from(["tailcal", "toy-experiment", "--trials", "2"]).unwrap();
        let (v, _) = cli.command.flags().unwrap();
        assert_eq!(v, serde_json::json!({"trials": 2}));
    }

    #[test]
    fn stage_two_without_init_is_usage() {
        let dir = tempfile::tempdir().unwrap();
        let e = execute("train", serde_json::json!({"data": "x.csv", "stage": 2}), dir.path()).unwrap_err();
        assert!(matches!(e, Error::Usage(_)));
    }
}
