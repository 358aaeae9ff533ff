//! Subcommand implementations behind the `pbl` binary.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pbl_core::data::{fmt_real, TrajectoryDataset};
use pbl_core::dtr::{backward_induct, DecisionRule, StagePolicySet};
use pbl_core::envs::{oracle_policy, Env, EnvKind, EnvSpec, Estimate};
use pbl_core::evaluation::{ope_importance_sampling, regret};
use pbl_core::learner::{LearnerConfig, Method};
use pbl_core::numerics::RandomSeed;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, ExperimentConfig};
use crate::experiment::{collect_report, run_experiment};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "pbl", version, about = "Pessimistic Bayesian policy learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a logged dataset (CSV plus JSON sidecar).
    GenData(GenDataArgs),
    /// Fit stage policies on a dataset and write a policy artifact.
    Fit(FitArgs),
    /// Recommend actions for logged trajectories, or write an oracle policy.
    Policy(PolicyArgs),
    /// Regret against an environment, or importance-sampling value on data.
    Evaluate(EvaluateArgs),
    /// Run a factorial experiment from a JSON config.
    Experiment(ExperimentArgs),
    /// Gather experiment summaries into one long-format CSV.
    Report(ReportArgs),
}

/// Environment selection shared by several subcommands.
#[derive(Debug, Args)]
pub struct EnvArgs {
    /// Environment kind; ignored when `--env-config` is given.
    #[arg(long, value_enum)]
    pub env: Option<KindArg>,
    /// JSON file holding a full environment spec.
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Toy,
    SingleLinear,
    SingleNonlinear,
    TwoStageLinear,
    TwoStageNonlinear,
}

impl From<KindArg> for EnvKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Toy => EnvKind::Toy,
            KindArg::SingleLinear => EnvKind::SingleLinear,
            KindArg::SingleNonlinear => EnvKind::SingleNonlinear,
            KindArg::TwoStageLinear => EnvKind::TwoStageLinear,
            KindArg::TwoStageNonlinear => EnvKind::TwoStageNonlinear,
        }
    }
}

impl EnvArgs {
    pub fn resolve(&self) -> Result<EnvSpec, CliError> {
        let mut spec = match (&self.env_config, self.env) {
            (Some(p), _) => read_json::<EnvSpec>(p)?,
            (None, Some(k)) => EnvSpec::new(k.into()),
            (None, None) => return Err(CliError::config("one of --env or --env-config is required")),
        };
        if let Some(e) = self.epsilon {
            spec.epsilon = e;
        }
        if let Some(s) = self.sigma {
            spec.noise_std = s;
        }
        spec.validate().map_err(|e| CliError::Config(e.into()))?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path; the sidecar is written next to it with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
}

/// Metadata written next to every dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSidecar {
    pub env: EnvSpec,
    pub n: usize,
    pub seed: u64,
    pub action_count: usize,
    /// Hex SHA-256 of the CSV bytes.
    pub csv_sha256: String,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn gen_data(args: &GenDataArgs) -> Result<DataSidecar, CliError> {
    let spec = args.env.resolve()?;
    if args.n == 0 {
        return Err(CliError::config("--n must be at least 1"));
    }
    let env = Env::new(spec.clone()).map_err(|e| CliError::Config(e.into()))?;
    let data = env.gen_dataset(args.n, RandomSeed(args.seed))?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    let sidecar = DataSidecar {
        env: spec,
        n: args.n,
        seed: args.seed,
        action_count: data.action_count,
        csv_sha256: sha256_hex(&csv),
    };
    write_file(&args.out, &csv)?;
    write_json(&sidecar_path(&args.out), &sidecar)?;
    Ok(sidecar)
}

/// Reads a dataset and checks it against its sidecar when one exists.
pub fn load_dataset(path: &Path) -> Result<(TrajectoryDataset, Option<DataSidecar>), CliError> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        let s: DataSidecar = read_json(&side)?;
        let digest = sha256_hex(&bytes);
        if digest != s.csv_sha256 {
            return Err(CliError::config(format!(
                "{} does not match the digest recorded in {}",
                path.display(),
                side.display()
            )));
        }
        Some(s)
    } else {
        None
    };
    let action_count = sidecar.as_ref().map_or(2, |s| s.action_count);
    let data = TrajectoryDataset::read_csv(BufReader::new(bytes.as_slice()), action_count)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok((data, sidecar))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    PblBlbm,
    PblBnn,
    Pevi,
    NonpessiBlbm,
    NonpessiBnn,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::PblBlbm => Method::PblBlbm,
            MethodArg::PblBnn => Method::PblBnn,
            MethodArg::Pevi => Method::Pevi,
            MethodArg::NonpessiBlbm => Method::NonpessiBlbm,
            MethodArg::NonpessiBnn => Method::NonpessiBnn,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV written by `gen-data` (or any file in the same layout).
    #[arg(long)]
    pub data: PathBuf,
    /// Learner config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// PEVI penalty scale.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Policy artifact path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Serialized result of `fit`, or an oracle policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerConfig>,
    pub seed: u64,
    /// Digest of the training CSV, when fitted on data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_sha256: Option<String>,
    pub policy: StagePolicySet,
}

pub fn fit(args: &FitArgs) -> Result<PolicyArtifact, CliError> {
    let mut learner = match &args.config {
        Some(p) => read_json::<LearnerConfig>(p)?,
        None => LearnerConfig::default(),
    };
    if let Some(m) = args.method {
        learner.method = m.into();
    }
    if let Some(a) = args.alpha {
        learner.alpha = a;
    }
    if let Some(c) = args.c {
        learner.pevi.c = c;
    }
    if !(learner.alpha > 0.0 && learner.alpha < 1.0) {
        return Err(CliError::config(format!("alpha must lie in (0, 1), got {}", learner.alpha)));
    }
    let (data, _) = load_dataset(&args.data)?;
    let bytes = fs::read(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let policy = backward_induct(&data, &learner, RandomSeed(args.seed))?;
    let artifact = PolicyArtifact {
        learner: Some(learner),
        seed: args.seed,
        data_sha256: Some(sha256_hex(&bytes)),
        policy,
    };
    write_json(&args.out, &artifact)?;
    Ok(artifact)
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// Policy artifact to apply.
    #[arg(long, required_unless_present = "oracle")]
    pub policy: Option<PathBuf>,
    /// Dataset whose logged histories are scored.
    #[arg(long, required_unless_present = "oracle")]
    pub data: Option<PathBuf>,
    /// Write the true optimal policy of `--env` as an artifact instead.
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub env: EnvArgs,
    /// Output CSV of recommended actions, or the oracle artifact.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn policy(args: &PolicyArgs) -> Result<(), CliError> {
    if args.oracle {
        let spec = args.env.resolve()?;
        let artifact = PolicyArtifact {
            learner: None,
            seed: 0,
            data_sha256: None,
            policy: oracle_policy(&spec)?,
        };
        return write_json(&args.out, &artifact);
    }
    let artifact: PolicyArtifact = read_json(args.policy.as_deref().expect("required by clap"))?;
    let (data, _) = load_dataset(args.data.as_deref().expect("required by clap"))?;
    if artifact.policy.horizon() != data.horizon() {
        return Err(CliError::config(format!(
            "{}-stage policy applied to {}-stage data",
            artifact.policy.horizon(),
            data.horizon()
        )));
    }
    let mut columns = Vec::new();
    for t in 0..data.horizon() {
        columns.push(artifact.policy.act_batch(t, &data.histories(t)?)?);
    }
    let header: Vec<String> = (1..=data.horizon()).map(|t| format!("action{t}")).collect();
    let mut text = header.join(",") + "\n";
    for i in 0..data.len() {
        let row: Vec<String> = columns.iter().map(|c| c[i].to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_file(&args.out, text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Regret,
    Ope,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[command(flatten)]
    pub env: EnvArgs,
    /// Dataset for `ope` mode.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub mc_states: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const EVALUATE_HEADER: &str = "mode,policy_sha256,estimate,se,count";

pub fn evaluate(args: &EvaluateArgs) -> Result<(Estimate, String), CliError> {
    let bytes = fs::read(&args.policy).with_context(|| format!("reading {}", args.policy.display()))?;
    let artifact: PolicyArtifact = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing {}", args.policy.display()))
        .map_err(CliError::Config)?;
    let est = match args.mode {
        Mode::Regret => {
            let env = Env::new(args.env.resolve()?).map_err(|e| CliError::Config(e.into()))?;
            if args.mc_states == 0 {
                return Err(CliError::config("--mc-states must be positive"));
            }
            regret(&artifact.policy, &env, args.mc_states, RandomSeed(args.seed))?
        }
        Mode::Ope => {
            let path = args
                .data
                .as_deref()
                .ok_or_else(|| CliError::config("ope mode needs --data"))?;
            let (data, _) = load_dataset(path)?;
            if data.stages.iter().any(|s| s.propensities.is_none()) {
                return Err(CliError::config(format!(
                    "{} has no behavior propensities; ope mode needs them",
                    path.display()
                )));
            }
            ope_importance_sampling(&data, &artifact.policy)?
        }
    };
    let mode = match args.mode {
        Mode::Regret => "regret",
        Mode::Ope => "ope",
    };
    let row = format!(
        "{EVALUATE_HEADER}\n{mode},{},{},{},{}\n",
        sha256_hex(&bytes),
        fmt_real(est.mean),
        fmt_real(est.se),
        est.count
    );
    match &args.out {
        Some(p) => write_file(p, row.as_bytes())?,
        None => print!("{row}"),
    }
    Ok((est, row))
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output root; overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Base seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace results of an identical earlier run.
    #[arg(long)]
    pub overwrite: bool,
}

pub fn experiment(args: &ExperimentArgs) -> Result<PathBuf, CliError> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))
        .map_err(CliError::Config)?;
    let mut config = ExperimentConfig::from_json(&text).map_err(CliError::Config)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(o) = &args.out {
        config.out = Some(o.clone());
    }
    let out = config
        .out
        .clone()
        .ok_or_else(|| CliError::config("no output directory: pass --out or set `out` in the config"))?;
    if args.workers == 0 {
        return Err(CliError::config("--workers must be at least 1"));
    }
    let result = run_experiment(&config, &out, args.workers, args.overwrite).map_err(|e| {
        if e.is::<crate::experiment::AlreadyExists>() {
            CliError::Config(e)
        } else {
            CliError::Runtime(e)
        }
    })?;
    log::info!("wrote {}", result.dir.display());
    Ok(result.dir)
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Experiment output root to scan for `summary.json` files.
    #[arg(long)]
    pub out: PathBuf,
    /// Destination CSV; stdout when absent.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

pub fn report(args: &ReportArgs) -> Result<String, CliError> {
    if !args.out.is_dir() {
        return Err(CliError::config(format!("{} is not a directory", args.out.display())));
    }
    let text = collect_report(&args.out)?;
    match &args.file {
        Some(p) => write_file(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(text)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a).map(|_| ()),
        Command::Fit(a) => fit(a).map(|_| ()),
        Command::Policy(a) => policy(a),
        Command::Evaluate(a) => evaluate(a).map(|_| ()),
        Command::Experiment(a) => experiment(a).map(|_| ()),
        Command::Report(a) => report(a).map(|_| ()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Config)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(CliError::Config)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| anyhow!(e))? + "\n";
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
