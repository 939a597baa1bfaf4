//! Flag and config-file arguments.
//!
//! Every subcommand's parameters live in one struct that clap fills from
//! flags and serde fills from the config file. Both are serialized to JSON
//! objects and merged, flags winning, before the final typed parse; unknown
//! config keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "amplify-acct", version, about = "Rényi-DP accounting for model splitting and balanced iteration subsampling")]
pub struct Cli {
    /// JSON object keyed by command name; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// (ε, δ) guarantee of a mechanism applied `count` times.
    Epsilon(EpsilonArgs),
    /// RDP curves of one or more mechanisms as CSV or JSON.
    Curve(CurveArgs),
    /// Smallest noise σ meeting an (ε, δ) target.
    Calibrate(CalibrateArgs),
    /// Numerical checks of the mixture bounds and identities.
    Verify(VerifyArgs),
    /// Run the training simulator and report its guarantee.
    Simulate(SimulateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Epsilon(_) => "epsilon",
            Command::Curve(_) => "curve",
            Command::Calibrate(_) => "calibrate",
            Command::Verify(_) => "verify",
            Command::Simulate(_) => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MechKind {
    Gaussian,
    Poisson,
    ModelSplit,
    MixtureSplit,
    Dropout,
    PartialSplit,
    Bis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    Tight,
    Loose,
}

/// Mechanism parameters shared by `epsilon` and `calibrate`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonArgs {
    #[arg(long, value_enum)]
    pub mech: Option<MechKind>,
    /// Clipping norm (the split-part norm for partial-split).
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Sampling rate of the poisson mechanism.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of submodels.
    #[arg(long)]
    pub d: Option<u64>,
    /// BIS iterations.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub t: Option<u64>,
    /// BIS participations per sample.
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub c_nonsplit: Option<f64>,
    /// Poisson data subsampling on top of the mechanism.
    #[arg(long)]
    pub poisson: Option<f64>,
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<BoundMode>,
    /// Largest Rényi order of the grid 2..=max.
    #[arg(long)]
    pub max_order: Option<u32>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub mech: Option<MechKind>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub d: Option<u64>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub t: Option<u64>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub c_nonsplit: Option<f64>,
    #[arg(long)]
    pub poisson: Option<f64>,
    #[arg(long)]
    pub count: Option<u64>,
    /// Target ε.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<BoundMode>,
    #[arg(long)]
    pub max_order: Option<u32>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// Each mechanism flag takes `key=value` pairs, e.g. `--bis T=10,k=4`.
/// Pairs `c`, `sigma` and `count` default to the shared flags.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveArgs {
    #[arg(long)]
    pub gaussian: Vec<String>,
    /// `gamma=..`
    #[arg(long)]
    pub poisson: Vec<String>,
    /// `d=..`
    #[arg(long)]
    pub model_split: Vec<String>,
    /// `d=..`
    #[arg(long)]
    pub mixture_split: Vec<String>,
    #[arg(long)]
    pub dropout: Vec<String>,
    /// `d=..,c_nonsplit=..`
    #[arg(long)]
    pub partial_split: Vec<String>,
    /// `T=..,k=..`
    #[arg(long)]
    pub bis: Vec<String>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<BoundMode>,
    #[arg(long)]
    pub max_order: Option<u32>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyArgs {
    /// `d=..,k=..,c=..,sigma=..`; replaces the default sweep.
    #[arg(long)]
    pub family: Vec<String>,
    /// Orders to check; defaults to 2, 3 and 5.
    #[arg(long)]
    pub alpha: Vec<u32>,
    /// Overrides the clipping norm of every swept family.
    #[arg(long)]
    pub c: Option<f64>,
    /// Monte-Carlo samples per estimate.
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    Plain,
    ModelSplit,
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SimSchedule {
    All,
    Bis,
    Poisson,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: Option<SimMode>,
    /// Number of submodels for model-split.
    #[arg(long)]
    pub d: Option<usize>,
    /// Iterations.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub t: Option<u32>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub schedule: Option<SimSchedule>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Dropout rate; only 0.5 is accepted.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Training samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Parameter dimension of the linear task.
    #[arg(long)]
    pub m: Option<usize>,
    /// Trailing parameters shared by all submodels (model-split).
    #[arg(long)]
    pub nonsplit: Option<usize>,
    /// Re-partition blocks every iteration.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub per_iteration: Option<bool>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

fn is_unset(v: &Value) -> bool {
    v.is_null() || v.as_array().is_some_and(|a| a.is_empty())
}

/// Overlays the set flags on the command's config-file section.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let root: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Value::Object(root) = root else {
        bail!("config file must be a JSON object keyed by command name");
    };
    let known = ["epsilon", "curve", "calibrate", "verify", "simulate"];
    if let Some(bad) = root.keys().find(|k| !known.contains(&k.as_str())) {
        bail!("unknown command section `{bad}` in config file");
    }
    let mut merged = match root.get(command) {
        Some(Value::Object(section)) => section.clone(),
        Some(_) => bail!("config section `{command}` must be an object"),
        None => serde_json::Map::new(),
    };
    if let Value::Object(set) = serde_json::to_value(flags)? {
        for (k, v) in set {
            if !is_unset(&v) {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).with_context(|| format!("invalid `{command}` configuration"))
}

/// Parses `key=value,key=value`.
pub fn parse_pairs(spec: &str) -> Result<Vec<(String, String)>> {
    spec.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .with_context(|| format!("expected key=value, got `{p}`"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}
