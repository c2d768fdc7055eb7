//! Experiment configuration: a TOML file merged with command-line flags.
//! Flags win. Every field is optional at this level; each command checks
//! for what it needs.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{usage, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
pub enum ModelKind {
    #[serde(rename = "pf-gmm")]
    #[value(name = "pf-gmm")]
    PfGmm,
    #[serde(rename = "pf-hmm")]
    #[value(name = "pf-hmm")]
    PfHmm,
    #[serde(rename = "sup-gmm")]
    #[value(name = "sup-gmm")]
    SupGmm,
    #[serde(rename = "sup-hmm")]
    #[value(name = "sup-hmm")]
    SupHmm,
    #[serde(rename = "2step-gmm")]
    #[value(name = "2step-gmm")]
    TwoStepGmm,
    #[serde(rename = "2step-hmm")]
    #[value(name = "2step-hmm")]
    TwoStepHmm,
    #[serde(rename = "logreg")]
    #[value(name = "logreg")]
    LogReg,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PfGmm => "pf-gmm",
            ModelKind::PfHmm => "pf-hmm",
            ModelKind::SupGmm => "sup-gmm",
            ModelKind::SupHmm => "sup-hmm",
            ModelKind::TwoStepGmm => "2step-gmm",
            ModelKind::TwoStepHmm => "2step-hmm",
            ModelKind::LogReg => "logreg",
        }
    }

    /// Kinds that take a switch prior `p`.
    pub fn uses_p(self) -> bool {
        matches!(self, ModelKind::PfGmm | ModelKind::PfHmm)
    }

    pub fn uses_k(self) -> bool {
        self != ModelKind::LogReg
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, ModelKind::PfHmm | ModelKind::SupHmm | ModelKind::TwoStepHmm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Five dims, one relevant, binary label.
    Analysis,
    /// Two independent mixture blocks, the first carrying the label.
    GmmSweep,
    /// Two independent Markov chains, the first carrying the label.
    HmmSweep,
}

/// Everything a run can be configured with. Lists in flags are comma separated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Synthetic generator.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
    /// Rows, or sequences for hmm-sweep.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Sequence length (hmm-sweep).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    /// Noise-cluster separation (analysis; default 6).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Number of relevant dims (gmm-sweep, hmm-sweep).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_rel: Option<usize>,
    /// Total dims (gmm-sweep; default 100).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// True components per block (gmm-sweep; default 10).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_true: Option<usize>,
    /// Train fraction of simulated data (default 0.7).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<f64>,

    /// Training CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Test CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Model file written by `fit`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Ground-truth sidecar written by `simulate`, for switch recovery.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,

    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ModelKind>,
    /// Component budget.
    #[arg(long = "k")]
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Switch prior.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Grid of switch priors.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_grid: Option<Vec<f64>>,
    /// Use the default p grid.
    #[arg(long, conflicts_with = "p_grid")]
    #[serde(skip)]
    pub default_p_grid: bool,
    /// EM restarts (default 5).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    /// EM iteration cap (default 500).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    /// Logistic-regression l2 penalty.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,

    /// Sweep: model kinds.
    #[arg(long, value_enum, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kinds: Option<Vec<ModelKind>>,
    /// Sweep: component budgets.
    #[arg(long, value_delimiter = ',')]
    #[serde(rename = "K_grid", skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<usize>>,
    /// Sweep: seeds.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Sweep: pick p per cell on a validation split instead of one cell per grid value.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tune_p: Option<bool>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    /// `self` with every field set in `flags` replaced.
    pub fn merged(mut self, flags: &ExperimentConfig) -> Self {
        overlay!(
            self, flags, seed, generator, n, t, mu, d_rel, d, k_true, split, train, test, model, truth, kind, k, p,
            p_grid, restarts, max_iters, l2, kinds, k_grid, seeds, tune_p
        );
        if flags.default_p_grid {
            self.p_grid = Some(pfmix::tune::DEFAULT_P_GRID.to_vec());
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn split(&self) -> CliResult<f64> {
        let s = self.split.unwrap_or(0.7);
        if !(s > 0.0 && s < 1.0) {
            return Err(usage(format!("split fraction {s} not in (0, 1)")));
        }
        Ok(s)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
        value.as_ref().ok_or_else(|| usage(format!("missing --{flag}")))
    }
}

/// Nonempty grid check shared by fit and sweep.
pub fn check_nonempty<T>(grid: &[T], name: &str) -> CliResult<()> {
    if grid.is_empty() {
        return Err(usage(format!("{name} is empty")));
    }
    Ok(())
}
