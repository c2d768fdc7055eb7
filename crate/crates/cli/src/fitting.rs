use std::time::Instant;

use pfmix::baselines::{
    fit_2step, fit_2step_hmm, fit_logreg, fit_sup_gmm, fit_sup_hmm, DEFAULT_L2, DEFAULT_LOGREG_ITERS,
};
use pfmix::eval::FittedModel;
use pfmix::tune::{tune_p_gmm, tune_p_hmm};
use pfmix::{gmm, hmm, EmConfig, FitResult, SequenceDataset};
use serde::Serialize;

use crate::config::{check_nonempty, ExperimentConfig, ModelKind};
use crate::csv_io::{read_table, Table};
use crate::error::{data, usage, CliResult};
use crate::model_file::ModelFile;
use crate::run_dir::{to_json, RunDir};

/// How a pf model gets its switch prior.
#[derive(Debug, Clone, PartialEq)]
pub enum PChoice {
    Fixed(f64),
    Tune(Vec<f64>),
    /// Kinds without a switch prior.
    NotUsed,
}

impl PChoice {
    /// Read `p` / `p_grid` from the config for `kind`.
    pub fn for_fit(kind: ModelKind, cfg: &ExperimentConfig) -> CliResult<Self> {
        if !kind.uses_p() {
            return Ok(PChoice::NotUsed);
        }
        match (cfg.p, &cfg.p_grid) {
            (Some(p), None) => Ok(PChoice::Fixed(p)),
            (None, Some(grid)) => {
                check_nonempty(grid, "p grid")?;
                Ok(PChoice::Tune(grid.clone()))
            }
            (None, None) => Err(usage(format!(
                "{kind} needs a switch prior: pass --p <value>, --p-grid <list> or --default-p-grid"
            ))),
            (Some(_), Some(_)) => Err(usage("pass either --p or --p-grid, not both")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub p: f64,
    pub validation_auroc: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: FittedModel,
    /// Prior used (chosen, when tuned).
    pub p: Option<f64>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub restart: Option<usize>,
    pub curve: Option<Vec<CurvePoint>>,
}

impl FitOutcome {
    fn from_fit<P>(model: FittedModel, p: Option<f64>, fit: FitResult<P>) -> Self {
        FitOutcome {
            model,
            p,
            elbo_trace: fit.elbo_trace,
            converged: fit.converged,
            iterations: fit.iterations,
            restart: Some(fit.restart),
            curve: None,
        }
    }

    fn with_curve(mut self, curve: Vec<(f64, f64)>) -> Self {
        self.curve = Some(
            curve
                .into_iter()
                .map(|(p, validation_auroc)| CurvePoint { p, validation_auroc })
                .collect(),
        );
        self
    }
}

/// Model-fitting knobs besides the data.
#[derive(Debug, Clone)]
pub struct FitSpec {
    pub kind: ModelKind,
    pub k: Option<usize>,
    pub p: PChoice,
    pub seed: u64,
    pub restarts: Option<usize>,
    pub max_iters: Option<usize>,
    pub l2: Option<f64>,
}

impl FitSpec {
    fn em_config(&self, p: f64) -> CliResult<EmConfig> {
        let k = *ExperimentConfig::require(&self.k, "k")?;
        let mut cfg = EmConfig::new(k, p, self.seed);
        cfg.n_restarts = self.restarts.unwrap_or(cfg.n_restarts);
        cfg.max_iters = self.max_iters.unwrap_or(cfg.max_iters);
        Ok(cfg)
    }
}

fn sequences(kind: ModelKind, table: &Table) -> CliResult<&SequenceDataset> {
    match table {
        Table::Sequences(s) => Ok(s),
        Table::Flat(_) => Err(data(format!("{kind} needs sequence data (seq_id,t columns)"))),
    }
}

pub fn fit_model(spec: &FitSpec, train: &Table) -> CliResult<FitOutcome> {
    let kind = spec.kind;
    let mixture = |f: &FitResult<pfmix::GmmParams>| FittedModel::Mixture {
        params: f.params.clone(),
        phi: f.phi.clone(),
    };
    let chain = |f: &FitResult<pfmix::HmmParams>| FittedModel::Chain {
        params: f.params.clone(),
        phi: f.phi.clone(),
    };
    Ok(match (kind, &spec.p) {
        (ModelKind::PfGmm, PChoice::Fixed(p)) => {
            let f = gmm::fit(&train.flat(), &spec.em_config(*p)?)?;
            FitOutcome::from_fit(mixture(&f), Some(*p), f)
        }
        (ModelKind::PfGmm, PChoice::Tune(grid)) => {
            let t = tune_p_gmm(&train.flat(), grid, &spec.em_config(1.0)?)?;
            FitOutcome::from_fit(mixture(&t.fit), Some(t.p), t.fit).with_curve(t.curve)
        }
        (ModelKind::PfHmm, PChoice::Fixed(p)) => {
            let f = hmm::hmm_fit(sequences(kind, train)?, &spec.em_config(*p)?)?;
            FitOutcome::from_fit(chain(&f), Some(*p), f)
        }
        (ModelKind::PfHmm, PChoice::Tune(grid)) => {
            let t = tune_p_hmm(sequences(kind, train)?, grid, &spec.em_config(1.0)?)?;
            FitOutcome::from_fit(chain(&t.fit), Some(t.p), t.fit).with_curve(t.curve)
        }
        (ModelKind::PfGmm | ModelKind::PfHmm, PChoice::NotUsed) => {
            return Err(usage(format!("{kind} needs a switch prior")));
        }
        (ModelKind::SupGmm, _) => {
            let f = fit_sup_gmm(&train.flat(), &spec.em_config(1.0)?)?;
            FitOutcome::from_fit(mixture(&f), None, f)
        }
        (ModelKind::SupHmm, _) => {
            let f = fit_sup_hmm(sequences(kind, train)?, &spec.em_config(1.0)?)?;
            FitOutcome::from_fit(chain(&f), None, f)
        }
        (ModelKind::TwoStepGmm, _) => {
            let (m, f) = fit_2step(&train.flat(), &spec.em_config(1.0)?)?;
            FitOutcome::from_fit(FittedModel::TwoStepMixture(m), None, f)
        }
        (ModelKind::TwoStepHmm, _) => {
            let (m, f) = fit_2step_hmm(sequences(kind, train)?, &spec.em_config(1.0)?)?;
            FitOutcome::from_fit(FittedModel::TwoStepChain(m), None, f)
        }
        (ModelKind::LogReg, _) => {
            let d = train.flat();
            let iters = spec.max_iters.unwrap_or(DEFAULT_LOGREG_ITERS);
            let m = fit_logreg(d.x(), d.labels()?, d.n_classes(), spec.l2.unwrap_or(DEFAULT_L2), iters)?;
            FitOutcome {
                model: FittedModel::LogReg(m),
                p: None,
                elbo_trace: Vec::new(),
                converged: true,
                iterations: 0,
                restart: None,
                curve: None,
            }
        }
    })
}

#[derive(Serialize)]
struct FitReport<'a> {
    kind: ModelKind,
    seed: u64,
    p: Option<f64>,
    #[serde(rename = "K")]
    k: Option<usize>,
    elbo_trace: &'a [f64],
    converged: bool,
    iterations: usize,
    restart: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tuning_curve: Option<&'a [CurvePoint]>,
    wall_time_secs: f64,
    model_sha256: String,
    config_digest: String,
    library_version: &'a str,
}

pub fn cmd_fit(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let kind = *ExperimentConfig::require(&cfg.kind, "kind")?;
    let spec = FitSpec {
        kind,
        k: if kind.uses_k() {
            Some(*ExperimentConfig::require(&cfg.k, "k")?)
        } else {
            None
        },
        p: PChoice::for_fit(kind, cfg)?,
        seed: cfg.seed(),
        restarts: cfg.restarts,
        max_iters: cfg.max_iters,
        l2: cfg.l2,
    };
    let train = read_table(ExperimentConfig::require(&cfg.train, "train")?)?;
    let start = Instant::now();
    let outcome = fit_model(&spec, &train)?;
    let wall = start.elapsed().as_secs_f64();

    let file = ModelFile::new(kind, spec.seed, outcome.p, spec.k, outcome.model.clone());
    let model_json = file.to_json();
    run.write("model.json", model_json.as_bytes())?;
    let report = FitReport {
        kind,
        seed: spec.seed,
        p: outcome.p,
        k: spec.k,
        elbo_trace: &outcome.elbo_trace,
        converged: outcome.converged,
        iterations: outcome.iterations,
        restart: outcome.restart,
        tuning_curve: outcome.curve.as_deref(),
        wall_time_secs: wall,
        model_sha256: crate::run_dir::sha256_hex(model_json.as_bytes()),
        config_digest: cfg.digest(),
        library_version: pfmix::VERSION,
    };
    run.write("report.json", to_json(&report).as_bytes())
}
