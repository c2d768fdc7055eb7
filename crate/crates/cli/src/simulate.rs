use pfmix::data::split_indices;
use pfmix::datagen::{gen_analysis_dataset, gen_gmm_sweep, gen_hmm_sweep, GmmSweepSpec, HmmSweepSpec};
use pfmix::GroundTruth;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Generator};
use crate::csv_io::{write_table_to, Table};
use crate::error::{usage, CliError, CliResult};
use crate::run_dir::{to_json, RunDir};

/// Sidecar describing how a simulated dataset was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub generator: Generator,
    pub seed: u64,
    pub spec: serde_json::Value,
    pub ground_truth: GroundTruth,
    /// Row (or sequence) indices into the full draw.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl Truth {
    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| crate::error::data(format!("{}: {e}", path.display())))
    }
}

pub struct Simulated {
    pub train: Table,
    pub test: Table,
    pub truth: Truth,
}

/// Draw the configured dataset with `seed` and split it.
pub fn generate(cfg: &ExperimentConfig, seed: u64) -> CliResult<Simulated> {
    let generator = *ExperimentConfig::require(&cfg.generator, "generator")?;
    let n = *ExperimentConfig::require(&cfg.n, "n")?;
    let split = cfg.split()?;
    let (full, ground_truth, spec) = match generator {
        Generator::Analysis => {
            let mu = cfg.mu.unwrap_or(6.0);
            let (d, gt) = gen_analysis_dataset(n, mu, seed)?;
            (Table::Flat(d), gt, serde_json::json!({ "n": n, "mu": mu }))
        }
        Generator::GmmSweep => {
            let mut spec = GmmSweepSpec::new(*ExperimentConfig::require(&cfg.d_rel, "d-rel")?, seed);
            spec.d = cfg.d.unwrap_or(spec.d);
            spec.k_true = cfg.k_true.unwrap_or(spec.k_true);
            let (d, gt) = gen_gmm_sweep(&spec, n)?;
            let mut json = serde_json::to_value(&spec).expect("spec serializes");
            json["n"] = n.into();
            (Table::Flat(d), gt, json)
        }
        Generator::HmmSweep => {
            if cfg.d.is_some() || cfg.k_true.is_some() {
                return Err(usage("hmm-sweep has fixed d and k_true"));
            }
            let t = *ExperimentConfig::require(&cfg.t, "t")?;
            let spec = HmmSweepSpec::new(*ExperimentConfig::require(&cfg.d_rel, "d-rel")?, seed);
            let (d, gt) = gen_hmm_sweep(&spec, n, t)?;
            let mut json = serde_json::to_value(&spec).expect("spec serializes");
            json["n_seqs"] = n.into();
            json["t"] = t.into();
            (Table::Sequences(d), gt, json)
        }
    };
    if n < 2 {
        return Err(usage("need n >= 2 to split into train and test"));
    }
    let (train_indices, test_indices) = split_indices(n, split, seed)?;
    let (train, test) = match &full {
        Table::Flat(d) => (Table::Flat(d.subset(&train_indices)), Table::Flat(d.subset(&test_indices))),
        Table::Sequences(s) => (
            Table::Sequences(s.subset(&train_indices)),
            Table::Sequences(s.subset(&test_indices)),
        ),
    };
    Ok(Simulated {
        train,
        test,
        truth: Truth {
            generator,
            seed,
            spec,
            ground_truth,
            train_indices,
            test_indices,
        },
    })
}

fn csv_bytes(table: &Table) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    write_table_to(&mut out, table)?;
    Ok(out)
}

pub fn cmd_simulate(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let sim = generate(cfg, cfg.seed())?;
    run.write("train.csv", &csv_bytes(&sim.train)?)?;
    run.write("test.csv", &csv_bytes(&sim.test)?)?;
    run.write("truth.json", to_json(&sim.truth).as_bytes())
}
