//! Cartesian sweeps: kind × K × p × seed. Cells run in the rayon pool and
//! are written in cell order once all have finished. A failing cell becomes
//! a row with `status = error`; the rest of the sweep carries on.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{check_nonempty, ExperimentConfig, ModelKind};
use crate::csv_io::{read_table, Table};
use crate::error::{usage, CliError, CliResult};
use crate::evaluate::evaluate;
use crate::fitting::{fit_model, FitSpec, PChoice};
use crate::run_dir::RunDir;
use crate::simulate::{generate, Truth};
use pfmix::eval::Provenance;

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub kind: ModelKind,
    pub k: Option<usize>,
    pub p: PChoice,
    pub seed: u64,
}

/// One results row. Empty fields are not applicable or not computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: ModelKind,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub p_tuned: bool,
    pub seed: u64,
    pub status: String,
    pub auroc: Option<f64>,
    pub heldout_log_px: Option<f64>,
    pub heldout_log_py_given_x: Option<f64>,
    pub switch_auroc: Option<f64>,
    pub final_elbo: Option<f64>,
    pub error: String,
}

struct Split {
    train: Table,
    test: Table,
    mask: Option<Vec<bool>>,
}

pub fn plan(cfg: &ExperimentConfig) -> CliResult<Vec<Cell>> {
    let kinds = match (&cfg.kinds, cfg.kind) {
        (Some(kinds), _) => kinds.clone(),
        (None, Some(kind)) => vec![kind],
        (None, None) => return Err(usage("missing --kinds")),
    };
    check_nonempty(&kinds, "kinds")?;
    let k_grid = match (&cfg.k_grid, cfg.k) {
        (Some(g), _) => g.clone(),
        (None, Some(k)) => vec![k],
        (None, None) if kinds.iter().all(|k| !k.uses_k()) => Vec::new(),
        (None, None) => return Err(usage("missing --k-grid")),
    };
    let seeds = cfg.seeds.clone().unwrap_or_else(|| vec![cfg.seed()]);
    check_nonempty(&seeds, "seeds")?;
    if kinds.iter().any(|k| k.uses_k()) {
        check_nonempty(&k_grid, "K grid")?;
    }

    let tune = cfg.tune_p.unwrap_or(false);
    let pf_choices = || -> CliResult<Vec<PChoice>> {
        if let Some(g) = &cfg.p_grid {
            check_nonempty(g, "p grid")?;
        }
        Ok(match (tune, &cfg.p_grid, cfg.p) {
            (true, grid, _) => vec![PChoice::Tune(
                grid.clone().unwrap_or_else(|| pfmix::tune::DEFAULT_P_GRID.to_vec()),
            )],
            (false, Some(grid), _) => grid.iter().map(|&p| PChoice::Fixed(p)).collect(),
            (false, None, Some(p)) => vec![PChoice::Fixed(p)],
            (false, None, None) => {
                return Err(usage("pf kinds need --p, --p-grid or --tune-p"));
            }
        })
    };

    let mut cells = Vec::new();
    for &kind in &kinds {
        let ks: Vec<Option<usize>> = if kind.uses_k() {
            k_grid.iter().map(|&k| Some(k)).collect()
        } else {
            vec![None]
        };
        let ps = if kind.uses_p() { pf_choices()? } else { vec![PChoice::NotUsed] };
        for &k in &ks {
            for p in &ps {
                for &seed in &seeds {
                    cells.push(Cell {
                        kind,
                        k,
                        p: p.clone(),
                        seed,
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn run_cell(cell: &Cell, split: &Split, cfg: &ExperimentConfig) -> SweepRow {
    let mut row = SweepRow {
        kind: cell.kind,
        k: cell.k,
        p: match cell.p {
            PChoice::Fixed(p) => Some(p),
            _ => None,
        },
        p_tuned: matches!(cell.p, PChoice::Tune(_)),
        seed: cell.seed,
        status: "ok".into(),
        auroc: None,
        heldout_log_px: None,
        heldout_log_py_given_x: None,
        switch_auroc: None,
        final_elbo: None,
        error: String::new(),
    };
    let spec = FitSpec {
        kind: cell.kind,
        k: cell.k,
        p: cell.p.clone(),
        seed: cell.seed,
        restarts: cfg.restarts,
        max_iters: cfg.max_iters,
        l2: cfg.l2,
    };
    let result = fit_model(&spec, &split.train).and_then(|fit| {
        row.p = fit.p;
        row.final_elbo = fit.elbo_trace.last().copied();
        let provenance = Provenance {
            model_id: cell.kind.name().into(),
            seed: cell.seed,
            p: fit.p,
            k: cell.k,
        };
        evaluate(&fit.model, &split.test, provenance, split.mask.as_deref())
    });
    match result {
        Ok(m) => {
            row.auroc = Some(m.auroc);
            row.heldout_log_px = m.heldout_log_px;
            row.heldout_log_py_given_x = Some(m.heldout_log_py_given_x);
            row.switch_auroc = m.switch_auroc;
        }
        Err(e) => {
            row.status = "error".into();
            row.error = e.to_string();
        }
    }
    row
}

/// Data per seed: generated with that seed, or the same files for every seed.
fn data_for(cfg: &ExperimentConfig, cells: &[Cell]) -> CliResult<BTreeMap<u64, Result<Arc<Split>, String>>> {
    let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    if cfg.generator.is_some() {
        let made: Vec<(u64, Result<Arc<Split>, String>)> = seeds
            .par_iter()
            .map(|&s| {
                let split = generate(cfg, s).map(|sim| {
                    Arc::new(Split {
                        train: sim.train,
                        test: sim.test,
                        mask: Some(sim.truth.ground_truth.relevance),
                    })
                });
                (s, split.map_err(|e| e.to_string()))
            })
            .collect();
        return Ok(made.into_iter().collect());
    }
    let train = read_table(ExperimentConfig::require(&cfg.train, "train or --generator")?)?;
    let test = read_table(ExperimentConfig::require(&cfg.test, "test")?)?;
    let mask = cfg
        .truth
        .as_deref()
        .map(Truth::load)
        .transpose()?
        .map(|t| t.ground_truth.relevance);
    let shared = Arc::new(Split { train, test, mask });
    Ok(seeds.into_iter().map(|s| (s, Ok(shared.clone()))).collect())
}

pub fn run_sweep(cfg: &ExperimentConfig) -> CliResult<Vec<SweepRow>> {
    let cells = plan(cfg)?;
    let data = data_for(cfg, &cells)?;
    Ok(cells
        .par_iter()
        .map(|cell| match &data[&cell.seed] {
            Ok(split) => run_cell(cell, split, cfg),
            Err(msg) => SweepRow {
                kind: cell.kind,
                k: cell.k,
                p: None,
                p_tuned: false,
                seed: cell.seed,
                status: "error".into(),
                auroc: None,
                heldout_log_px: None,
                heldout_log_py_given_x: None,
                switch_auroc: None,
                final_elbo: None,
                error: msg.clone(),
            },
        })
        .collect())
}

pub fn rows_to_csv(rows: &[SweepRow]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Data(format!("writing results: {e}")))?;
    }
    w.into_inner().map_err(|e| CliError::Data(format!("writing results: {e}")))
}

pub fn cmd_sweep(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let rows = run_sweep(cfg)?;
    run.write("results.csv", &rows_to_csv(&rows)?)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        eprintln!("{failed} of {} sweep cells failed; see the error column", rows.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            kinds: Some(vec![ModelKind::PfGmm, ModelKind::SupGmm, ModelKind::LogReg]),
            k_grid: Some(vec![1, 2]),
            p_grid: Some(vec![0.1, 0.5, 0.9]),
            seeds: Some(vec![0, 1]),
            ..Default::default()
        }
    }

    #[test]
    fn plan_is_cartesian_and_ordered() {
        let cells = plan(&base()).unwrap();
        // pf: 2 K × 3 p × 2 seeds; sup: 2 × 2; logreg: 2 seeds.
        assert_eq!(cells.len(), 12 + 4 + 2);
        assert_eq!(cells[0].p, PChoice::Fixed(0.1));
        assert_eq!(cells[1].seed, 1);
        assert_eq!(cells.last().unwrap().kind, ModelKind::LogReg);
        assert_eq!(cells.last().unwrap().k, None);
    }

    #[test]
    fn tuning_collapses_the_p_axis() {
        let cfg = ExperimentConfig {
            tune_p: Some(true),
            ..base()
        };
        let pf = plan(&cfg).unwrap().into_iter().filter(|c| c.kind == ModelKind::PfGmm).count();
        assert_eq!(pf, 4);
    }

    #[test]
    fn empty_grids_are_usage_errors() {
        for cfg in [
            ExperimentConfig {
                p_grid: Some(vec![]),
                ..base()
            },
            ExperimentConfig {
                k_grid: Some(vec![]),
                ..base()
            },
            ExperimentConfig {
                seeds: Some(vec![]),
                ..base()
            },
            ExperimentConfig {
                kinds: Some(vec![]),
                ..base()
            },
        ] {
            assert_eq!(plan(&cfg).unwrap_err().exit_code(), 2);
        }
    }

    #[test]
    fn failing_cells_are_recorded_and_the_rest_run() {
        let cfg = ExperimentConfig {
            generator: Some(crate::config::Generator::Analysis),
            n: Some(120),
            kinds: Some(vec![ModelKind::SupHmm, ModelKind::SupGmm]),
            k_grid: Some(vec![2]),
            seeds: Some(vec![0]),
            restarts: Some(1),
            ..Default::default()
        };
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows[0].status, "error");
        assert!(rows[0].error.contains("sequence"), "{}", rows[0].error);
        assert_eq!(rows[1].status, "ok");
        assert!(rows[1].auroc.is_some());
    }
}
