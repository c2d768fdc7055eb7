//! Choosing the switch prior `p` on a validation split.
//!
//! The training data is split 80/20 (seeded by `cfg.seed`); one model per
//! grid value is fitted on the 80% part and scored by validation AUROC. The
//! winning model is returned as-is, without refitting on the full data.
//! Ties go to the earliest grid value.

use rayon::prelude::*;

use crate::data::{Dataset, SequenceDataset};
use crate::error::{usage, Result};
use crate::eval::{class_auroc, EvalData, FittedModel};
use crate::gmm::{self, EmConfig, FitResult, GmmParams};
use crate::hmm::{self, HmmParams};

pub const DEFAULT_P_GRID: [f64; 9] = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.99];
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct Tuned<P> {
    pub p: f64,
    /// `(p, validation AUROC)` for every grid value, in grid order.
    pub curve: Vec<(f64, f64)>,
    pub fit: FitResult<P>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(usage("p grid is empty"));
    }
    if let Some(p) = grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(usage(format!("grid value p = {p} not in [0, 1]")));
    }
    Ok(())
}

fn pick<P>(grid: &[f64], cells: Vec<(f64, FitResult<P>)>) -> Tuned<P> {
    let mut best = 0;
    for (i, (score, _)) in cells.iter().enumerate() {
        if *score > cells[best].0 {
            best = i;
        }
    }
    let curve = grid.iter().zip(&cells).map(|(&p, (s, _))| (p, *s)).collect();
    let fit = cells.into_iter().nth(best).unwrap().1;
    Tuned { p: grid[best], curve, fit }
}

pub fn tune_p_gmm(train: &Dataset, grid: &[f64], cfg: &EmConfig) -> Result<Tuned<GmmParams>> {
    check_grid(grid)?;
    let (fit_part, val) = train.split(1.0 - VALIDATION_FRACTION, cfg.seed)?;
    let labels = val.labels()?;
    let cells: Vec<(f64, FitResult<GmmParams>)> = grid
        .par_iter()
        .map(|&p| {
            let fit = gmm::fit(&fit_part, &EmConfig { p, ..cfg.clone() })?;
            let probs = gmm::predict_proba(&fit.params, &fit.phi, val.x())?;
            Ok((class_auroc(&probs, labels)?, fit))
        })
        .collect::<Result<_>>()?;
    Ok(pick(grid, cells))
}

pub fn tune_p_hmm(train: &SequenceDataset, grid: &[f64], cfg: &EmConfig) -> Result<Tuned<HmmParams>> {
    check_grid(grid)?;
    let (fit_part, val) = train.split(1.0 - VALIDATION_FRACTION, cfg.seed)?;
    let cells: Vec<(f64, FitResult<HmmParams>)> = grid
        .par_iter()
        .map(|&p| {
            let fit = hmm::hmm_fit(&fit_part, &EmConfig { p, ..cfg.clone() })?;
            let model = FittedModel::Chain {
                params: fit.params.clone(),
                phi: fit.phi.clone(),
            };
            let probs = model.predict_proba(EvalData::Sequences(&val))?;
            let labels = val.flatten().labels()?.to_vec();
            Ok((class_auroc(&probs, &labels)?, fit))
        })
        .collect::<Result<_>>()?;
    Ok(pick(grid, cells))
}
