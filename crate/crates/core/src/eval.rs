//! Held-out metrics: AUROC, per-datum log p(X) and log p(Y | X), switch
//! recovery and the generative/discriminative landscape.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{LogRegModel, TwoStepGmm, TwoStepHmm};
use crate::data::{Dataset, SequenceDataset};
use crate::error::{usage, Error, Result};
use crate::gmm::{self, check_finite_rows, GmmParams, SwitchPosterior};
use crate::hmm::{self, chain_log_normalizer, HmmParams};
use crate::stats::{floored_ln, lse, normal_ln};

/// Rank-based AUROC with midranks for ties. Labels must be 0 or 1 and both
/// classes must be present.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(usage("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(usage(format!("binary labels required, found {l}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks doubled so midranks stay integral
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u128;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                pos_rank_sum2 += midrank2;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as u128;
    let u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// AUROC of class probabilities: the class-1 column for two classes,
/// otherwise one-vs-rest averaged over the classes present in `labels`.
pub fn class_auroc(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() {
        return Err(usage("probabilities and labels differ in length"));
    }
    let c = probs.ncols();
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(usage(format!("label {l} out of range for {c} classes")));
    }
    if c == 2 {
        return auroc(&probs.column(1).to_vec(), labels);
    }
    let mut total = 0.0;
    let mut used = 0;
    for class in 0..c {
        let bin: Vec<usize> = labels.iter().map(|&l| (l == class) as usize).collect();
        let present = bin.iter().sum::<usize>();
        if present == 0 || present == bin.len() {
            continue;
        }
        total += auroc(&probs.column(class).to_vec(), &bin)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("AUROC needs at least two classes present".into()));
    }
    Ok(total / used as f64)
}

/// AUROC of `φ` against the ground-truth relevance mask.
pub fn switch_recovery(phi: &SwitchPosterior, mask: &[bool]) -> Result<f64> {
    let labels: Vec<usize> = mask.iter().map(|&m| m as usize).collect();
    auroc(phi.as_slice(), &labels)
}

/// Any fitted model the evaluator understands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FittedModel {
    Mixture { params: GmmParams, phi: SwitchPosterior },
    Chain { params: HmmParams, phi: SwitchPosterior },
    TwoStepMixture(TwoStepGmm),
    TwoStepChain(TwoStepHmm),
    LogReg(LogRegModel),
}

impl FittedModel {
    pub fn dim(&self) -> usize {
        match self {
            FittedModel::Mixture { params, .. } => params.dim(),
            FittedModel::Chain { params, .. } => params.gmm.dim(),
            FittedModel::TwoStepMixture(m) => m.gmm.dim(),
            FittedModel::TwoStepChain(m) => m.hmm.gmm.dim(),
            FittedModel::LogReg(m) => m.dim(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            FittedModel::Mixture { params, .. } => params.n_classes(),
            FittedModel::Chain { params, .. } => params.gmm.n_classes(),
            FittedModel::TwoStepMixture(m) => m.logreg.n_classes(),
            FittedModel::TwoStepChain(m) => m.logreg.n_classes(),
            FittedModel::LogReg(m) => m.n_classes(),
        }
    }

    pub fn phi(&self) -> Option<&SwitchPosterior> {
        match self {
            FittedModel::Mixture { phi, .. } | FittedModel::Chain { phi, .. } => Some(phi),
            _ => None,
        }
    }

    pub fn is_sequential(&self) -> bool {
        matches!(self, FittedModel::Chain { .. } | FittedModel::TwoStepChain(_))
    }

    fn predict_rows(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            FittedModel::Mixture { params, phi } => gmm::predict_proba(params, phi, x),
            FittedModel::Chain { params, phi } => hmm::hmm_predict_proba(params, phi, x),
            FittedModel::TwoStepMixture(m) => m.predict_proba(x),
            FittedModel::TwoStepChain(m) => m.predict_proba(x),
            FittedModel::LogReg(m) => m.predict_proba(x),
        }
    }

    /// Class probabilities for every row (every time step, in sequence order).
    pub fn predict_proba(&self, data: EvalData) -> Result<Array2<f64>> {
        self.check_data(data)?;
        match (self.is_sequential(), data) {
            (false, EvalData::Flat(d)) => self.predict_rows(d.x()),
            (_, EvalData::Sequences(s)) => {
                let parts: Vec<Array2<f64>> = s
                    .sequences()
                    .iter()
                    .map(|seq| self.predict_rows(&seq.x))
                    .collect::<Result<_>>()?;
                let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
                Ok(concatenate(Axis(0), &views).expect("class columns agree"))
            }
            (true, EvalData::Flat(_)) => unreachable!("rejected by check_data"),
        }
    }

    fn check_data(&self, data: EvalData) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::Data(format!(
                "model expects {} features, data has {}",
                self.dim(),
                data.dim()
            )));
        }
        if data.n_classes() > self.n_classes() {
            return Err(Error::Data(format!(
                "model has {} classes, data has {}",
                self.n_classes(),
                data.n_classes()
            )));
        }
        if self.is_sequential() && matches!(data, EvalData::Flat(_)) {
            return Err(usage("sequence model needs sequence data"));
        }
        Ok(())
    }
}

/// Test data for evaluation.
#[derive(Debug, Clone, Copy)]
pub enum EvalData<'a> {
    Flat(&'a Dataset),
    Sequences(&'a SequenceDataset),
}

impl EvalData<'_> {
    fn dim(&self) -> usize {
        match self {
            EvalData::Flat(d) => d.dim(),
            EvalData::Sequences(s) => s.dim(),
        }
    }

    fn n_classes(&self) -> usize {
        match self {
            EvalData::Flat(d) => d.n_classes(),
            EvalData::Sequences(s) => s.n_classes(),
        }
    }

    fn labels(&self) -> Result<Vec<usize>> {
        match self {
            EvalData::Flat(d) => Ok(d.labels()?.to_vec()),
            EvalData::Sequences(s) => {
                if !s.is_labeled() {
                    return Err(usage("evaluation needs labeled data"));
                }
                Ok(s.flatten().labels()?.to_vec())
            }
        }
    }

    fn n_points(&self) -> usize {
        match self {
            EvalData::Flat(d) => d.len(),
            EvalData::Sequences(s) => s.total_steps(),
        }
    }
}

/// Per-datum `Σ_k`-free emission log-scores with per-datum switches
/// marginalized: `Σ_d ln(φ_d N_B + (1 - φ_d) N_π)`, plus `ln η_{k,y}` if labels given.
fn blended_emissions(params: &GmmParams, phi: &[f64], x: &Array2<f64>, y: Option<&[usize]>) -> Array2<f64> {
    let (n, dim) = x.dim();
    let k = params.n_components();
    let ln_eta = params.ln_eta();
    Array2::from_shape_fn((n, k), |(row, comp)| {
        let mut s = 0.0;
        for (d, &f) in phi.iter().enumerate().take(dim) {
            let xv = x[[row, d]];
            s += if f == 1.0 {
                normal_ln(xv, params.b_mean[[comp, d]], params.b_var[[comp, d]])
            } else if f == 0.0 {
                normal_ln(xv, params.pi_mean[d], params.pi_var[d])
            } else {
                let a = f.ln() + normal_ln(xv, params.b_mean[[comp, d]], params.b_var[[comp, d]]);
                let b = (1.0 - f).ln() + normal_ln(xv, params.pi_mean[d], params.pi_var[d]);
                lse(&[a, b])
            };
        }
        if let Some(y) = y {
            s += ln_eta[[comp, y[row]]];
        }
        s
    })
}

fn mixture_row_lse(params: &GmmParams, e: &Array2<f64>) -> Vec<f64> {
    let ln_theta = params.ln_theta();
    e.rows()
        .into_iter()
        .map(|row| {
            let s: Vec<f64> = row.iter().zip(&ln_theta).map(|(v, t)| v + t).collect();
            lse(&s)
        })
        .collect()
}

/// Per-unit held-out log-likelihoods. A unit is a row for flat data and a
/// whole sequence for sequence data. `log_px` and `log_joint` are `None`
/// for discriminative models.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitLogLik {
    pub log_px: Option<Vec<f64>>,
    pub log_joint: Option<Vec<f64>>,
    pub log_py_given_x: Vec<f64>,
}

fn flat_rows(data: EvalData) -> (Array2<f64>, Vec<usize>) {
    match data {
        EvalData::Flat(d) => (d.x().clone(), d.labels().map(<[usize]>::to_vec).unwrap_or_default()),
        EvalData::Sequences(s) => {
            let f = s.flatten();
            (f.x().clone(), f.labels().map(<[usize]>::to_vec).unwrap_or_default())
        }
    }
}

fn ln_class_prob(probs: &Array2<f64>, y: &[usize]) -> Vec<f64> {
    y.iter().enumerate().map(|(i, &c)| floored_ln(probs[[i, c]])).collect()
}

fn chain_units(params: &HmmParams, phi: &[f64], s: &SequenceDataset) -> (Vec<f64>, Vec<f64>) {
    s.sequences()
        .iter()
        .map(|seq| {
            let y = seq.y.as_deref();
            let marg = chain_log_normalizer(params, &blended_emissions(&params.gmm, phi, &seq.x, None).view());
            let joint = chain_log_normalizer(params, &blended_emissions(&params.gmm, phi, &seq.x, y).view());
            (marg, joint)
        })
        .unzip()
}

/// Exact held-out log-likelihoods per unit (no variational approximation).
///
/// Mixture models marginalize a fresh switch vector per datum; HMMs run the
/// forward recursion with the same blended emissions. `log p(Y | X)` is
/// `log p(X, Y) - log p(X)` for generative models and the classifier's
/// log-probability for discriminative ones.
pub fn unit_log_likelihoods(model: &FittedModel, data: EvalData) -> Result<UnitLogLik> {
    model.check_data(data)?;
    data.labels()?;
    let generative = |px: Vec<f64>, joint: Vec<f64>| UnitLogLik {
        log_py_given_x: joint.iter().zip(&px).map(|(j, m)| j - m).collect(),
        log_px: Some(px),
        log_joint: Some(joint),
    };
    let with_classifier = |px: Vec<f64>, pyx: Vec<f64>| UnitLogLik {
        log_joint: Some(px.iter().zip(&pyx).map(|(m, c)| m + c).collect()),
        log_px: Some(px),
        log_py_given_x: pyx,
    };
    let sum_by_sequence = |values: &[f64], s: &SequenceDataset| -> Vec<f64> {
        let mut out = Vec::with_capacity(s.len());
        let mut at = 0;
        for seq in s.sequences() {
            out.push(values[at..at + seq.len()].iter().sum());
            at += seq.len();
        }
        out
    };
    Ok(match model {
        FittedModel::Mixture { params, phi } => {
            let (x, y) = flat_rows(data);
            check_finite_rows(&x.view())?;
            let px = mixture_row_lse(params, &blended_emissions(params, phi.as_slice(), &x, None));
            let joint = mixture_row_lse(params, &blended_emissions(params, phi.as_slice(), &x, Some(&y)));
            generative(px, joint)
        }
        FittedModel::Chain { params, phi } => {
            let EvalData::Sequences(s) = data else { unreachable!() };
            check_finite_rows(&s.flatten().x().view())?;
            let (px, joint) = chain_units(params, phi.as_slice(), s);
            generative(px, joint)
        }
        FittedModel::TwoStepMixture(m) => {
            let (x, y) = flat_rows(data);
            let px = mixture_row_lse(&m.gmm, &blended_emissions(&m.gmm, m.phi.as_slice(), &x, None));
            let pyx = ln_class_prob(&model.predict_proba(data)?, &y);
            with_classifier(px, pyx)
        }
        FittedModel::TwoStepChain(m) => {
            let EvalData::Sequences(s) = data else { unreachable!() };
            let (px, _) = chain_units(&m.hmm, m.phi.as_slice(), s);
            let (_, y) = flat_rows(data);
            let pyx = sum_by_sequence(&ln_class_prob(&model.predict_proba(data)?, &y), s);
            with_classifier(px, pyx)
        }
        FittedModel::LogReg(_) => {
            let (_, y) = flat_rows(data);
            let pyx = ln_class_prob(&model.predict_proba(data)?, &y);
            let pyx = match data {
                EvalData::Flat(_) => pyx,
                EvalData::Sequences(s) => sum_by_sequence(&pyx, s),
            };
            UnitLogLik {
                log_px: None,
                log_joint: None,
                log_py_given_x: pyx,
            }
        }
    })
}

/// Identification of the run that produced a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub seed: u64,
    pub p: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    /// Per-datum mean; `None` (not applicable) for discriminative models.
    pub heldout_log_px: Option<f64>,
    pub heldout_log_py_given_x: f64,
    pub switch_auroc: Option<f64>,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// Held-out AUROC and per-datum mean log-likelihoods. `mask` adds the
/// switch-recovery score for models with switches.
pub fn heldout_metrics(
    model: &FittedModel,
    data: EvalData,
    provenance: Provenance,
    mask: Option<&[bool]>,
) -> Result<MetricsReport> {
    let probs = model.predict_proba(data)?;
    let auroc = class_auroc(&probs, &data.labels()?)?;
    let units = unit_log_likelihoods(model, data)?;
    let n = data.n_points() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let heldout_log_px = units.log_px.as_deref().map(mean);
    let heldout_log_py_given_x = mean(&units.log_py_given_x);
    if heldout_log_px.is_some_and(|v| !v.is_finite()) || !heldout_log_py_given_x.is_finite() {
        return Err(Error::Numeric("non-finite held-out log-likelihood".into()));
    }
    let switch_auroc = match (mask, model.phi()) {
        (Some(mask), Some(phi)) => Some(switch_recovery(phi, mask)?),
        _ => None,
    };
    Ok(MetricsReport {
        auroc,
        heldout_log_px,
        heldout_log_py_given_x,
        switch_auroc,
        provenance,
    })
}

/// One point of the generative/discriminative landscape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub log_px: Option<f64>,
    pub log_py_given_x: f64,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// Held-out (log p(X), log p(Y | X)) per model, in input order.
pub fn landscape(models: &[(FittedModel, Provenance)], data: EvalData) -> Result<Vec<LandscapeRow>> {
    if models.is_empty() {
        return Err(usage("landscape needs at least one model"));
    }
    models
        .par_iter()
        .map(|(m, prov)| {
            let r = heldout_metrics(m, data, prov.clone(), None)?;
            Ok(LandscapeRow {
                log_px: r.heldout_log_px,
                log_py_given_x: r.heldout_log_py_given_x,
                provenance: r.provenance,
            })
        })
        .collect()
}
