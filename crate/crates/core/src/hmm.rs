//! Prediction-focused hidden Markov model.
//!
//! Same emission structure as the mixture (signal/noise switches per input
//! dimension, categorical target per state) with Markov dynamics over the
//! hidden state. The E-step runs log-space forward-backward per sequence;
//! switch posteriors are tied across time steps and sequences.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Sequence, SequenceDataset};
use crate::error::{usage, Error, Result};
use crate::gmm::{
    self, best_index, check_finite_rows, check_labels, check_shapes, effective_p, emission_m_step,
    emission_scores, phi_update_pooled, relative_change, renormalized_simplex, rescue_components, switch_kl_term,
    theta_log_prior, theta_update, EmConfig, FitResult, GmmParams, SwitchPosterior, Targets,
};
use crate::rng::SeededRng;
use crate::stats::{lse, Simplex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    /// Emission, noise and target parameters; `theta` is the initial-state distribution.
    pub gmm: GmmParams,
    /// `K × K` row-stochastic transition matrix, `a[[from, to]]`.
    pub a: Array2<f64>,
}

impl HmmParams {
    pub fn n_states(&self) -> usize {
        self.gmm.n_components()
    }

    pub fn validate(&self) -> Result<()> {
        self.gmm.validate()?;
        let k = self.n_states();
        if self.a.dim() != (k, k) {
            return Err(usage("transition matrix must be K x K"));
        }
        for row in self.a.rows() {
            Simplex::new(row.to_vec())?;
        }
        Ok(())
    }

    fn ln_a(&self) -> Array2<f64> {
        self.a.mapv(f64::ln)
    }
}

/// Smoothed posteriors of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePosteriors {
    /// `T × K` state marginals.
    pub gamma: Array2<f64>,
    /// `T - 1` pairwise marginals, `edge[t][[j, k]] = q(Z_t = j, Z_{t+1} = k)`.
    pub edge: Vec<Array2<f64>>,
    /// Log normalizer from the forward pass.
    pub loglik: f64,
}

struct Lattice {
    gamma: Array2<f64>,
    edge: Vec<Array2<f64>>,
    loglik: f64,
    loglik_backward: f64,
}

fn forward(ln_theta: &[f64], ln_a: &Array2<f64>, e: &ArrayView2<f64>) -> Array2<f64> {
    let (t_len, k) = e.dim();
    let mut alpha = Array2::zeros((t_len, k));
    for s in 0..k {
        alpha[[0, s]] = ln_theta[s] + e[[0, s]];
    }
    let mut scratch = vec![0.0; k];
    for t in 1..t_len {
        for s in 0..k {
            for j in 0..k {
                scratch[j] = alpha[[t - 1, j]] + ln_a[[j, s]];
            }
            alpha[[t, s]] = e[[t, s]] + lse(&scratch);
        }
    }
    alpha
}

/// Log-normalizer of a chain with the given per-step emission log-scores.
pub(crate) fn chain_log_normalizer(params: &HmmParams, e: &ArrayView2<f64>) -> f64 {
    let alpha = forward(&params.gmm.ln_theta(), &params.ln_a(), e);
    lse(&alpha.row(e.nrows() - 1).to_vec())
}

fn lattice(ln_theta: &[f64], ln_a: &Array2<f64>, e: &ArrayView2<f64>) -> Lattice {
    let (t_len, k) = e.dim();
    let alpha = forward(ln_theta, ln_a, e);
    let mut beta = Array2::zeros((t_len, k));
    let mut scratch = vec![0.0; k];
    for t in (0..t_len - 1).rev() {
        for j in 0..k {
            for s in 0..k {
                scratch[s] = ln_a[[j, s]] + e[[t + 1, s]] + beta[[t + 1, s]];
            }
            beta[[t, j]] = lse(&scratch);
        }
    }
    let loglik = lse(&alpha.row(t_len - 1).to_vec());
    for s in 0..k {
        scratch[s] = ln_theta[s] + e[[0, s]] + beta[[0, s]];
    }
    let loglik_backward = lse(&scratch);

    // each step is renormalized on its own so rounding in the two passes
    // does not accumulate over long sequences
    let mut gamma = Array2::zeros((t_len, k));
    for t in 0..t_len {
        for s in 0..k {
            scratch[s] = alpha[[t, s]] + beta[[t, s]];
        }
        let norm = lse(&scratch);
        for s in 0..k {
            gamma[[t, s]] = (scratch[s] - norm).exp();
        }
    }
    let mut pair = vec![0.0; k * k];
    let edge = (0..t_len.saturating_sub(1))
        .map(|t| {
            for j in 0..k {
                for s in 0..k {
                    pair[j * k + s] = alpha[[t, j]] + ln_a[[j, s]] + e[[t + 1, s]] + beta[[t + 1, s]];
                }
            }
            let norm = lse(&pair);
            Array2::from_shape_fn((k, k), |(j, s)| (pair[j * k + s] - norm).exp())
        })
        .collect();
    Lattice {
        gamma,
        edge,
        loglik,
        loglik_backward,
    }
}

fn check_sequence(params: &HmmParams, phi: &SwitchPosterior, seq: &Sequence, use_y: bool) -> Result<()> {
    let xv = seq.x.view();
    check_shapes(&params.gmm, phi, &xv)?;
    check_finite_rows(&xv)?;
    if seq.x.nrows() == 0 {
        return Err(usage("empty sequence"));
    }
    if use_y {
        let y = seq
            .y
            .as_deref()
            .ok_or_else(|| usage("use_y requires a labeled sequence"))?;
        check_labels(Some(y), seq.len(), params.gmm.n_classes())?;
    }
    Ok(())
}

fn sequence_lattice(params: &HmmParams, phi: &SwitchPosterior, seq: &Sequence, use_y: bool) -> Result<Lattice> {
    let y = if use_y { seq.y.as_deref() } else { None };
    let e = emission_scores(&params.gmm, phi.as_slice(), &seq.x.view(), y);
    if e.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("NaN emission score".into()));
    }
    let l = lattice(&params.gmm.ln_theta(), &params.ln_a(), &e.view());
    debug_assert!((l.loglik - l.loglik_backward).abs() <= 1e-6 * (1.0 + l.loglik.abs()));
    Ok(l)
}

/// Smoothed state and pairwise marginals for one sequence.
///
/// Per-step emission log-score is `Σ_d [φ_d ln p_B + (1-φ_d) ln p_π]`, plus
/// `ln η_{k,y_t}` when `use_y` is set.
pub fn forward_backward(
    params: &HmmParams,
    phi: &SwitchPosterior,
    seq: &Sequence,
    use_y: bool,
) -> Result<StatePosteriors> {
    check_sequence(params, phi, seq, use_y)?;
    let l = sequence_lattice(params, phi, seq, use_y)?;
    Ok(StatePosteriors {
        gamma: l.gamma,
        edge: l.edge,
        loglik: l.loglik,
    })
}

fn check_dataset(params: &HmmParams, phi: &SwitchPosterior, data: &SequenceDataset) -> Result<()> {
    if data.dim() != params.gmm.dim() || phi.len() != params.gmm.dim() {
        return Err(usage("dimension mismatch between data, parameters and switches"));
    }
    if data.is_labeled() && data.n_classes() > params.gmm.n_classes() {
        return Err(usage("data has more classes than the model"));
    }
    Ok(())
}

fn pooled(data: &SequenceDataset) -> (Array2<f64>, Option<Vec<usize>>) {
    let flat = data.flatten();
    (flat.x().clone(), flat.y().map(<[usize]>::to_vec))
}

fn hmm_m_step_inner(
    prev: &HmmParams,
    gammas: &[&Array2<f64>],
    edges: &[&[Array2<f64>]],
    phi: &[f64],
    x: &ArrayView2<f64>,
    y: Option<&[usize]>,
    alpha: f64,
    rng: &mut SeededRng,
) -> HmmParams {
    let k = prev.n_states();
    let views: Vec<_> = gammas.iter().map(|g| g.view()).collect();
    let resp = concatenate(Axis(0), &views).expect("state posteriors share K");
    let (mut gmm_next, empty) = emission_m_step(&prev.gmm, &resp.view(), phi, x, y);

    let mut initial_mass = vec![0.0; k];
    for g in gammas {
        for s in 0..k {
            initial_mass[s] += g[[0, s]];
        }
    }
    let mut weights = theta_update(&initial_mass, gammas.len(), alpha);
    rescue_components(&mut gmm_next, &mut weights, &empty, x, rng);
    gmm_next.theta = renormalized_simplex(weights);

    let mut counts = Array2::<f64>::zeros((k, k));
    for seq_edges in edges {
        for e in seq_edges.iter() {
            counts += e;
        }
    }
    let mut a = prev.a.clone();
    for j in 0..k {
        let total: f64 = counts.row(j).sum();
        if total > 0.0 {
            for s in 0..k {
                a[[j, s]] = counts[[j, s]] / total;
            }
        }
    }
    HmmParams { gmm: gmm_next, a }
}

/// Closed-form parameter updates pooled over all sequences and time steps.
///
/// `A[j,k] = Σ edge(j,k) / Σ_{t<T} gamma_t(j)`; initial weights use the
/// first-step marginals; emission updates pool every `(n, t)`. A transition
/// row with no expected visits keeps its previous value.
pub fn hmm_m_step(
    prev: &HmmParams,
    posteriors: &[StatePosteriors],
    phi: &SwitchPosterior,
    data: &SequenceDataset,
    cfg: &EmConfig,
    rng: &mut SeededRng,
) -> Result<HmmParams> {
    check_dataset(prev, phi, data)?;
    if posteriors.len() != data.len() {
        return Err(usage("one posterior per sequence required"));
    }
    for (post, seq) in posteriors.iter().zip(data.sequences()) {
        if post.gamma.dim() != (seq.len(), prev.n_states()) || post.edge.len() + 1 != seq.len() {
            return Err(usage("posterior shapes do not match sequences"));
        }
    }
    let (x, y) = pooled(data);
    let gammas: Vec<&Array2<f64>> = posteriors.iter().map(|p| &p.gamma).collect();
    let edges: Vec<&[Array2<f64>]> = posteriors.iter().map(|p| p.edge.as_slice()).collect();
    Ok(hmm_m_step_inner(
        prev,
        &gammas,
        &edges,
        phi.as_slice(),
        &x.view(),
        y.as_deref(),
        cfg.alpha,
        rng,
    ))
}

/// Evidence lower bound with the exact chain posterior for `(params, φ)`.
/// Targets enter when the dataset is labeled.
pub fn hmm_elbo(params: &HmmParams, phi: &SwitchPosterior, data: &SequenceDataset, p: f64) -> Result<f64> {
    check_dataset(params, phi, data)?;
    let use_y = data.is_labeled();
    let mut total = 0.0;
    for seq in data.sequences() {
        check_sequence(params, phi, seq, use_y)?;
        total += sequence_lattice(params, phi, seq, use_y)?.loglik;
    }
    Ok(total + data.total_steps() as f64 * switch_kl_term(phi.as_slice(), effective_p(p)))
}

struct RunOutcome {
    params: HmmParams,
    phi: SwitchPosterior,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn e_step_all(params: &HmmParams, phi: &SwitchPosterior, data: &SequenceDataset, use_y: bool) -> Result<Vec<Lattice>> {
    data.sequences()
        .par_iter()
        .map(|s| sequence_lattice(params, phi, s, use_y))
        .collect()
}

fn run_once(data: &SequenceDataset, cfg: &EmConfig, targets: Targets, restart: usize) -> Result<RunOutcome> {
    let mut rng = SeededRng::new(cfg.seed, restart as u64);
    let (x, y_all) = pooled(data);
    let xv = x.view();
    let use_y = targets == Targets::Used;
    let y = if use_y { y_all.as_deref() } else { None };
    let p = cfg.effective_p();
    let k = cfg.k;
    let gmm_init = gmm::init_params(&x, y, data.n_classes(), k, &mut rng)?;
    let mut params = HmmParams {
        gmm: gmm_init,
        a: Array2::from_elem((k, k), 1.0 / k as f64),
    };
    let mut phi = SwitchPosterior::new(vec![p; data.dim()])?;
    let steps = data.total_steps() as f64;
    let objective = |params: &HmmParams, phi: &SwitchPosterior| -> Result<(Vec<Lattice>, f64)> {
        let lat = e_step_all(params, phi, data, use_y)?;
        let value = lat.iter().map(|l| l.loglik).sum::<f64>()
            + steps * switch_kl_term(phi.as_slice(), p)
            + theta_log_prior(&params.gmm.theta, cfg.alpha);
        Ok((lat, value))
    };
    let (mut lat, first) = objective(&params, &phi)?;
    let mut trace = vec![first];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let views: Vec<_> = lat.iter().map(|l| l.gamma.view()).collect();
        let resp = concatenate(Axis(0), &views).expect("state posteriors share K");
        phi = phi_update_pooled(&params.gmm, &resp.view(), &xv, p);
        let gammas: Vec<&Array2<f64>> = lat.iter().map(|l| &l.gamma).collect();
        let edges: Vec<&[Array2<f64>]> = lat.iter().map(|l| l.edge.as_slice()).collect();
        params = hmm_m_step_inner(&params, &gammas, &edges, phi.as_slice(), &xv, y, cfg.alpha, &mut rng);
        let (next, value) = objective(&params, &phi)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("objective became {value} at iteration {iterations}")));
        }
        lat = next;
        iterations += 1;
        let prev = *trace.last().unwrap();
        trace.push(value);
        if relative_change(prev, value) < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome {
        params,
        phi,
        trace,
        converged,
        iterations,
    })
}

pub(crate) fn hmm_fit_with(data: &SequenceDataset, cfg: &EmConfig, targets: Targets) -> Result<FitResult<HmmParams>> {
    cfg.validate()?;
    if data.total_steps() < cfg.k {
        return Err(usage(format!(
            "need at least K = {} time steps, got {}",
            cfg.k,
            data.total_steps()
        )));
    }
    if targets == Targets::Used && !data.is_labeled() {
        return Err(usage("operation requires labeled data"));
    }
    let runs: Vec<Result<RunOutcome>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| run_once(data, cfg, targets, r))
        .collect();
    let runs: Vec<RunOutcome> = runs.into_iter().collect::<Result<_>>()?;
    let best = best_index(runs.iter().map(|r| *r.trace.last().unwrap()));
    let run = runs.into_iter().nth(best).unwrap();
    Ok(FitResult {
        params: run.params,
        phi: run.phi,
        elbo_trace: run.trace,
        converged: run.converged,
        iterations: run.iterations,
        seed: cfg.seed,
        restart: best,
    })
}

/// Multi-restart variational EM for the prediction-focused HMM.
pub fn hmm_fit(data: &SequenceDataset, cfg: &EmConfig) -> Result<FitResult<HmmParams>> {
    hmm_fit_with(data, cfg, Targets::Used)
}

/// Smoothed state marginals from inputs alone.
pub fn state_marginals_from_inputs(params: &HmmParams, phi: &SwitchPosterior, x: &Array2<f64>) -> Result<Array2<f64>> {
    let seq = Sequence { x: x.clone(), y: None };
    Ok(forward_backward(params, phi, &seq, false)?.gamma)
}

/// Per-step class distribution `Σ_k gamma_t(k) η_k`, gamma computed from X only.
pub fn hmm_predict_proba(params: &HmmParams, phi: &SwitchPosterior, x: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(state_marginals_from_inputs(params, phi, x)?.dot(&params.gmm.eta))
}
