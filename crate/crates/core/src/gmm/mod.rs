//! Prediction-focused Gaussian mixture.
//!
//! Each input dimension `d` has a switch `ξ_d`. When on, the dimension is
//! drawn from the component-specific Gaussian `B[k, d]`; when off, from a
//! single shared Gaussian `π[d]`. The target is categorical given the
//! component. Training is variational EM with a factorized posterior whose
//! switch factors share one Bernoulli parameter `φ_d` per dimension.
//!
//! One EM iteration is three exact coordinate-ascent steps on the ELBO:
//! component responsibilities, switch posterior, then parameters. The ELBO
//! trace is therefore non-decreasing, except after an empty-component rescue.

mod exact;

pub use exact::{alt_bound_objective, exact_log_joint, MAX_ENUM_DIM};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{data, usage, Error, Result};
use crate::rng::SeededRng;
use crate::stats::{
    floored_ln, normal_ln, normalize_log_in_place, sigmoid, xlog_ratio, Simplex, VAR_FLOOR,
};

/// Components whose total responsibility falls below this are reseeded.
pub const EMPTY_MASS: f64 = 1e-8;

const P_CLAMP: f64 = 1e-6;

/// Full parameter set of a prediction-focused mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub theta: Simplex,
    /// `K × D` signal means.
    pub b_mean: Array2<f64>,
    /// `K × D` signal variances.
    pub b_var: Array2<f64>,
    /// Per-dimension noise mean.
    pub pi_mean: Array1<f64>,
    /// Per-dimension noise variance.
    pub pi_var: Array1<f64>,
    /// `K × C` target distribution, one simplex per row.
    pub eta: Array2<f64>,
}

impl GmmParams {
    pub fn n_components(&self) -> usize {
        self.b_mean.nrows()
    }

    pub fn dim(&self) -> usize {
        self.b_mean.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.eta.ncols()
    }

    pub fn eta_row(&self, k: usize) -> Result<Simplex> {
        Simplex::new(self.eta.row(k).to_vec())
    }

    /// Check shapes, simplex rows and variance floors.
    pub fn validate(&self) -> Result<()> {
        let (k, d) = self.b_mean.dim();
        if k == 0 || d == 0 {
            return Err(usage("parameters need K >= 1 and D >= 1"));
        }
        if self.theta.len() != k
            || self.b_var.dim() != (k, d)
            || self.pi_mean.len() != d
            || self.pi_var.len() != d
            || self.eta.nrows() != k
            || self.eta.ncols() == 0
        {
            return Err(usage("inconsistent parameter shapes"));
        }
        for row in self.eta.rows() {
            Simplex::new(row.to_vec())?;
        }
        let all_vars = self.b_var.iter().chain(self.pi_var.iter());
        if let Some(v) = all_vars.clone().find(|v| !(**v >= VAR_FLOOR) || !v.is_finite()) {
            return Err(usage(format!("variance {v} below floor {VAR_FLOOR}")));
        }
        let all_means = self.b_mean.iter().chain(self.pi_mean.iter());
        if all_means.clone().any(|m| !m.is_finite()) {
            return Err(Error::Numeric("non-finite mean".into()));
        }
        Ok(())
    }

    pub(crate) fn ln_theta(&self) -> Vec<f64> {
        self.theta.as_slice().iter().map(|t| t.ln()).collect()
    }

    pub(crate) fn ln_eta(&self) -> Array2<f64> {
        self.eta.mapv(floored_ln)
    }
}

/// Tied Bernoulli parameters of the switch posterior, one per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SwitchPosterior(Vec<f64>);

impl SwitchPosterior {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if let Some(v) = phi.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(usage(format!("switch probability {v} not in [0, 1]")));
        }
        Ok(SwitchPosterior(phi))
    }

    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        SwitchPosterior::new(vec![value; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for SwitchPosterior {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SwitchPosterior::new(v)
    }
}

impl From<SwitchPosterior> for Vec<f64> {
    fn from(s: SwitchPosterior) -> Vec<f64> {
        s.0
    }
}

/// Posterior over component assignments, one simplex per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(pub(crate) Array2<f64>);

impl Responsibilities {
    pub fn new(r: Array2<f64>) -> Result<Self> {
        for (i, row) in r.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if row.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-10 {
                return Err(usage(format!("responsibility row {i} is not a simplex")));
            }
        }
        Ok(Responsibilities(r))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

/// EM settings. Defaults: 500 iterations, relative tolerance 1e-6,
/// 5 restarts, `alpha = 1` (maximum-likelihood mixture weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Prior probability that a dimension is relevant.
    pub p: f64,
    /// Component budget.
    pub k: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub n_restarts: usize,
    /// Dirichlet concentration for the mixture weights.
    pub alpha: f64,
    pub seed: u64,
}

impl EmConfig {
    pub fn new(k: usize, p: f64, seed: u64) -> Self {
        EmConfig {
            p,
            k,
            max_iters: 500,
            rel_tol: 1e-6,
            n_restarts: 5,
            alpha: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(usage(format!("switch prior p = {} not in [0, 1]", self.p)));
        }
        if self.k == 0 {
            return Err(usage("component budget K must be positive"));
        }
        if self.max_iters == 0 || self.n_restarts == 0 {
            return Err(usage("max_iters and n_restarts must be positive"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(usage("rel_tol must be positive"));
        }
        if !(self.alpha >= 1.0) {
            return Err(usage("alpha must be at least 1"));
        }
        Ok(())
    }

    /// `p` clamped away from 0 and 1 unless it is exactly 0 or 1.
    pub fn effective_p(&self) -> f64 {
        effective_p(self.p)
    }
}

pub(crate) fn effective_p(p: f64) -> f64 {
    if p == 0.0 || p == 1.0 {
        p
    } else {
        p.clamp(P_CLAMP, 1.0 - P_CLAMP)
    }
}

/// Outcome of a multi-restart EM fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<P> {
    pub params: P,
    pub phi: SwitchPosterior,
    /// Objective after initialization and after every iteration.
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
    /// Index of the restart that won.
    pub restart: usize,
}

impl<P> FitResult<P> {
    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("trace holds the initial objective")
    }
}

pub(crate) fn check_shapes(params: &GmmParams, phi: &SwitchPosterior, x: &ArrayView2<f64>) -> Result<()> {
    if phi.len() != params.dim() || x.ncols() != params.dim() {
        return Err(usage(format!(
            "dimension mismatch: params {}, phi {}, data {}",
            params.dim(),
            phi.len(),
            x.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn check_labels(y: Option<&[usize]>, rows: usize, n_classes: usize) -> Result<()> {
    if let Some(y) = y {
        if y.len() != rows {
            return Err(usage(format!("{} labels for {rows} rows", y.len())));
        }
        if let Some(bad) = y.iter().find(|c| **c >= n_classes) {
            return Err(usage(format!("label {bad} out of range for {n_classes} classes")));
        }
    }
    Ok(())
}

pub(crate) fn check_finite_rows(x: &ArrayView2<f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(data("non-finite value in inputs"));
    }
    Ok(())
}

/// `M × K` per-row scores `Σ_d [φ_d ln p_B + (1-φ_d) ln p_π] + [y] ln η_{k,y}`.
///
/// Excludes the mixture weight so HMMs can reuse it as the emission term.
pub(crate) fn emission_scores(
    params: &GmmParams,
    phi: &[f64],
    x: &ArrayView2<f64>,
    y: Option<&[usize]>,
) -> Array2<f64> {
    let k_count = params.n_components();
    let ln_eta = y.map(|_| params.ln_eta());
    let mut out = Array2::zeros((x.nrows(), k_count));
    for (n, (xrow, mut orow)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let mut noise = 0.0;
        for (d, &xv) in xrow.iter().enumerate() {
            let w = 1.0 - phi[d];
            if w != 0.0 {
                noise += w * normal_ln(xv, params.pi_mean[d], params.pi_var[d]);
            }
        }
        for k in 0..k_count {
            let mut s = noise;
            for (d, &xv) in xrow.iter().enumerate() {
                if phi[d] != 0.0 {
                    s += phi[d] * normal_ln(xv, params.b_mean[[k, d]], params.b_var[[k, d]]);
                }
            }
            if let (Some(y), Some(le)) = (y, &ln_eta) {
                s += le[[k, y[n]]];
            }
            orow[k] = s;
        }
    }
    out
}

/// `Σ_d [φ ln(p/φ) + (1-φ) ln((1-p)/(1-φ))]`, the per-datum switch term.
pub(crate) fn switch_kl_term(phi: &[f64], p: f64) -> f64 {
    phi.iter()
        .map(|&f| xlog_ratio(f, p) + xlog_ratio(1.0 - f, 1.0 - p))
        .sum()
}

/// Responsibilities and the per-row log normalizers.
fn responsibilities_and_norms(
    params: &GmmParams,
    phi: &SwitchPosterior,
    x: &ArrayView2<f64>,
    y: Option<&[usize]>,
) -> (Array2<f64>, Vec<f64>) {
    let ln_theta = params.ln_theta();
    let mut scores = emission_scores(params, phi.as_slice(), x, y);
    let mut norms = Vec::with_capacity(scores.nrows());
    for mut row in scores.rows_mut() {
        for (s, lt) in row.iter_mut().zip(&ln_theta) {
            *s += lt;
        }
        let slice = row.as_slice_mut().expect("rows of a standard-layout array are contiguous");
        norms.push(normalize_log_in_place(slice));
    }
    (scores, norms)
}

/// Posterior over components for each row, given the switch posterior.
pub fn e_step_z(
    params: &GmmParams,
    phi: &SwitchPosterior,
    x: &Array2<f64>,
    y: Option<&[usize]>,
) -> Result<Responsibilities> {
    let xv = x.view();
    check_shapes(params, phi, &xv)?;
    check_finite_rows(&xv)?;
    check_labels(y, x.nrows(), params.n_classes())?;
    Ok(Responsibilities(responsibilities_and_norms(params, phi, &xv, y).0))
}

/// Tied switch update from pooled rows and their responsibilities.
pub(crate) fn phi_update_pooled(
    params: &GmmParams,
    resp: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    p: f64,
) -> SwitchPosterior {
    let dim = params.dim();
    if p == 0.0 || p == 1.0 {
        return SwitchPosterior(vec![p; dim]);
    }
    let prior_logit = (p / (1.0 - p)).ln();
    let count = x.nrows() as f64;
    let mut gaps = vec![0.0; dim];
    for (xrow, rrow) in x.rows().into_iter().zip(resp.rows()) {
        for (d, &xv) in xrow.iter().enumerate() {
            let mut expected_signal = 0.0;
            for (k, &r) in rrow.iter().enumerate() {
                if r != 0.0 {
                    expected_signal += r * normal_ln(xv, params.b_mean[[k, d]], params.b_var[[k, d]]);
                }
            }
            gaps[d] += expected_signal - normal_ln(xv, params.pi_mean[d], params.pi_var[d]);
        }
    }
    SwitchPosterior(
        gaps.into_iter()
            .map(|g| sigmoid(prior_logit + g / count))
            .collect(),
    )
}

/// Coordinate update of the switch posterior.
///
/// `φ_d = σ(ln(p/(1-p)) + mean_n(E_q[ln p_B(x_nd | Z_n)] - ln p_π(x_nd)))`;
/// `p = 0` and `p = 1` give constant 0 / 1 without evaluating the logit.
pub fn update_phi(
    params: &GmmParams,
    resp: &Responsibilities,
    x: &Array2<f64>,
    p: f64,
) -> Result<SwitchPosterior> {
    if !(0.0..=1.0).contains(&p) {
        return Err(usage(format!("switch prior p = {p} not in [0, 1]")));
    }
    if x.ncols() != params.dim() || resp.0.dim() != (x.nrows(), params.n_components()) {
        return Err(usage("shape mismatch in update_phi"));
    }
    Ok(phi_update_pooled(params, &resp.0.view(), &x.view(), effective_p(p)))
}

/// Closed-form updates of B, π and η from pooled rows. Mixture weights are
/// left to the caller. Components with mass below [`EMPTY_MASS`] are
/// reported in the returned list and left for [`rescue_components`].
pub(crate) fn emission_m_step(
    prev: &GmmParams,
    resp: &ArrayView2<f64>,
    phi: &[f64],
    x: &ArrayView2<f64>,
    y: Option<&[usize]>,
) -> (GmmParams, Vec<usize>) {
    let (k_count, dim) = prev.b_mean.dim();
    let mut next = prev.clone();
    let mass: Vec<f64> = resp.sum_axis(Axis(0)).to_vec();
    let empty: Vec<usize> = (0..k_count).filter(|&k| mass[k] < EMPTY_MASS).collect();

    for k in 0..k_count {
        if mass[k] < EMPTY_MASS {
            continue;
        }
        let rk = resp.column(k);
        for d in 0..dim {
            if phi[d] == 0.0 {
                continue;
            }
            let col = x.column(d);
            let mean = rk.iter().zip(col.iter()).map(|(r, v)| r * v).sum::<f64>() / mass[k];
            let var = rk
                .iter()
                .zip(col.iter())
                .map(|(r, v)| r * (v - mean) * (v - mean))
                .sum::<f64>()
                / mass[k];
            next.b_mean[[k, d]] = mean;
            next.b_var[[k, d]] = var.max(VAR_FLOOR);
        }
    }

    for d in 0..dim {
        if phi[d] == 1.0 {
            continue;
        }
        let (mean, var) = crate::stats::mean_var(x.column(d).iter().copied());
        next.pi_mean[d] = mean;
        next.pi_var[d] = var;
    }

    if let Some(y) = y {
        let n_classes = prev.n_classes();
        let mut counts = Array2::<f64>::zeros((k_count, n_classes));
        for (rrow, &label) in resp.rows().into_iter().zip(y) {
            for (k, &r) in rrow.iter().enumerate() {
                counts[[k, label]] += r;
            }
        }
        for k in 0..k_count {
            if mass[k] < EMPTY_MASS {
                continue;
            }
            let total: f64 = counts.row(k).sum();
            for c in 0..n_classes {
                next.eta[[k, c]] = counts[[k, c]] / total;
            }
        }
    }
    (next, empty)
}

/// `θ_k = (α - 1 + mass_k) / (Kα - K + n)`.
pub(crate) fn theta_update(mass: &[f64], n: usize, alpha: f64) -> Vec<f64> {
    let k = mass.len() as f64;
    let denom = k * alpha - k + n as f64;
    mass.iter().map(|m| (alpha - 1.0 + m) / denom).collect()
}

/// Reseed empty components at a random pooled row with the global variance.
/// Their weight in `weights` is raised to at least `1/n` and renormalized.
pub(crate) fn rescue_components(
    params: &mut GmmParams,
    weights: &mut Vec<f64>,
    empty: &[usize],
    x: &ArrayView2<f64>,
    rng: &mut SeededRng,
) {
    if empty.is_empty() {
        return;
    }
    let dim = params.dim();
    let global_var: Vec<f64> = (0..dim)
        .map(|d| crate::stats::mean_var(x.column(d).iter().copied()).1)
        .collect();
    let n_classes = params.n_classes();
    let floor = 1.0 / x.nrows() as f64;
    for &k in empty {
        let row = rng.index(x.nrows());
        for d in 0..dim {
            params.b_mean[[k, d]] = x[[row, d]];
            params.b_var[[k, d]] = global_var[d];
        }
        for c in 0..n_classes {
            params.eta[[k, c]] = 1.0 / n_classes as f64;
        }
        weights[k] = weights[k].max(floor);
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
}

pub(crate) fn renormalized_simplex(mut w: Vec<f64>) -> Simplex {
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    // the closed forms already sum to one up to rounding
    Simplex::new(w.clone()).unwrap_or_else(|_| {
        Simplex::normalize(w).expect("mixture weights have positive total")
    })
}

/// Parameter maximization given responsibilities and switches.
///
/// Signal statistics of a dimension with `φ_d = 0` and noise statistics of a
/// dimension with `φ_d = 1` keep their values from `prev`. Empty components
/// are reseeded from `rng`.
pub fn m_step(
    prev: &GmmParams,
    resp: &Responsibilities,
    phi: &SwitchPosterior,
    x: &Array2<f64>,
    y: Option<&[usize]>,
    cfg: &EmConfig,
    rng: &mut SeededRng,
) -> Result<GmmParams> {
    let xv = x.view();
    check_shapes(prev, phi, &xv)?;
    check_labels(y, x.nrows(), prev.n_classes())?;
    if resp.0.dim() != (x.nrows(), prev.n_components()) {
        return Err(usage("responsibilities do not match data and parameters"));
    }
    Ok(gmm_m_step(prev, &resp.0.view(), phi.as_slice(), &xv, y, cfg.alpha, rng))
}

fn gmm_m_step(
    prev: &GmmParams,
    resp: &ArrayView2<f64>,
    phi: &[f64],
    x: &ArrayView2<f64>,
    y: Option<&[usize]>,
    alpha: f64,
    rng: &mut SeededRng,
) -> GmmParams {
    let (mut next, empty) = emission_m_step(prev, resp, phi, x, y);
    let mass = resp.sum_axis(Axis(0)).to_vec();
    let mut weights = theta_update(&mass, x.nrows(), alpha);
    rescue_components(&mut next, &mut weights, &empty, x, rng);
    next.theta = renormalized_simplex(weights);
    next
}

/// Log Dirichlet prior on the mixture weights up to a constant; zero when `alpha = 1`.
pub(crate) fn theta_log_prior(theta: &Simplex, alpha: f64) -> f64 {
    if alpha == 1.0 {
        return 0.0;
    }
    (alpha - 1.0) * theta.as_slice().iter().map(|t| t.ln()).sum::<f64>()
}

/// Evidence lower bound at the optimal component posterior for `(params, φ)`.
///
/// Equals `E_q[ln p(X, Y | Z, ξ)] - KL(q(Z, ξ) || p(Z, ξ))` with per-datum
/// switch factors sharing `φ`. With `y = None` the target term is dropped.
pub fn elbo(
    params: &GmmParams,
    phi: &SwitchPosterior,
    x: &Array2<f64>,
    y: Option<&[usize]>,
    p: f64,
) -> Result<f64> {
    let xv = x.view();
    check_shapes(params, phi, &xv)?;
    check_finite_rows(&xv)?;
    check_labels(y, x.nrows(), params.n_classes())?;
    Ok(elbo_unchecked(params, phi, &xv, y, effective_p(p)))
}

fn elbo_unchecked(
    params: &GmmParams,
    phi: &SwitchPosterior,
    x: &ArrayView2<f64>,
    y: Option<&[usize]>,
    p: f64,
) -> f64 {
    let (_, norms) = responsibilities_and_norms(params, phi, x, y);
    norms.iter().sum::<f64>() + x.nrows() as f64 * switch_kl_term(phi.as_slice(), p)
}

/// Initial parameters for one restart.
///
/// Uniform weights; signal means at `K` distinct rows drawn without
/// replacement; every variance at the floored column variance; noise means
/// at the column means; target rows at the empirical class frequencies plus
/// `0.01 * U[0,1)` noise, renormalized.
pub fn init_params(
    x: &Array2<f64>,
    y: Option<&[usize]>,
    n_classes: usize,
    k: usize,
    rng: &mut SeededRng,
) -> Result<GmmParams> {
    let (n, dim) = x.dim();
    if dim == 0 {
        return Err(usage("need at least one dimension"));
    }
    if k == 0 || n < k {
        return Err(usage(format!("need N >= K, got N = {n}, K = {k}")));
    }
    check_finite_rows(&x.view())?;
    let (pi_mean, pi_var): (Vec<f64>, Vec<f64>) = (0..dim)
        .map(|d| crate::stats::mean_var(x.column(d).iter().copied()))
        .unzip();
    let rows = rng.sample_without_replacement(n, k);
    let b_mean = x.select(Axis(0), &rows);
    let b_var = Array2::from_shape_fn((k, dim), |(_, d)| pi_var[d]);

    let mut freq = vec![0.0; n_classes];
    match y {
        Some(y) => {
            for &c in y {
                freq[c] += 1.0;
            }
            for f in &mut freq {
                *f /= n as f64;
            }
        }
        None => freq.iter_mut().for_each(|f| *f = 1.0 / n_classes as f64),
    }
    let mut eta = Array2::zeros((k, n_classes));
    for mut row in eta.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = freq[c] + 0.01 * rng.uniform();
        }
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    Ok(GmmParams {
        theta: Simplex::uniform(k),
        b_mean,
        b_var,
        pi_mean: Array1::from(pi_mean),
        pi_var: Array1::from(pi_var),
        eta,
    })
}

/// Whether the target enters the E-step (supervised) or not (inputs only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Targets {
    Used,
    Ignored,
}

struct RunOutcome {
    params: GmmParams,
    phi: SwitchPosterior,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

pub(crate) fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

fn run_once(data: &Dataset, cfg: &EmConfig, targets: Targets, restart: usize) -> Result<RunOutcome> {
    let mut rng = SeededRng::new(cfg.seed, restart as u64);
    let x = data.x();
    let xv = x.view();
    let y = match targets {
        Targets::Used => Some(data.labels()?),
        Targets::Ignored => None,
    };
    let p = cfg.effective_p();
    let mut params = init_params(x, y, data.n_classes(), cfg.k, &mut rng)?;
    let mut phi = SwitchPosterior(vec![p; data.dim()]);
    let objective =
        |params: &GmmParams, phi: &SwitchPosterior| -> (Array2<f64>, f64) {
            let (resp, norms) = responsibilities_and_norms(params, phi, &xv, y);
            let value = norms.iter().sum::<f64>()
                + x.nrows() as f64 * switch_kl_term(phi.as_slice(), p)
                + theta_log_prior(&params.theta, cfg.alpha);
            (resp, value)
        };
    let (mut resp, first) = objective(&params, &phi);
    let mut trace = vec![first];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        phi = phi_update_pooled(&params, &resp.view(), &xv, p);
        params = gmm_m_step(&params, &resp.view(), phi.as_slice(), &xv, y, cfg.alpha, &mut rng);
        let (next_resp, value) = objective(&params, &phi);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("objective became {value} at iteration {iterations}")));
        }
        resp = next_resp;
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

/// Index of the best final objective; ties resolve to the lowest index.
pub(crate) fn best_index(finals: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in finals.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub(crate) fn fit_with(data: &Dataset, cfg: &EmConfig, targets: Targets) -> Result<FitResult<GmmParams>> {
    cfg.validate()?;
    if data.len() < cfg.k {
        return Err(usage(format!("need N >= K, got N = {}, K = {}", data.len(), cfg.k)));
    }
    if targets == Targets::Used {
        data.labels()?;
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

/// Fit a prediction-focused mixture by multi-restart variational EM.
///
/// Restart `r` draws from stream `r` of `cfg.seed`; the restart with the
/// highest final objective wins.
pub fn fit(data: &Dataset, cfg: &EmConfig) -> Result<FitResult<GmmParams>> {
    fit_with(data, cfg, Targets::Used)
}

/// Component posterior from inputs alone (the target factor dropped).
pub fn posterior_from_inputs(params: &GmmParams, phi: &SwitchPosterior, x: &Array2<f64>) -> Result<Responsibilities> {
    e_step_z(params, phi, x, None)
}

/// Predictive class distribution `Σ_k q(Z = k | x, φ) η_k` per row.
pub fn predict_proba(params: &GmmParams, phi: &SwitchPosterior, x: &Array2<f64>) -> Result<Array2<f64>> {
    let resp = posterior_from_inputs(params, phi, x)?;
    Ok(resp.0.dot(&params.eta))
}
