//! Comparison models: supervised mixtures/HMMs (switches pinned on),
//! two-step generative-then-discriminative pipelines, and multinomial
//! logistic regression.

use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SequenceDataset};
use crate::error::{data, usage, Result};
use crate::gmm::{self, check_finite_rows, EmConfig, FitResult, GmmParams, SwitchPosterior, Targets};
use crate::hmm::{self, HmmParams};
use crate::stats::normalize_log_in_place;

pub const DEFAULT_L2: f64 = 1e-4;
pub const DEFAULT_LOGREG_ITERS: usize = 10_000;
const GRAD_TOL: f64 = 1e-6;
const ARMIJO_C: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    /// `C × D`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub l2: f64,
}

impl LogRegModel {
    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Softmax class probabilities, one row per input row.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(usage(format!("expected {} features, got {}", self.dim(), x.ncols())));
        }
        check_finite_rows(&x.view())?;
        let mut logits = self.logits(x);
        for mut row in logits.rows_mut() {
            let s = row.as_slice_mut().expect("standard layout");
            normalize_log_in_place(s);
        }
        Ok(logits)
    }

    fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        (x.dot(&self.weights.t()) + &self.bias).as_standard_layout().into_owned()
    }
}

/// Mean negative log-likelihood plus `l2/2 · ||W||²` (bias unpenalized).
pub(crate) fn logreg_objective(model: &LogRegModel, x: &Array2<f64>, y: &[usize]) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut logits = model.logits(x);
    let mut nll = 0.0;
    for (mut row, &c) in logits.rows_mut().into_iter().zip(y) {
        let s = row.as_slice_mut().expect("standard layout");
        let target = s[c];
        nll += normalize_log_in_place(s) - target;
        // softmax - onehot is the per-row logit gradient
        s[c] -= 1.0;
    }
    let grad_w = logits.t().dot(x) / n + &(&model.weights * model.l2);
    let grad_b = logits.sum_axis(Axis(0)) / n;
    let penalty = 0.5 * model.l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    (nll / n + penalty, grad_w, grad_b)
}

fn sq_norm(gw: &Array2<f64>, gb: &Array1<f64>) -> f64 {
    gw.iter().chain(gb.iter()).map(|g| g * g).sum()
}

#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct LogRegTrace {
    pub model: LogRegModel,
    pub objective: Vec<f64>,
    pub grad_norm: f64,
}

pub(crate) fn fit_logreg_traced(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    l2: f64,
    max_iters: usize,
) -> Result<LogRegTrace> {
    if x.nrows() != y.len() {
        return Err(usage("features and labels differ in length"));
    }
    if x.nrows() == 0 {
        return Err(usage("need at least one row"));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(usage(format!("l2 = {l2} must be finite and nonnegative")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(data("non-finite feature value"));
    }
    if let Some(&c) = y.iter().find(|&&c| c >= n_classes) {
        return Err(data(format!("label {c} out of range for {n_classes} classes")));
    }
    let mut model = LogRegModel {
        weights: Array2::zeros((n_classes, x.ncols())),
        bias: Array1::zeros(n_classes),
        l2,
    };
    let (mut f, mut gw, mut gb) = logreg_objective(&model, x, y);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut g2 = sq_norm(&gw, &gb);
    for _ in 0..max_iters {
        if g2.sqrt() <= GRAD_TOL {
            break;
        }
        // backtracking from a slightly enlarged previous step
        let mut t = step * 2.0;
        let (next, nf, ngw, ngb) = loop {
            let cand = LogRegModel {
                weights: &model.weights - &(&gw * t),
                bias: &model.bias - &(&gb * t),
                l2,
            };
            let (cf, cgw, cgb) = logreg_objective(&cand, x, y);
            if cf <= f - ARMIJO_C * t * g2 {
                break (cand, cf, cgw, cgb);
            }
            t *= 0.5;
            if t < 1e-20 {
                break (model.clone(), f, gw.clone(), gb.clone());
            }
        };
        if t < 1e-20 {
            break;
        }
        step = t;
        model = next;
        f = nf;
        gw = ngw;
        gb = ngb;
        g2 = sq_norm(&gw, &gb);
        trace.push(f);
    }
    Ok(LogRegTrace {
        model,
        objective: trace,
        grad_norm: g2.sqrt(),
    })
}

/// Multinomial logistic regression by full-batch gradient descent with an
/// Armijo backtracking line search. Stops at gradient norm `1e-6` or
/// `max_iters` steps.
pub fn fit_logreg(x: &Array2<f64>, y: &[usize], n_classes: usize, l2: f64, max_iters: usize) -> Result<LogRegModel> {
    Ok(fit_logreg_traced(x, y, n_classes, l2, max_iters)?.model)
}

fn with_p_one(cfg: &EmConfig) -> EmConfig {
    EmConfig { p: 1.0, ..cfg.clone() }
}

/// Supervised mixture: the prediction-focused fit with every switch on.
pub fn fit_sup_gmm(data: &Dataset, cfg: &EmConfig) -> Result<FitResult<GmmParams>> {
    gmm::fit(data, &with_p_one(cfg))
}

/// Supervised HMM: the prediction-focused fit with every switch on.
pub fn fit_sup_hmm(data: &SequenceDataset, cfg: &EmConfig) -> Result<FitResult<HmmParams>> {
    hmm::hmm_fit(data, &with_p_one(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepGmm {
    pub gmm: GmmParams,
    pub phi: SwitchPosterior,
    pub logreg: LogRegModel,
}

impl TwoStepGmm {
    pub fn features(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(gmm::posterior_from_inputs(&self.gmm, &self.phi, x)?.as_array().clone())
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.logreg.predict_proba(&self.features(x)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepHmm {
    pub hmm: HmmParams,
    pub phi: SwitchPosterior,
    pub logreg: LogRegModel,
}

impl TwoStepHmm {
    pub fn features(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        hmm::state_marginals_from_inputs(&self.hmm, &self.phi, x)
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.logreg.predict_proba(&self.features(x)?)
    }
}

/// Unsupervised mixture on the inputs, then logistic regression on the
/// component posteriors. Returns the composite model and the step-one fit.
pub fn fit_2step(data: &Dataset, cfg: &EmConfig) -> Result<(TwoStepGmm, FitResult<GmmParams>)> {
    let y = data.labels()?;
    let fit = gmm::fit_with(data, &with_p_one(cfg), Targets::Ignored)?;
    let feats = gmm::posterior_from_inputs(&fit.params, &fit.phi, data.x())?;
    let logreg = fit_logreg(feats.as_array(), y, data.n_classes(), DEFAULT_L2, DEFAULT_LOGREG_ITERS)?;
    let model = TwoStepGmm {
        gmm: fit.params.clone(),
        phi: fit.phi.clone(),
        logreg,
    };
    Ok((model, fit))
}

/// Unsupervised HMM on the inputs, then logistic regression on the
/// per-step smoothed state marginals.
pub fn fit_2step_hmm(data: &SequenceDataset, cfg: &EmConfig) -> Result<(TwoStepHmm, FitResult<HmmParams>)> {
    if !data.is_labeled() {
        return Err(usage("operation requires labeled data"));
    }
    let fit = hmm::hmm_fit_with(data, &with_p_one(cfg), Targets::Ignored)?;
    let mut feats = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.total_steps());
    for seq in data.sequences() {
        feats.push(hmm::state_marginals_from_inputs(&fit.params, &fit.phi, &seq.x)?);
        labels.extend_from_slice(seq.y.as_deref().expect("labeled"));
    }
    let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
    let stacked = concatenate(Axis(0), &views).expect("features share K");
    let logreg = fit_logreg(&stacked, &labels, data.n_classes(), DEFAULT_L2, DEFAULT_LOGREG_ITERS)?;
    let model = TwoStepHmm {
        hmm: fit.params.clone(),
        phi: fit.phi.clone(),
        logreg,
    };
    Ok((model, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auroc;
    use crate::rng::SeededRng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn numeric_grad(model: &LogRegModel, x: &Array2<f64>, y: &[usize]) -> (Array2<f64>, Array1<f64>) {
        let h = 1e-6;
        let mut gw = Array2::zeros(model.weights.dim());
        for idx in ndarray::indices(model.weights.dim()) {
            let mut up = model.clone();
            up.weights[idx] += h;
            let mut down = model.clone();
            down.weights[idx] -= h;
            gw[idx] = (logreg_objective(&up, x, y).0 - logreg_objective(&down, x, y).0) / (2.0 * h);
        }
        let mut gb = Array1::zeros(model.bias.len());
        for c in 0..model.bias.len() {
            let mut up = model.clone();
            up.bias[c] += h;
            let mut down = model.clone();
            down.bias[c] -= h;
            gb[c] = (logreg_objective(&up, x, y).0 - logreg_objective(&down, x, y).0) / (2.0 * h);
        }
        (gw, gb)
    }

    fn noisy_three_class(rng: &mut SeededRng, n: usize) -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::new();
        for i in 0..n {
            let c = rng.index(3);
            x[[i, 0]] = c as f64 + rng.normal();
            x[[i, 1]] = (c == 1) as u8 as f64 + rng.normal();
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(1, 0);
        let (x, y) = noisy_three_class(&mut rng, 60);
        let model = LogRegModel {
            weights: Array2::from_shape_fn((3, 2), |_| rng.normal()),
            bias: Array1::from_shape_fn(3, |_| rng.normal()),
            l2: 0.1,
        };
        let (_, gw, gb) = logreg_objective(&model, &x, &y);
        let (nw, nb) = numeric_grad(&model, &x, &y);
        for (a, b) in gw.iter().zip(nw.iter()).chain(gb.iter().zip(nb.iter())) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn optimum_gradient_vanishes() {
        let mut rng = SeededRng::new(2, 0);
        let (x, y) = noisy_three_class(&mut rng, 200);
        let fit = fit_logreg_traced(&x, &y, 3, 1e-2, 20_000).unwrap();
        assert!(fit.grad_norm <= 1e-6, "gradient norm {}", fit.grad_norm);
        let (nw, nb) = numeric_grad(&fit.model, &x, &y);
        for g in nw.iter().chain(nb.iter()) {
            assert!(g.abs() <= 1e-5);
        }
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = SeededRng::new(3, 0);
        let (x, y) = noisy_three_class(&mut rng, 100);
        let fit = fit_logreg_traced(&x, &y, 3, DEFAULT_L2, 500).unwrap();
        for w in fit.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn separable_data_ranks_perfectly() {
        let x = array![[-3.0], [-2.0], [-1.5], [-0.5], [0.5], [1.0], [2.0], [4.0]];
        let y = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let m = fit_logreg(&x, &y, 2, 1e-2, 5000).unwrap();
        let p = m.predict_proba(&x).unwrap();
        assert_eq!(auroc(&p.column(1).to_vec(), &y).unwrap(), 1.0);
    }

    #[test]
    fn independent_labels_give_chance_auroc() {
        let mut rng = SeededRng::new(4, 0);
        let n = 4000;
        let x = Array2::from_shape_fn((n, 3), |_| rng.normal());
        let y: Vec<usize> = (0..n).map(|_| rng.index(2)).collect();
        let (train_x, test_x) = (x.slice(ndarray::s![..n / 2, ..]).to_owned(), x.slice(ndarray::s![n / 2.., ..]).to_owned());
        let m = fit_logreg(&train_x, &y[..n / 2], 2, DEFAULT_L2, 2000).unwrap();
        let p = m.predict_proba(&test_x).unwrap();
        let a = auroc(&p.column(1).to_vec(), &y[n / 2..]).unwrap();
        assert!((a - 0.5).abs() <= 0.05, "{a}");
    }

    #[test]
    fn rejects_non_finite_features() {
        let x = array![[1.0], [f64::NAN]];
        assert!(matches!(fit_logreg(&x, &[0, 1], 2, 0.0, 10), Err(crate::Error::Data(_))));
    }

    fn clustered(seed: u64, n: usize) -> Dataset {
        let mut rng = SeededRng::new(seed, 9);
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::new();
        for i in 0..n {
            let c = rng.index(2);
            x[[i, 0]] = 8.0 * c as f64 + rng.normal();
            x[[i, 1]] = -5.0 * c as f64 + rng.normal();
            y.push(c);
        }
        Dataset::new(x, Some(y), None).unwrap()
    }

    #[test]
    fn sup_gmm_is_pf_gmm_at_p_one() {
        let d = clustered(5, 150);
        let mut cfg = EmConfig::new(2, 0.3, 11);
        let a = fit_sup_gmm(&d, &cfg).unwrap();
        cfg.p = 1.0;
        let b = gmm::fit(&d, &cfg).unwrap();
        assert_eq!(a.elbo_trace, b.elbo_trace);
        assert_eq!(a.params, b.params);
        assert!(a.phi.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sup_hmm_is_pf_hmm_at_p_one() {
        let d = SequenceDataset::from_flat(&clustered(6, 60));
        let mut cfg = EmConfig::new(2, 0.3, 12);
        let a = fit_sup_hmm(&d, &cfg).unwrap();
        cfg.p = 1.0;
        let b = hmm::hmm_fit(&d, &cfg).unwrap();
        assert_eq!(a.elbo_trace, b.elbo_trace);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn two_step_single_component_predicts_prior() {
        let d = clustered(7, 200);
        let prior = d.labels().unwrap().iter().filter(|&&c| c == 1).count() as f64 / 200.0;
        let (m, _) = fit_2step(&d, &EmConfig::new(1, 1.0, 0)).unwrap();
        let p = m.predict_proba(d.x()).unwrap();
        for row in p.rows() {
            assert_abs_diff_eq!(row[1], prior, epsilon = 1e-4);
        }
    }

    #[test]
    fn two_step_recovers_cluster_classes() {
        let train = clustered(8, 300);
        let test = clustered(9, 300);
        let (m, _) = fit_2step(&train, &EmConfig::new(2, 1.0, 1)).unwrap();
        let p = m.predict_proba(test.x()).unwrap();
        assert!(auroc(&p.column(1).to_vec(), test.labels().unwrap()).unwrap() >= 0.95);
    }

    #[test]
    fn two_step_hmm_reduces_to_two_step_for_single_steps() {
        let d = clustered(10, 120);
        let cfg = EmConfig::new(2, 1.0, 3);
        let (a, fa) = fit_2step(&d, &cfg).unwrap();
        let (b, fb) = fit_2step_hmm(&SequenceDataset::from_flat(&d), &cfg).unwrap();
        assert_eq!(fa.elbo_trace, fb.elbo_trace);
        assert_eq!(a.logreg, b.logreg);
        let row = d.x().slice(ndarray::s![..1, ..]).to_owned();
        assert_eq!(a.predict_proba(&row).unwrap(), b.predict_proba(&row).unwrap());
    }
}
