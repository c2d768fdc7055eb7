//! Numerically stable densities and reductions shared by every model.
//!
//! Everything here works in log space. Probabilities are only exponentiated
//! after normalization (responsibilities, predictive distributions).

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Floor applied to categorical probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-10;

/// Lower bound on every variance the library produces.
pub const VAR_FLOOR: f64 = 1e-6;

const SIMPLEX_TOL: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A log-probability or unnormalized log-density. Never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogProb(f64);

impl LogProb {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::Numeric("log-probability is NaN".into()));
        }
        Ok(LogProb(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Simplex(Vec<f64>);

impl Simplex {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(usage("simplex must have at least one entry"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(usage("simplex entries must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(usage(format!("simplex entries sum to {total}, not 1")));
        }
        Ok(Simplex(weights))
    }

    /// Normalize nonnegative weights. Fails if they sum to zero.
    pub fn normalize(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(usage("cannot normalize weights with zero or non-finite total"));
        }
        for w in &mut weights {
            *w /= total;
        }
        Simplex::new(weights)
    }

    pub fn uniform(len: usize) -> Self {
        Simplex(vec![1.0 / len as f64; len])
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

impl TryFrom<Vec<f64>> for Simplex {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Simplex::new(v)
    }
}

impl From<Simplex> for Vec<f64> {
    fn from(s: Simplex) -> Vec<f64> {
        s.0
    }
}

/// `log Σ exp(v_i)` with max-shift. Returns `-inf` iff every entry is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(usage("log_sum_exp of an empty vector"));
    }
    Ok(lse(v))
}

/// Infallible variant for internal hot loops; `v` must be nonempty.
#[inline]
pub(crate) fn lse(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Overwrite `v` with `exp(v - lse(v))` and return `lse(v)`.
#[inline]
pub(crate) fn normalize_log_in_place(v: &mut [f64]) -> f64 {
    let total = lse(v);
    for x in v.iter_mut() {
        *x = (*x - total).exp();
    }
    total
}

/// Univariate normal log-density. `var` must be positive (unchecked).
#[inline]
pub(crate) fn normal_ln(x: f64, mean: f64, var: f64) -> f64 {
    let diff = x - mean;
    -0.5 * (LN_2PI + var.ln()) - diff * diff / (2.0 * var)
}

/// Diagonal-covariance Gaussian log-density.
pub fn diag_gaussian_log_pdf(x: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
    if x.len() != mean.len() || x.len() != var.len() {
        return Err(usage("dimension mismatch in diag_gaussian_log_pdf"));
    }
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("variance must be positive, got {v}")));
    }
    Ok(x.iter()
        .zip(mean)
        .zip(var)
        .map(|((&xi, &mi), &vi)| normal_ln(xi, mi, vi))
        .sum())
}

/// `ln max(p, PROB_FLOOR)`.
#[inline]
pub(crate) fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Log-probability of class `y` under `probs`, with the probability floor applied.
pub fn categorical_log_pmf(y: usize, probs: &Simplex) -> Result<LogProb> {
    let p = probs
        .as_slice()
        .get(y)
        .ok_or_else(|| usage(format!("class {y} out of range for {} classes", probs.len())))?;
    LogProb::new(floored_ln(*p))
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `a * ln(b / a)` with the convention `0 * ln(·) = 0`.
#[inline]
pub(crate) fn xlog_ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (b / a).ln()
    }
}

/// Mean and biased variance of a column, variance floored.
pub(crate) fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / n as f64).max(VAR_FLOOR))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn lse_examples() {
        assert_eq!(log_sum_exp(&[0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        // 1000.5 + ln(1 + e^-0.5), evaluated with ln_1p around the larger term
        let oracle = 1000.5 + (-0.5f64).exp().ln_1p();
        assert_abs_diff_eq!(log_sum_exp(&[1000.0, 1000.5]).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn lse_edge_cases() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::Usage(_))));
        let ninf = f64::NEG_INFINITY;
        assert_eq!(log_sum_exp(&[ninf, ninf]).unwrap(), ninf);
        assert_eq!(log_sum_exp(&[ninf, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_examples() {
        assert_abs_diff_eq!(
            diag_gaussian_log_pdf(&[0.0], &[0.0], &[1.0]).unwrap(),
            -0.918_938_533_204_672_7,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            diag_gaussian_log_pdf(&[1.0], &[0.0], &[1.0]).unwrap(),
            -1.418_938_533_204_672_7,
            epsilon = 1e-12
        );
        let x = [0.3, -1.2, 2.5];
        let m = [0.1, 0.4, -0.7];
        let v = [0.5, 2.0, 1.3];
        let per_dim: f64 = (0..3)
            .map(|d| diag_gaussian_log_pdf(&x[d..=d], &m[d..=d], &v[d..=d]).unwrap())
            .sum();
        assert_abs_diff_eq!(diag_gaussian_log_pdf(&x, &m, &v).unwrap(), per_dim, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_rejects_nonpositive_variance() {
        assert!(matches!(
            diag_gaussian_log_pdf(&[0.0], &[0.0], &[0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            diag_gaussian_log_pdf(&[0.0], &[0.0], &[-1.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gaussian_integrates_to_one() {
        for &(mean, var) in &[(0.0, 1.0), (2.5, 0.3), (-1.0, 4.0)] {
            let sd: f64 = f64::sqrt(var);
            let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
            let steps = 20_000;
            let h = (hi - lo) / steps as f64;
            let mut total = 0.0;
            for i in 0..=steps {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                total += w * diag_gaussian_log_pdf(&[x], &[mean], &[var]).unwrap().exp();
            }
            assert_abs_diff_eq!(total * h, 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn categorical_examples() {
        let certain = Simplex::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(categorical_log_pmf(0, &certain).unwrap().value(), 0.0);
        assert_abs_diff_eq!(
            categorical_log_pmf(1, &certain).unwrap().value(),
            PROB_FLOOR.ln(),
            epsilon = 1e-12
        );
        let half = Simplex::new(vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(
            categorical_log_pmf(1, &half).unwrap().value(),
            -0.693_147_180_559_945_3,
            epsilon = 1e-12
        );
        let skew = Simplex::new(vec![0.25, 0.75]).unwrap();
        assert_abs_diff_eq!(
            categorical_log_pmf(1, &skew).unwrap().value(),
            0.75f64.ln(),
            epsilon = 1e-15
        );
        assert!(matches!(categorical_log_pmf(2, &skew), Err(Error::Usage(_))));
    }

    #[test]
    fn simplex_validation() {
        assert!(Simplex::new(vec![0.5, 0.5]).is_ok());
        assert!(Simplex::new(vec![0.5, 0.6]).is_err());
        assert!(Simplex::new(vec![1.5, -0.5]).is_err());
        assert!(Simplex::new(vec![]).is_err());
        assert!(Simplex::new(vec![f64::NAN, 1.0]).is_err());
        assert!(Simplex::normalize(vec![0.0, 0.0]).is_err());
        let s = Simplex::normalize(vec![1.0, 3.0]).unwrap();
        assert_eq!(s.as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn log_prob_rejects_nan() {
        assert!(LogProb::new(f64::NAN).is_err());
        assert!(LogProb::new(f64::NEG_INFINITY).is_ok());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_abs_diff_eq!(sigmoid(2.0) + sigmoid(-2.0), 1.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn lse_shift_invariance(
            v in prop::collection::vec(-50.0f64..50.0, 1..20),
            c in -500.0f64..500.0,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = log_sum_exp(&shifted).unwrap();
            let rhs = log_sum_exp(&v).unwrap() + c;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn lse_bounds(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let l = log_sum_exp(&v).unwrap();
            prop_assert!(l >= max - 1e-12);
            prop_assert!(l <= max + (v.len() as f64).ln() + 1e-12);
        }
    }
}
