//! Exact marginal likelihood by enumerating switch configurations.
//!
//! Here the switches are shared by every datum: one `ξ ∈ {0,1}^D` for the
//! whole dataset. Each configuration's per-(row, component) log-density is
//! assembled from two precomputed half tables (low and high dimensions), so
//! the cost is `O(2^D · N · K)` after an `O(2^{D/2} · N · K · D)` setup.

use ndarray::Array2;

use super::{check_finite_rows, check_labels, GmmParams};
use crate::error::{usage, Result};
use crate::stats::{lse, normal_ln};

/// Largest dimension accepted by the enumeration routines.
pub const MAX_ENUM_DIM: usize = 20;

struct SwitchTables {
    n: usize,
    k: usize,
    lo_bits: usize,
    /// `lo[mask][n * K + k]`: Σ over low dims of signal (bit set) or noise log-density.
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
}

impl SwitchTables {
    fn build(params: &GmmParams, x: &Array2<f64>) -> Self {
        let (n, dim) = x.dim();
        let k = params.n_components();
        let signal = |row: usize, comp: usize, d: usize| {
            normal_ln(x[[row, d]], params.b_mean[[comp, d]], params.b_var[[comp, d]])
        };
        let noise = |row: usize, d: usize| normal_ln(x[[row, d]], params.pi_mean[d], params.pi_var[d]);
        let lo_bits = dim / 2;
        let table = |dims: std::ops::Range<usize>| -> Vec<Vec<f64>> {
            let bits = dims.len();
            (0..1usize << bits)
                .map(|mask| {
                    let mut v = vec![0.0; n * k];
                    for row in 0..n {
                        for comp in 0..k {
                            v[row * k + comp] = dims
                                .clone()
                                .enumerate()
                                .map(|(b, d)| {
                                    if mask >> b & 1 == 1 {
                                        signal(row, comp, d)
                                    } else {
                                        noise(row, d)
                                    }
                                })
                                .sum();
                        }
                    }
                    v
                })
                .collect()
        };
        SwitchTables {
            n,
            k,
            lo_bits,
            lo: table(0..lo_bits),
            hi: table(lo_bits..dim),
        }
    }

    /// Visit every configuration with its `ln p(ξ)` and the `N·K` table of
    /// `ln p(x_n | ξ, Z = k)`. Configurations with zero prior mass are skipped.
    fn for_each(&self, dim: usize, p: f64, mut f: impl FnMut(f64, &[f64])) {
        let lo_mask = (1usize << self.lo_bits) - 1;
        let mut buf = vec![0.0; self.n * self.k];
        for mask in 0..1usize << dim {
            let on = mask.count_ones() as usize;
            let off = dim - on;
            if (p == 0.0 && on > 0) || (p == 1.0 && off > 0) {
                continue;
            }
            let mut ln_prior = 0.0;
            if on > 0 {
                ln_prior += on as f64 * p.ln();
            }
            if off > 0 {
                ln_prior += off as f64 * (1.0 - p).ln();
            }
            let lo = &self.lo[mask & lo_mask];
            let hi = &self.hi[mask >> self.lo_bits];
            for ((b, l), h) in buf.iter_mut().zip(lo).zip(hi) {
                *b = l + h;
            }
            f(ln_prior, &buf);
        }
    }
}

fn check_enum_inputs(params: &GmmParams, p: f64, x: &Array2<f64>, y: Option<&[usize]>) -> Result<()> {
    params.validate()?;
    if x.ncols() != params.dim() {
        return Err(usage("data and parameters disagree on dimension"));
    }
    if params.dim() > MAX_ENUM_DIM {
        return Err(usage(format!(
            "exact enumeration supports D <= {MAX_ENUM_DIM}, got {}; use the ELBO instead",
            params.dim()
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(usage(format!("switch prior p = {p} not in [0, 1]")));
    }
    check_finite_rows(&x.view())?;
    check_labels(y, x.nrows(), params.n_classes())
}

/// Per-row `ln Σ_k θ_k [η_{k,y}] exp(table[n,k])`.
fn row_mixture_lse(
    table: &[f64],
    ln_theta: &[f64],
    ln_eta: &Array2<f64>,
    y: Option<&[usize]>,
    n: usize,
    scratch: &mut [f64],
) -> f64 {
    let k = ln_theta.len();
    for comp in 0..k {
        let mut s = ln_theta[comp] + table[n * k + comp];
        if let Some(y) = y {
            s += ln_eta[[comp, y[n]]];
        }
        scratch[comp] = s;
    }
    lse(scratch)
}

/// `ln p(X, Y)` with switches shared across the dataset, by enumeration.
///
/// With `y = None` this is `ln p(X)`.
pub fn exact_log_joint(params: &GmmParams, p: f64, x: &Array2<f64>, y: Option<&[usize]>) -> Result<f64> {
    check_enum_inputs(params, p, x, y)?;
    let tables = SwitchTables::build(params, x);
    let ln_theta = params.ln_theta();
    let ln_eta = params.ln_eta();
    let mut scratch = vec![0.0; params.n_components()];
    let mut terms = Vec::new();
    tables.for_each(params.dim(), p, |ln_prior, table| {
        let data: f64 = (0..x.nrows())
            .map(|n| row_mixture_lse(table, &ln_theta, &ln_eta, y, n, &mut scratch))
            .sum();
        terms.push(ln_prior + data);
    });
    Ok(lse(&terms))
}

/// Three-term lower bound on the exact log joint:
/// `E_{p(ξ)}[ln p(Y | X, ξ)] + p · E_{p(Z)}[ln p_B(X | Z)] + (1 - p) · ln p_π(X)`.
pub fn alt_bound_objective(params: &GmmParams, p: f64, x: &Array2<f64>, y: &[usize]) -> Result<f64> {
    check_enum_inputs(params, p, x, Some(y))?;
    let tables = SwitchTables::build(params, x);
    let ln_theta = params.ln_theta();
    let ln_eta = params.ln_eta();
    let mut scratch = vec![0.0; params.n_components()];
    let mut conditional = 0.0;
    tables.for_each(params.dim(), p, |ln_prior, table| {
        let weight = ln_prior.exp();
        if weight == 0.0 {
            return;
        }
        let ll: f64 = (0..x.nrows())
            .map(|n| {
                row_mixture_lse(table, &ln_theta, &ln_eta, Some(y), n, &mut scratch)
                    - row_mixture_lse(table, &ln_theta, &ln_eta, None, n, &mut scratch)
            })
            .sum();
        conditional += weight * ll;
    });

    let theta = params.theta.as_slice();
    let mut signal = 0.0;
    let mut noise = 0.0;
    for row in x.rows() {
        for (d, &xv) in row.iter().enumerate() {
            noise += normal_ln(xv, params.pi_mean[d], params.pi_var[d]);
            for (k, &t) in theta.iter().enumerate() {
                signal += t * normal_ln(xv, params.b_mean[[k, d]], params.b_var[[k, d]]);
            }
        }
    }
    let mut bound = conditional;
    if p > 0.0 {
        bound += p * signal;
    }
    if p < 1.0 {
        bound += (1.0 - p) * noise;
    }
    Ok(bound)
}
