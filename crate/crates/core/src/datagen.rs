//! Seeded synthetic data.
//!
//! Row draws use stream 0 of the seed; generator parameters (label
//! probabilities, transition matrices) use stream 1.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroundTruth, Sequence, SequenceDataset};
use crate::error::{usage, Result};
use crate::rng::SeededRng;

const ROW_STREAM: u64 = 0;
const PARAM_STREAM: u64 = 1;

/// Five inputs and a binary label. Dimension 0 is `N(6y, 1)` given the
/// label; dimensions 1..5 share an independent binary cluster `c` and are
/// `N(mu·c, I)`. Larger `mu` makes the irrelevant clusters more prominent.
pub fn gen_analysis_dataset(n: usize, mu: f64, seed: u64) -> Result<(Dataset, GroundTruth)> {
    if n == 0 {
        return Err(usage("n must be at least 1"));
    }
    if !mu.is_finite() {
        return Err(usage("mu must be finite"));
    }
    let mut rng = SeededRng::new(seed, ROW_STREAM);
    let mut x = Array2::zeros((n, 5));
    let mut y = Vec::with_capacity(n);
    let mut noise_cluster = Vec::with_capacity(n);
    for i in 0..n {
        let c1 = rng.bernoulli(0.5) as usize;
        x[[i, 0]] = 6.0 * c1 as f64 + rng.normal();
        let c2 = rng.bernoulli(0.5) as usize;
        for d in 1..5 {
            x[[i, d]] = mu * c2 as f64 + rng.normal();
        }
        y.push(c1);
        noise_cluster.push(c2);
    }
    let truth = GroundTruth {
        relevance: vec![true, false, false, false, false],
        relevant_component: y.clone(),
        irrelevant_component: noise_cluster,
        label_probs: vec![0.0, 1.0],
    };
    Ok((Dataset::new(x, Some(y), Some(2))?, truth))
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSweepSpec {
    pub k_true: usize,
    pub d: usize,
    pub d_rel: usize,
    pub gap: f64,
    pub seed: u64,
}

impl GmmSweepSpec {
    /// Ten components per block, 100 dimensions, spacing 6.
    pub fn new(d_rel: usize, seed: u64) -> Self {
        GmmSweepSpec {
            k_true: 10,
            d: 100,
            d_rel,
            gap: 6.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_true == 0 {
            return Err(usage("k_true must be positive"));
        }
        if self.d_rel == 0 || self.d_rel > self.d {
            return Err(usage(format!("need 1 <= d_rel <= d, got d_rel = {}, d = {}", self.d_rel, self.d)));
        }
        if !(self.gap > 0.0 && self.gap.is_finite()) {
            return Err(usage("gap must be positive"));
        }
        Ok(())
    }

    pub fn theta_rel(&self) -> Vec<f64> {
        normalized((0..self.k_true).map(|k| 0.5 + k as f64).collect())
    }

    pub fn theta_irrel(&self) -> Vec<f64> {
        normalized((0..self.k_true).map(|k| 1.0 + k as f64).collect())
    }

    /// Per-component `P(y = 1)`, each 0.05 or 0.95. Draws whose implied
    /// label mean falls outside `[0.1, 0.9]` are redrawn.
    pub fn label_probs(&self) -> Vec<f64> {
        let theta = self.theta_rel();
        let mut rng = SeededRng::new(self.seed, PARAM_STREAM);
        loop {
            let p: Vec<f64> = (0..self.k_true)
                .map(|_| if rng.bernoulli(0.5) { 0.95 } else { 0.05 })
                .collect();
            let mean: f64 = theta.iter().zip(&p).map(|(t, q)| t * q).sum();
            if (0.1..=0.9).contains(&mean) {
                return p;
            }
        }
    }
}

/// Relevant block (first `d_rel` dims) and label share one component index;
/// the remaining dims follow an independent component index. Component `k`
/// has mean `k·gap` in each dimension of its block and unit variance.
pub fn gen_gmm_sweep(spec: &GmmSweepSpec, n: usize) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    if n == 0 {
        return Err(usage("n must be at least 1"));
    }
    let theta_rel = spec.theta_rel();
    let theta_irrel = spec.theta_irrel();
    let p = spec.label_probs();
    let mut rng = SeededRng::new(spec.seed, ROW_STREAM);
    let mut x = Array2::zeros((n, spec.d));
    let mut y = Vec::with_capacity(n);
    let mut rel = Vec::with_capacity(n);
    let mut irrel = Vec::with_capacity(n);
    for i in 0..n {
        let zr = rng.categorical(&theta_rel);
        for d in 0..spec.d_rel {
            x[[i, d]] = spec.gap * zr as f64 + rng.normal();
        }
        y.push(rng.bernoulli(p[zr]) as usize);
        let zi = rng.categorical(&theta_irrel);
        for d in spec.d_rel..spec.d {
            x[[i, d]] = spec.gap * zi as f64 + rng.normal();
        }
        rel.push(zr);
        irrel.push(zi);
    }
    let truth = GroundTruth {
        relevance: (0..spec.d).map(|d| d < spec.d_rel).collect(),
        relevant_component: rel,
        irrelevant_component: irrel,
        label_probs: p,
    };
    Ok((Dataset::new(x, Some(y), Some(2))?, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmSweepSpec {
    pub k_true: usize,
    pub d: usize,
    pub d_rel: usize,
    pub seed: u64,
    pub p_vec: Vec<f64>,
    pub a_rel: Array2<f64>,
    pub a_irrel: Array2<f64>,
}

fn sticky_transitions(k: usize, base: f64, rng: &mut SeededRng) -> Array2<f64> {
    let mut a = Array2::from_elem((k, k), base);
    for j in 0..k {
        a[[j, j]] += 1.0;
        a[[j, rng.index(k)]] += 1.0;
    }
    for mut row in a.rows_mut() {
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    a
}

impl HmmSweepSpec {
    /// Four states per chain, 20 dimensions, label probabilities
    /// `[.05, .95, .05, .95]`. Transition rows are `base + e_j + e_{z_j}`
    /// normalized, with `z_j` uniform and `base` 0.1 (relevant) or 0.01.
    pub fn new(d_rel: usize, seed: u64) -> Self {
        let k = 4;
        let mut rng = SeededRng::new(seed, PARAM_STREAM);
        let a_rel = sticky_transitions(k, 0.1, &mut rng);
        let a_irrel = sticky_transitions(k, 0.01, &mut rng);
        HmmSweepSpec {
            k_true: k,
            d: 20,
            d_rel,
            seed,
            p_vec: vec![0.05, 0.95, 0.05, 0.95],
            a_rel,
            a_irrel,
        }
    }

    /// Initial-state distribution of both chains, `normalize(1..=K)`.
    pub fn theta(&self) -> Vec<f64> {
        normalized((1..=self.k_true).map(|k| k as f64).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k_true;
        if k == 0 {
            return Err(usage("k_true must be positive"));
        }
        if self.d_rel == 0 || self.d_rel > self.d {
            return Err(usage(format!("need 1 <= d_rel <= d, got d_rel = {}, d = {}", self.d_rel, self.d)));
        }
        if self.p_vec.len() != k || self.p_vec.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(usage("p_vec must hold K probabilities"));
        }
        for a in [&self.a_rel, &self.a_irrel] {
            if a.dim() != (k, k) {
                return Err(usage("transition matrices must be K x K"));
            }
            for row in a.rows() {
                crate::stats::Simplex::new(row.to_vec())?;
            }
        }
        Ok(())
    }
}

/// Two independent chains: the relevant chain emits the first `d_rel` dims
/// and the label; the other chain emits the rest. State `k` has mean `6k`.
pub fn gen_hmm_sweep(spec: &HmmSweepSpec, n_seqs: usize, t: usize) -> Result<(SequenceDataset, GroundTruth)> {
    spec.validate()?;
    if n_seqs == 0 || t == 0 {
        return Err(usage("need at least one sequence of length at least one"));
    }
    let theta = spec.theta();
    let mut rng = SeededRng::new(spec.seed, ROW_STREAM);
    let mut seqs = Vec::with_capacity(n_seqs);
    let mut rel = Vec::with_capacity(n_seqs * t);
    let mut irrel = Vec::with_capacity(n_seqs * t);
    for _ in 0..n_seqs {
        let mut x = Array2::zeros((t, spec.d));
        let mut y = Vec::with_capacity(t);
        let mut zr = 0;
        let mut zi = 0;
        for step in 0..t {
            if step == 0 {
                zr = rng.categorical(&theta);
                zi = rng.categorical(&theta);
            } else {
                zr = rng.categorical(&spec.a_rel.row(zr).to_vec());
                zi = rng.categorical(&spec.a_irrel.row(zi).to_vec());
            }
            for d in 0..spec.d {
                let state = if d < spec.d_rel { zr } else { zi };
                x[[step, d]] = 6.0 * state as f64 + rng.normal();
            }
            y.push(rng.bernoulli(spec.p_vec[zr]) as usize);
            rel.push(zr);
            irrel.push(zi);
        }
        seqs.push(Sequence { x, y: Some(y) });
    }
    let truth = GroundTruth {
        relevance: (0..spec.d).map(|d| d < spec.d_rel).collect(),
        relevant_component: rel,
        irrelevant_component: irrel,
        label_probs: spec.p_vec.clone(),
    };
    Ok((SequenceDataset::new(seqs, Some(2))?, truth))
}
