//! Flat and sequence datasets.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{data, usage, Result};
use crate::rng::SeededRng;

/// `N × D` observations with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Option<Vec<usize>>,
    n_classes: usize,
}

fn check_finite(x: &ArrayView2<f64>) -> Result<()> {
    if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(data(format!("non-finite value {v} at row {i}, column {j}")));
    }
    Ok(())
}

fn resolve_classes(labels: Option<&[usize]>, n_classes: Option<usize>) -> Result<usize> {
    let observed = labels.and_then(|y| y.iter().max()).map_or(0, |m| m + 1);
    match n_classes {
        Some(c) if c < observed => Err(data(format!(
            "label {} out of range for {c} classes",
            observed - 1
        ))),
        Some(c) => Ok(c),
        None => Ok(observed.max(2)),
    }
}

impl Dataset {
    /// Build a dataset. `n_classes` defaults to `max(label) + 1` (at least 2).
    pub fn new(x: Array2<f64>, y: Option<Vec<usize>>, n_classes: Option<usize>) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(data("dataset needs at least one feature column"));
        }
        check_finite(&x.view())?;
        if let Some(labels) = &y {
            if labels.len() != x.nrows() {
                return Err(data(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    x.nrows()
                )));
            }
        }
        let n_classes = resolve_classes(y.as_deref(), n_classes)?;
        Ok(Dataset { x, y, n_classes })
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> Option<&[usize]> {
        self.y.as_deref()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.y().ok_or_else(|| usage("operation requires labeled data"))
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.as_ref().map(|y| rows.iter().map(|&i| y[i]).collect()),
            n_classes: self.n_classes,
        }
    }

    /// Shuffle rows with `seed` and cut at `first_fraction`.
    pub fn split(&self, first_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let (a, b) = split_indices(self.len(), first_fraction, seed)?;
        Ok((self.subset(&a), self.subset(&b)))
    }
}

/// One observed sequence: `T × D` inputs and optional per-step labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub x: Array2<f64>,
    pub y: Option<Vec<usize>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    sequences: Vec<Sequence>,
    dim: usize,
    n_classes: usize,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Sequence>, n_classes: Option<usize>) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| data("sequence dataset is empty"))?;
        let dim = first.x.ncols();
        if dim == 0 {
            return Err(data("sequences need at least one feature column"));
        }
        let labeled = first.y.is_some();
        let mut max_label = None;
        for (i, s) in sequences.iter().enumerate() {
            if s.x.nrows() == 0 {
                return Err(data(format!("sequence {i} is empty")));
            }
            if s.x.ncols() != dim {
                return Err(data(format!(
                    "sequence {i} has {} columns, expected {dim}",
                    s.x.ncols()
                )));
            }
            check_finite(&s.x.view())
                .map_err(|e| data(format!("sequence {i}: {e}")))?;
            match &s.y {
                Some(y) if y.len() != s.x.nrows() => {
                    return Err(data(format!("sequence {i}: label length mismatch")))
                }
                Some(y) => max_label = max_label.max(y.iter().copied().max()),
                None if labeled => return Err(data(format!("sequence {i} is unlabeled"))),
                None => {}
            }
            if s.y.is_some() != labeled {
                return Err(data(format!("sequence {i}: mixed labeled and unlabeled")));
            }
        }
        let observed: Vec<usize> = max_label.into_iter().collect();
        let n_classes = resolve_classes(labeled.then_some(&observed[..]), n_classes)?;
        Ok(SequenceDataset {
            sequences,
            dim,
            n_classes,
        })
    }

    /// Every row of a flat dataset becomes a length-one sequence.
    pub fn from_flat(flat: &Dataset) -> Self {
        let sequences = (0..flat.len())
            .map(|i| Sequence {
                x: flat.x.slice(ndarray::s![i..i + 1, ..]).to_owned(),
                y: flat.y.as_ref().map(|y| vec![y[i]]),
            })
            .collect();
        SequenceDataset {
            sequences,
            dim: flat.dim(),
            n_classes: flat.n_classes,
        }
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.sequences[0].y.is_some()
    }

    pub fn total_steps(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    /// All time steps stacked in sequence order.
    pub fn flatten(&self) -> Dataset {
        let views: Vec<_> = self.sequences.iter().map(|s| s.x.view()).collect();
        let x = concatenate(Axis(0), &views).expect("sequences share a column count");
        let y = self.is_labeled().then(|| {
            self.sequences
                .iter()
                .flat_map(|s| s.y.as_ref().unwrap().iter().copied())
                .collect()
        });
        Dataset {
            x,
            y,
            n_classes: self.n_classes,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> SequenceDataset {
        SequenceDataset {
            sequences: idx.iter().map(|&i| self.sequences[i].clone()).collect(),
            dim: self.dim,
            n_classes: self.n_classes,
        }
    }

    /// Split by whole sequences.
    pub fn split(&self, first_fraction: f64, seed: u64) -> Result<(SequenceDataset, SequenceDataset)> {
        let (a, b) = split_indices(self.len(), first_fraction, seed)?;
        Ok((self.subset(&a), self.subset(&b)))
    }
}

/// Stream id reserved for train/validation/test shuffles.
const SPLIT_STREAM: u64 = 0x5350_4c49_54;

/// Shuffled index split. Both parts are nonempty.
pub fn split_indices(n: usize, first_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(first_fraction > 0.0 && first_fraction < 1.0) {
        return Err(usage(format!("split fraction {first_fraction} not in (0, 1)")));
    }
    if n < 2 {
        return Err(usage("need at least two items to split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::new(seed, SPLIT_STREAM).shuffle(&mut idx);
    let cut = ((n as f64 * first_fraction).round() as usize).clamp(1, n - 1);
    let second = idx.split_off(cut);
    Ok((idx, second))
}

/// Generator-side truth attached to synthetic datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `relevance[d]` is true iff dimension `d` carries label information.
    pub relevance: Vec<bool>,
    /// Relevant-block component (or state) per row / time step.
    pub relevant_component: Vec<usize>,
    /// Irrelevant-block component (or state) per row / time step.
    pub irrelevant_component: Vec<usize>,
    /// `P(y = 1)` per relevant component or state, when the generator has one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_probs: Vec<f64>,
}
