use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{FeatureKind, TabularDataset};

/// How LIME perturbs one block of features.
#[derive(Debug, Clone, PartialEq)]
pub enum PerturbGroup {
    /// Gaussian noise with the training standard deviation.
    Continuous { index: usize, std: f64 },
    /// Resampled from training frequencies; `probs[k]` is the probability that
    /// `indices[k]` is the hot column, the remainder leaves the block at zero.
    Categorical { indices: Vec<usize>, probs: Vec<f64> },
}

/// Training-data summaries used by the perturbation-based explainers.
#[derive(Debug, Clone)]
pub struct ExplainContext {
    /// Background rows for KernelSHAP.
    pub background: Array2<f64>,
    pub groups: Vec<PerturbGroup>,
}

fn column_std(x: ArrayView2<'_, f64>, j: usize) -> f64 {
    x.column(j).std(0.0)
}

fn pick_background(x: ArrayView2<'_, f64>, size: usize, seed: u64) -> Array2<f64> {
    let n = x.nrows();
    if size >= n {
        return x.to_owned();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

impl ExplainContext {
    /// Uses the encoding to treat one-hot and binary columns categorically.
    pub fn from_dataset(ds: &TabularDataset, background_size: usize, seed: u64) -> Self {
        let mut groups = Vec::new();
        for (_, idx) in ds.encoding.groups() {
            let kind = &ds.encoding.features[idx[0]].kind;
            match kind {
                FeatureKind::Continuous { .. } => groups.push(PerturbGroup::Continuous {
                    index: idx[0],
                    std: column_std(ds.x.view(), idx[0]),
                }),
                _ => {
                    let n = ds.len().max(1) as f64;
                    let probs = idx
                        .iter()
                        .map(|&j| ds.x.column(j).iter().filter(|&&v| v >= 0.5).count() as f64 / n)
                        .collect();
                    groups.push(PerturbGroup::Categorical { indices: idx, probs });
                }
            }
        }
        Self {
            background: pick_background(ds.x.view(), background_size, seed),
            groups,
        }
    }

    /// Treats every column as continuous.
    pub fn from_matrix(x: ArrayView2<'_, f64>, background_size: usize, seed: u64) -> Self {
        let groups = (0..x.ncols())
            .map(|j| PerturbGroup::Continuous { index: j, std: column_std(x, j) })
            .collect();
        Self {
            background: pick_background(x, background_size, seed),
            groups,
        }
    }

    pub fn with_background(mut self, background: Array2<f64>) -> Self {
        self.background = background;
        self
    }

    pub fn n_features(&self) -> usize {
        self.background.ncols()
    }
}
