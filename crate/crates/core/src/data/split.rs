use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encode::{FeatureKind, TabularDataset};
use crate::error::{Error, Result};

/// Target-model training part plus the two halves of the auxiliary set
/// used to train and test the attack model.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub target_train: TabularDataset,
    pub aux_attack_train: TabularDataset,
    pub aux_attack_test: TabularDataset,
    pub seed: u64,
}

/// Sizes (train, attack-train, attack-test) for `n` rows: 67% floor for
/// training, remainder halved with the odd row going to attack-test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 67 / 100;
    let rest = n - train;
    let attack_train = rest / 2;
    (train, attack_train, rest - attack_train)
}

/// Uniform shuffle split, deterministic in `seed`.
pub fn split(ds: &TabularDataset, seed: u64) -> Result<SplitBundle> {
    if ds.len() < 6 {
        return Err(Error::Config(format!(
            "split needs at least 6 rows, got {}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_atk_train, _) = split_sizes(ds.len());
    let (train, rest) = order.split_at(n_train);
    let (atk_train, atk_test) = rest.split_at(n_atk_train);
    Ok(SplitBundle {
        target_train: ds.select(train),
        aux_attack_train: ds.select(atk_train),
        aux_attack_test: ds.select(atk_test),
        seed,
    })
}

impl SplitBundle {
    /// Re-derives min-max scaling of continuous columns from the training part
    /// only, applies it to all three parts (clamped to [0, 1]) and updates the
    /// encoding so decoding still yields raw units.
    pub fn refit_scaling(mut self) -> SplitBundle {
        let mut enc = self.target_train.encoding.clone();
        let train = &self.target_train.x;
        let mut remaps = Vec::new();
        for (k, feat) in enc.features.iter_mut().enumerate() {
            if let FeatureKind::Continuous { min, max, .. } = &mut feat.kind {
                let col = train.column(k);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                // current scaled value s maps to raw min + s*(max-min)
                let (old_min, old_span) = (*min, *max - *min);
                let new_min = old_min + lo * old_span;
                let new_max = old_min + hi * old_span;
                *min = new_min;
                *max = new_max;
                remaps.push((k, lo, hi));
            }
        }
        for part in [
            &mut self.target_train,
            &mut self.aux_attack_train,
            &mut self.aux_attack_test,
        ] {
            for &(k, lo, hi) in &remaps {
                part.x.column_mut(k).mapv_inplace(|s| {
                    if hi > lo {
                        ((s - lo) / (hi - lo)).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                });
            }
            part.encoding = enc.clone();
        }
        self
    }

    pub fn total_len(&self) -> usize {
        self.target_train.len() + self.aux_attack_train.len() + self.aux_attack_test.len()
    }
}
