//! Attribute inference from explanations alone.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{SplitBundle, TabularDataset};
use crate::error::{Error, Result};
use crate::explain::ExplanationMatrix;
use crate::nn::{train, Activation, EarlyStopping, LayerSpec, MlpModel, Predictor, TrainConfig, TrainHistory};

/// Explanation features and sensitive labels for the two auxiliary halves.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackDataset {
    pub attribute: String,
    pub train_x: Array2<f64>,
    pub train_y: Vec<u8>,
    pub train_ids: Vec<u64>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<u8>,
    pub test_ids: Vec<u64>,
}

fn join(expl: &ExplanationMatrix, index: &HashMap<u64, usize>, part: &TabularDataset, attribute: &str) -> Result<(Array2<f64>, Vec<u8>)> {
    if part.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = part.sensitive_labels(attribute)?.to_vec();
    let rows: Vec<usize> = part
        .record_ids
        .iter()
        .map(|id| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Schema(format!("no explanation for record {id}")))
        })
        .collect::<Result<_>>()?;
    Ok((expl.values.select(Axis(0), &rows), labels))
}

/// Joins explanations to the auxiliary halves by record id. Predictions are
/// never part of the features.
pub fn build_attack_dataset(expl: &ExplanationMatrix, bundle: &SplitBundle, attribute: &str) -> Result<AttackDataset> {
    let index: HashMap<u64, usize> = expl.record_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    if index.len() != expl.record_ids.len() {
        return Err(Error::Schema("duplicate record ids in explanation matrix".into()));
    }
    let (train_x, train_y) = join(expl, &index, &bundle.aux_attack_train, attribute)?;
    let (test_x, test_y) = join(expl, &index, &bundle.aux_attack_test, attribute)?;
    Ok(AttackDataset {
        attribute: attribute.to_string(),
        train_x,
        train_y,
        train_ids: bundle.aux_attack_train.record_ids.clone(),
        test_x,
        test_y,
        test_ids: bundle.aux_attack_test.record_ids.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackModelSpec {
    pub hidden: Vec<usize>,
    pub l2: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Standardize explanation features with attack-train statistics.
    pub standardize: bool,
}

impl Default for AttackModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 128, 32],
            l2: 1e-3,
            max_epochs: 500,
            tolerance: 1e-4,
            patience: 10,
            learning_rate: 1e-3,
            batch_size: 200,
            standardize: true,
        }
    }
}

/// Attack classifier with its input standardization.
#[derive(Debug, Clone)]
pub struct AttackModel {
    pub mlp: MlpModel,
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    pub history: TrainHistory,
}

impl AttackModel {
    fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.mlp.predict_batch(self.transform(x).view())
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<u8> {
        self.predict_proba(x).iter().map(|&p| u8::from(p >= 0.5)).collect()
    }
}

pub fn train_attack(ads: &AttackDataset, spec: &AttackModelSpec, seed: u64) -> Result<AttackModel> {
    if ads.train_x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = ads.train_x.ncols();
    let (mean, scale) = if spec.standardize {
        let mean = ads.train_x.mean_axis(Axis(0)).expect("nonempty");
        let scale = ads.train_x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        (mean, scale)
    } else {
        (Array1::zeros(d), Array1::ones(d))
    };
    let x = (&ads.train_x - &mean) / &scale;
    let mut layers = LayerSpec::relu_stack(&spec.hidden);
    layers.push(LayerSpec::new(1, Activation::Sigmoid));
    let mut mlp = MlpModel::new(d, &layers, seed)?;
    let cfg = TrainConfig {
        epochs: spec.max_epochs,
        learning_rate: spec.learning_rate,
        batch_size: spec.batch_size,
        l2: spec.l2,
        early_stopping: Some(EarlyStopping { tolerance: spec.tolerance, patience: spec.patience }),
    };
    let history = train(&mut mlp, x.view(), &ads.train_y, &cfg, seed)?;
    Ok(AttackModel { mlp, mean, scale, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(preds: &[u8], labels: &[u8]) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::Dimension { expected: labels.len(), got: preds.len() });
        }
        if preds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0 };
        for (&p, &y) in preds.iter().zip(labels) {
            match (p != 0, y != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub attack_success: f64,
    /// No positive predictions; precision reported as 0.
    pub precision_undefined: bool,
    /// No positive labels; recall reported as 0.
    pub recall_undefined: bool,
    pub counts: ConfusionCounts,
}

impl AttackMetrics {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            attack_success: ratio(c.tp + c.tn, c.total()),
            precision_undefined: c.tp + c.fp == 0,
            recall_undefined: c.tp + c.fn_ == 0,
            counts: c,
        }
    }
}

pub fn attack_metrics(preds: &[u8], labels: &[u8]) -> Result<AttackMetrics> {
    Ok(AttackMetrics::from_counts(ConfusionCounts::from_predictions(preds, labels)?))
}

/// Accuracy of always guessing the majority label.
pub fn random_guess_baseline(labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = labels.iter().filter(|&&v| v != 0).count() as f64 / labels.len() as f64;
    Ok(p.max(1.0 - p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub seed: u64,
    pub metrics: AttackMetrics,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub sensitive_attribute: String,
    pub repetitions: Vec<Repetition>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub attack_success: f64,
    /// Majority-class prior on attack-test labels.
    pub random_guess: f64,
    pub random_guess_uniform: f64,
}

impl AttackReport {
    pub fn from_repetitions(attribute: &str, repetitions: Vec<Repetition>, random_guess: f64) -> Self {
        let n = repetitions.len().max(1) as f64;
        let mean = |f: fn(&AttackMetrics) -> f64| repetitions.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        Self {
            sensitive_attribute: attribute.to_string(),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            attack_success: mean(|m| m.attack_success),
            random_guess,
            random_guess_uniform: 0.5,
            repetitions,
        }
    }
}

/// One repetition: train on attack-train, score on attack-test.
pub fn attack_once(ads: &AttackDataset, spec: &AttackModelSpec, seed: u64) -> Result<Repetition> {
    let model = train_attack(ads, spec, seed)?;
    let preds = model.predict(ads.test_x.view());
    Ok(Repetition {
        seed,
        metrics: attack_metrics(&preds, &ads.test_y)?,
        epochs: model.history.epoch_loss.len(),
    })
}

/// Repeats the attack once per seed and reports the mean.
pub fn run_attack(ads: &AttackDataset, spec: &AttackModelSpec, seeds: &[u64]) -> Result<AttackReport> {
    let reps = seeds.iter().map(|&s| attack_once(ads, spec, s)).collect::<Result<Vec<_>>>()?;
    Ok(AttackReport::from_repetitions(&ads.attribute, reps, random_guess_baseline(&ads.test_y)?))
}
