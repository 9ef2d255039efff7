use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackModelSpec;
use crate::data::{ColumnKind, ColumnRole, ColumnSchema, Criterion, PreprocessSpec, SensitiveSpec};
use crate::error::{Error, Result};
use crate::explain::{ExplainerConfig, Method};
use crate::faithfulness::FaithfulnessConfig;
use crate::nn::{Architecture, TrainConfig};
use crate::noise::NoiseSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Largest ε in the "reasonable" tier.
pub const EPSILON_CEILING: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Baseline,
    Pre,
    In,
    Post,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Baseline, Stage::Pre, Stage::In, Stage::Post];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::Pre => "pre",
            Stage::In => "in",
            Stage::Post => "post",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    pub kind: ColumnKind,
}

/// DP-SGD hyperparameters for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpHyper {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub microbatch_size: usize,
    pub l2_clip: f64,
    pub delta: f64,
}

impl Default for DpHyper {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 15e-5,
            batch_size: 48,
            microbatch_size: 12,
            l2_clip: 1e-5,
            delta: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    pub columns: Vec<ColumnDecl>,
    pub target: String,
    pub target_positive: Criterion,
    pub sensitive: Vec<SensitiveSpec>,
    #[serde(default)]
    pub dp: DpHyper,
}

impl DatasetConfig {
    pub fn schema(&self) -> Vec<ColumnSchema> {
        self.columns
            .iter()
            .map(|c| {
                let role = if c.name == self.target {
                    ColumnRole::Target
                } else if self.sensitive.iter().any(|s| s.attribute == c.name) {
                    ColumnRole::Sensitive
                } else {
                    ColumnRole::Feature
                };
                ColumnSchema::new(c.name.clone(), c.kind, role)
            })
            .collect()
    }

    pub fn preprocess_spec(&self) -> PreprocessSpec {
        PreprocessSpec {
            target_positive: self.target_positive.clone(),
            sensitive: self.sensitive.clone(),
        }
    }

    pub fn attributes(&self) -> Vec<String> {
        self.sensitive.iter().map(|s| s.attribute.clone()).collect()
    }

    fn validate(&self) -> Result<()> {
        let names: BTreeSet<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        if names.len() != self.columns.len() {
            return Err(Error::Config(format!("dataset `{}`: duplicate column names", self.name)));
        }
        if !names.contains(self.target.as_str()) {
            return Err(Error::Config(format!("dataset `{}`: target `{}` not declared", self.name, self.target)));
        }
        if self.sensitive.is_empty() {
            return Err(Error::Config(format!("dataset `{}`: no sensitive attributes", self.name)));
        }
        for s in &self.sensitive {
            if !names.contains(s.attribute.as_str()) {
                return Err(Error::MissingAttribute(s.attribute.clone()));
            }
        }
        let dp = &self.dp;
        if dp.microbatch_size == 0 || dp.batch_size % dp.microbatch_size != 0 {
            return Err(Error::Config(format!(
                "dataset `{}`: microbatch size {} must divide batch size {}",
                self.name, dp.microbatch_size, dp.batch_size
            )));
        }
        if !(dp.l2_clip > 0.0) || !(dp.delta > 0.0 && dp.delta < 1.0) || dp.epochs == 0 {
            return Err(Error::Config(format!("dataset `{}`: invalid DP hyperparameters", self.name)));
        }
        crate::data::validate_schema(&self.schema())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetModelConfig {
    pub architecture: Architecture,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for TargetModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Standard,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreStageConfig {
    pub generators: Vec<String>,
    /// Generator count used in the campaign arithmetic, when it differs from
    /// the number of live generators.
    pub declared_generators: Option<usize>,
    /// Synthetic rows; the training-split size when absent.
    pub sample_size: Option<usize>,
}

impl Default for PreStageConfig {
    fn default() -> Self {
        Self {
            generators: vec!["copula".into()],
            declared_generators: None,
            sample_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InStageConfig {
    pub epsilon_targets: Vec<f64>,
    pub noise_multipliers: Vec<f64>,
}

impl Default for InStageConfig {
    fn default() -> Self {
        Self {
            epsilon_targets: vec![0.01, 0.1, 1.0, 5.0],
            noise_multipliers: Vec::new(),
        }
    }
}

/// One DP-training variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DpVariant {
    EpsilonTarget(f64),
    NoiseMultiplier(f64),
}

impl DpVariant {
    pub fn label(&self) -> String {
        match self {
            DpVariant::EpsilonTarget(e) => format!("eps={e}"),
            DpVariant::NoiseMultiplier(n) => format!("nm={n}"),
        }
    }
}

impl InStageConfig {
    pub fn variants(&self) -> Vec<DpVariant> {
        if self.noise_multipliers.is_empty() {
            self.epsilon_targets.iter().map(|&e| DpVariant::EpsilonTarget(e)).collect()
        } else {
            self.noise_multipliers.iter().map(|&n| DpVariant::NoiseMultiplier(n)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostStageConfig {
    pub variants: Vec<String>,
    pub epsilon: f64,
    pub delta: f64,
    pub random_scale_range: (f64, f64),
}

impl Default for PostStageConfig {
    fn default() -> Self {
        Self {
            variants: ["dp-laplace", "dp-gaussian", "random-laplace", "random-gaussian"]
                .map(String::from)
                .to_vec(),
            epsilon: 1.0,
            delta: 1e-6,
            random_scale_range: (0.5, 1.5),
        }
    }
}

impl PostStageConfig {
    /// Noise specs in declared order; seeds are set per repetition by the runner.
    pub fn specs(&self) -> Result<Vec<NoiseSpec>> {
        self.variants
            .iter()
            .map(|v| {
                let mut spec: NoiseSpec = v.parse()?;
                spec.epsilon = self.epsilon;
                spec.delta = self.delta;
                spec.random_scale_range = self.random_scale_range;
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub stages: Vec<Stage>,
    pub explainers: Vec<Method>,
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub target_model: TargetModelConfig,
    #[serde(default)]
    pub explainer: ExplainerConfig,
    #[serde(default)]
    pub attack: AttackModelSpec,
    #[serde(default)]
    pub faithfulness: FaithfulnessConfig,
    #[serde(default)]
    pub pre: PreStageConfig,
    #[serde(default, rename = "in")]
    pub in_model: InStageConfig,
    #[serde(default)]
    pub post: PostStageConfig,
}

fn default_name() -> String {
    "campaign".into()
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_repetitions() -> usize {
    5
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses and validates a config file; relative dataset and output paths
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.explainers.is_empty() {
            return Err(Error::Config("explainer list is empty".into()));
        }
        if self.explainers.iter().collect::<BTreeSet<_>>().len() != self.explainers.len() {
            return Err(Error::Config("explainer list has duplicates".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("stage list is empty".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("dataset list is empty".into()));
        }
        if self.datasets.iter().map(|d| &d.name).collect::<BTreeSet<_>>().len() != self.datasets.len() {
            return Err(Error::Config("dataset names must be unique".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        for d in &self.datasets {
            d.validate()?;
        }
        self.target_model.train.validate()?;
        self.explainer.validate()?;
        if self.stages.contains(&Stage::Pre) {
            if self.pre.generators.is_empty() {
                return Err(Error::Config("pre stage needs at least one generator".into()));
            }
            if let Some(g) = self.pre.generators.iter().find(|g| g.as_str() != "copula") {
                return Err(Error::Config(format!("unknown generator `{g}`; only `copula` is available")));
            }
        }
        if self.stages.contains(&Stage::In) {
            let i = &self.in_model;
            if i.epsilon_targets.is_empty() == i.noise_multipliers.is_empty() && !i.noise_multipliers.is_empty() {
                return Err(Error::Config("give either epsilon_targets or noise_multipliers, not both".into()));
            }
            if i.variants().is_empty() {
                return Err(Error::Config("in stage needs epsilon targets or noise multipliers".into()));
            }
            if let Some(e) = i.epsilon_targets.iter().find(|&&e| !(e > 0.0 && e <= EPSILON_CEILING)) {
                return Err(Error::Config(format!("epsilon target {e} outside (0, {EPSILON_CEILING}]")));
            }
            if let Some(n) = i.noise_multipliers.iter().find(|&&n| !(n > 0.0)) {
                return Err(Error::Config(format!("noise multiplier {n} must be positive")));
            }
        }
        if self.stages.contains(&Stage::Post) {
            if self.post.variants.is_empty() {
                return Err(Error::Config("post stage needs at least one noise variant".into()));
            }
            self.post.specs()?;
        }
        Ok(())
    }
}
