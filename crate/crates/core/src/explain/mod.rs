//! Feature attributions: Integrated Gradients, SmoothGrad, KernelSHAP, LIME.

mod context;
mod gradient;
mod lime;
mod matrix;
mod shap;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use context::{ExplainContext, PerturbGroup};
pub use gradient::{explain_ig, explain_sg, IgRule};
pub use lime::{explain_lime, lime_fit, LimeFit};
pub use matrix::{explain_dataset, explain_rows, ExplanationMatrix, ExplanationMeta};
pub use shap::{brute_force_shapley, explain_shap, shapley_values, Coalitions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "IG")]
    Ig,
    #[serde(rename = "SG")]
    Sg,
    #[serde(rename = "SHAP")]
    Shap,
    #[serde(rename = "LIME")]
    Lime,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ig, Method::Sg, Method::Shap, Method::Lime];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ig => "IG",
            Method::Sg => "SG",
            Method::Shap => "SHAP",
            Method::Lime => "LIME",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IG" => Ok(Method::Ig),
            "SG" => Ok(Method::Sg),
            "SHAP" => Ok(Method::Shap),
            "LIME" => Ok(Method::Lime),
            other => Err(Error::Config(format!("unknown explainer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub ig_steps: usize,
    pub ig_rule: IgRule,
    /// All-zeros when absent.
    pub ig_baseline: Option<Vec<f64>>,
    pub sg_samples: usize,
    pub sg_sigma: f64,
    pub shap_background_size: usize,
    pub shap_coalitions: Coalitions,
    pub lime_samples: usize,
    /// 0.75·sqrt(d) when absent.
    pub lime_kernel_width: Option<f64>,
    /// d when absent.
    pub lime_top_k: Option<usize>,
    pub lime_ridge: f64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            ig_steps: 64,
            ig_rule: IgRule::Left,
            ig_baseline: None,
            sg_samples: 25,
            sg_sigma: 0.1,
            shap_background_size: 100,
            shap_coalitions: Coalitions::Sampled(2048),
            lime_samples: 1000,
            lime_kernel_width: None,
            lime_top_k: None,
            lime_ridge: 1.0,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("ig_steps", self.ig_steps),
            ("sg_samples", self.sg_samples),
            ("shap_background_size", self.shap_background_size),
            ("lime_samples", self.lime_samples),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if let Coalitions::Sampled(0 | 1) = self.shap_coalitions {
            return Err(Error::Config("shap_coalitions must be at least 2".into()));
        }
        if !(self.sg_sigma > 0.0) {
            return Err(Error::Config("sg_sigma must be positive".into()));
        }
        if let Some(w) = self.lime_kernel_width {
            if !(w > 0.0) {
                return Err(Error::Config("lime_kernel_width must be positive".into()));
            }
        }
        if self.lime_top_k == Some(0) {
            return Err(Error::Config("lime_top_k must be at least 1".into()));
        }
        if self.lime_ridge < 0.0 {
            return Err(Error::Config("lime_ridge must be non-negative".into()));
        }
        Ok(())
    }

    /// Hex digest of the settings that affect `method`.
    pub fn digest(&self, method: Method) -> String {
        let relevant = match method {
            Method::Ig => serde_json::json!({"steps": self.ig_steps, "rule": self.ig_rule, "baseline": self.ig_baseline}),
            Method::Sg => serde_json::json!({"samples": self.sg_samples, "sigma": self.sg_sigma}),
            Method::Shap => serde_json::json!({"background": self.shap_background_size, "coalitions": self.shap_coalitions}),
            Method::Lime => serde_json::json!({
                "samples": self.lime_samples,
                "width": self.lime_kernel_width,
                "top_k": self.lime_top_k,
                "ridge": self.lime_ridge,
            }),
        };
        let text = format!("{method}:{relevant}");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use ndarray::{Array1, Array2};

    use crate::nn::{Activation, Dense, MlpModel};

    /// Single-unit model `act(w·x + c)`.
    pub fn linear_model(w: &[f64], c: f64, act: Activation) -> MlpModel {
        let d = w.len();
        let layer = Dense {
            weights: Array2::from_shape_vec((d, 1), w.to_vec()).unwrap(),
            bias: Array1::from_elem(1, c),
            activation: act,
        };
        MlpModel::from_layers(d, vec![layer], 0).unwrap()
    }
}
