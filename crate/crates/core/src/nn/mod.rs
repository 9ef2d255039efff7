//! Dense feed-forward classifier trained with Adam on binary cross-entropy.

mod model;
mod train;

pub use model::{
    sigmoid, Activation, Architecture, Dense, Differentiable, LayerSpec, MlpModel, Params, Predictor,
};
pub use train::{evaluate, train, Adam, EarlyStopping, TrainConfig, TrainHistory};
#[allow(unused_imports)]
pub(crate) use train::{check_inputs, labels_f64, StopRule};
