//! Differentially private training and its privacy accountant.

mod accountant;
mod train;

pub use accountant::{
    calibrate_noise, compute_epsilon, default_orders, privacy_spent, rdp_sampled_gaussian, rdp_to_epsilon,
    PrivacySpent, CALIBRATION_TOLERANCE,
};
pub use train::{accounting_schedule, clip_params, dp_train, ClipAudit, DpConfig, DpOutcome};
