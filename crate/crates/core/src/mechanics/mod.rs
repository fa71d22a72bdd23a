//! Contact-mechanics kernel: closed-form indentation force templates, the
//! stretch/diameter modulus model fitted from characterization records, and
//! leave-one-out validation of that model.
//!
//! Interface units are mm / kPa / N; all internal evaluation is SI.

mod hertz;
mod loo;
mod modulus;
mod records;

pub use hertz::{hertz_cone, hertz_cylinder, hertz_sphere, HertzParams, ObjectElasticity};
pub use loo::{loo_validate, LooReport};
#[cfg(test)]
pub(crate) use modulus::estimate_force_unguarded;
pub use modulus::{
    build_modulus_model, estimate_force, fit_modulus, invert_depth, read_calib, write_calib,
    ModulusFit, ModulusModel, StretchCurve, StretchRow, DEFAULT_MIN_FIT_DEPTH_MM,
};
pub use records::{
    format_records, parse_records, read_records, write_records, IndentationRecord, ProbeGeometry,
};

/// Ideal-rubber Poisson ratio assumed for the membrane material.
pub const MEMBRANE_POISSON: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MechanicsError {
    #[error("invalid input: {name} = {value}")]
    BadInput { name: &'static str, value: f64 },
    #[error("{what}: need at least {needed}, got {got}")]
    InsufficientData { what: &'static str, needed: usize, got: usize },
    #[error("fit diverged: {0}")]
    FitDiverged(String),
    #[error("model rejected: {0}")]
    ModelRejected(String),
    #[error("{name} = {value} outside supported range [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
