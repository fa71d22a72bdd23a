//! Quasi-static stand-in for the physical hand: a pre-strained spring-grid
//! membrane pressed onto rigid probes, spring-backed bodies, or plastic
//! dough, plus the orthographic depth camera that observes it.
//!
//! The sheet is a regular node grid with vertical degrees of freedom only.
//! Pre-strain keeps every spring in tension, so the flat sheet is a stable
//! equilibrium and indentation stiffness is tension-dominated. Stretching
//! the sheet raises spring tension geometrically (the gripper axis is
//! mounted slack and pulls taut), with an optional material factor
//! `(1 + stiffen_coeff * stretch / rest_length)` whose tuned value is 0;
//! the sheet constants in `sheet` were frozen by the tuning diagnostics in
//! this module so that the calibrated effective modulus lands on the
//! device's published endpoints.

mod dough;
mod protocol;
mod scene;
mod shape;
mod sheet;

pub use dough::{DoughField, DoughParams};
pub use protocol::{
    format_protocol, parse_protocol, run_characterization, Protocol, ProtocolGeometry,
};
pub use scene::{GroundTruth, RenderConfig, SceneObject, SceneState};
pub use shape::{Body, Shape};
pub use sheet::{MembraneSheet, SheetParams, SolveStats};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid shape: {name} = {value}")]
    BadShape { name: &'static str, value: f64 },
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("solver failed to converge: residual {residual_n:.3e} N after {iters} iterations")]
    NonConvergence { residual_n: f64, iters: usize },
    #[error("protocol parse error at line {line}: {msg}")]
    BadProtocol { line: usize, msg: String },
    #[error("scene has no object under the membrane span")]
    NoObject,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Vertical clearance above the table within which object tops are traced.
pub(crate) const ENVELOPE_CEILING_MM: f64 = 60.0;

/// Columns the object misses use this as their "surface": far enough below
/// that the constraint can never activate.
pub(crate) const NO_SURFACE_MM: f64 = -1e6;
