//! Simulation and perception toolkit for a stretch-tunable tactile membrane.
//!
//! A soft membrane is held between two gripper fingers; varying the finger
//! separation pre-tensions it, which tunes its effective contact stiffness.
//! A depth camera views the membrane from behind, so pressing it onto an
//! object yields both an imprint geometry and (through a calibrated modulus
//! model) an estimate of the load force. The crate covers, in dependency
//! order:
//!
//! * [`mechanics`] - closed-form force templates and the stretch/diameter
//!   modulus model fitted from characterization sweeps;
//! * [`geometry`] - depth-frame masking, membrane-frame clouds, normals,
//!   curvature signals, contact segmentation and patch measurement;
//! * [`sim`] - a quasi-static membrane simulator standing in for the physical
//!   device: pre-strained spring grid, rigid/deformable obstacles, depth
//!   rendering and characterization sweeps;
//! * [`palpation`] - stiffness probing by stretch escalation;
//! * [`shaping`] - dough rolling and the cookie roundness score;
//! * [`reconstruction`] - merging contact patches into world-frame clouds.

pub mod geometry;
pub mod grid;
pub mod mechanics;
pub mod palpation;
pub mod rng;
pub mod sim;

/// Membrane sheet width (unstretched direction), mm.
pub const REST_WIDTH_MM: f64 = 100.0;
/// Membrane sheet length between the grippers at zero stretch, mm.
pub const REST_LENGTH_MM: f64 = 90.0;
/// Length of sheet actually free to stretch; the grippers clamp the rest.
/// Strain is reported against this span (60 mm of stretch = 0.8).
pub const FREE_SPAN_MM: f64 = 75.0;
/// Largest supported stretch, mm.
pub const MAX_STRETCH_MM: f64 = 80.0;
/// Largest supported indentation depth, mm.
pub const MAX_DEPTH_MM: f64 = 15.0;
/// Membrane thickness, mm (geometry bookkeeping only).
pub const MEMBRANE_THICKNESS_MM: f64 = 2.0;
