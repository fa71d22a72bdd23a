//! Membrane perception: depth frames to labeled contact patches.
//!
//! Pipeline: mask the raw frame to the membrane interior, lift it into the
//! membrane frame (z positive toward the camera), estimate per-pixel normals,
//! form the two curvature signals, segment into undeformed / deformed /
//! contact, extract the dominant contact patch, then measure it (sphere fit,
//! through-centroid diameters).

mod cloud;
mod fit;
mod frame;
mod segment;

pub use cloud::{
    curvature_signals, estimate_normals, format_labeled_cloud, labeled_rows, median3_denoise,
    parse_labeled_cloud, read_labeled_cloud, to_membrane_frame, write_labeled_cloud,
    LabeledCloudRow, MembraneCloud, LABELED_CLOUD_HEADER,
};
pub use fit::{fit_sphere, measure_diameters, DiameterMeasure, SphereFit};
pub use frame::{
    format_depth_frame, mask_membrane, parse_depth_frame, read_depth_frame, write_depth_frame,
    DepthFrame, DEPTH_FRAME_HEADER,
};
pub use segment::{
    calibrate_k_threshold, extract_contact, segment, ContactExtraction, ContactPatch, Label,
};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid frame: {0}")]
    BadFrame(String),
    #[error("{name} = {value} outside supported range [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("normal window must be odd and >= 3, got {0}")]
    BadWindow(usize),
    #[error("pipeline stage missing: {0} (run it first)")]
    MissingStage(&'static str),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("{what}: need at least {needed}, got {got}")]
    InsufficientData { what: &'static str, needed: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tunables of the sensing stack. The curvature threshold and noise level are
/// calibrated together: `calibrate_k_threshold` picks the smallest threshold
/// that sensor noise alone exceeds in at most 0.1% of pixels, before the flat
/// band removes near-rest pixels, so flat scenes come in far under the 0.1%
/// contact false-positive budget. The default below is that value frozen for
/// the default noise level and window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingConfig {
    /// Camera-to-rest-plane distance, mm.
    pub rest_depth_mm: f64,
    /// Depth noise sigma, mm (3 sigma ~ +/- 1 mm sensor band).
    pub noise_sigma_mm: f64,
    /// Independent frames averaged per observation (temporal filtering);
    /// per-pixel noise shrinks by sqrt of this.
    pub frames_averaged: usize,
    /// Run a 3x3 median over the lifted heights before the normal stage.
    pub median_prefilter: bool,
    /// Side of the square least-squares plane window for normals (odd).
    pub normal_window: usize,
    /// |z| below this is Undeformed, mm.
    pub flat_band_mm: f64,
    /// Curvature signal threshold separating contact from mere deformation.
    pub k_threshold: f64,
    /// Margin cropped off every frame edge by the membrane mask, mm.
    pub mask_margin_mm: f64,
    /// Contact-plane slack when growing a patch across flat faces, mm.
    pub plane_slack_mm: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            rest_depth_mm: 100.0,
            noise_sigma_mm: 0.33,
            frames_averaged: 1,
            median_prefilter: true,
            normal_window: 11,
            flat_band_mm: 1.0,
            k_threshold: DEFAULT_K_THRESHOLD,
            mask_margin_mm: 5.0,
            plane_slack_mm: 0.2,
        }
    }
}

impl SensingConfig {
    /// Per-pixel noise after temporal averaging.
    pub fn effective_sigma_mm(&self) -> f64 {
        self.noise_sigma_mm / (self.frames_averaged.max(1) as f64).sqrt()
    }

    /// The curvature statistic is linear in depth noise, so the calibrated
    /// single-frame threshold scales down with temporal averaging.
    pub fn effective_k_threshold(&self) -> f64 {
        self.k_threshold / (self.frames_averaged.max(1) as f64).sqrt()
    }
}

/// Frozen output of `calibrate_k_threshold(100, 100, default config,
/// 100 frames, seed 20260301)`. The noise statistic behind it is independent
/// of pixel pitch to first order, so one frozen value serves every task
/// resolution.
pub const DEFAULT_K_THRESHOLD: f64 = 0.0606;

/// Mask, lift, denoise, orient, and label a raw frame in one call.
pub fn process_frame(
    frame: &DepthFrame,
    config: &SensingConfig,
) -> Result<MembraneCloud, GeometryError> {
    let masked = mask_membrane(frame, config.mask_margin_mm)?;
    let mut cloud = to_membrane_frame(&masked, config.rest_depth_mm);
    if config.median_prefilter {
        median3_denoise(&mut cloud);
    }
    estimate_normals(&mut cloud, config.normal_window)?;
    curvature_signals(&mut cloud)?;
    segment(&mut cloud, config.effective_k_threshold(), config.flat_band_mm)?;
    Ok(cloud)
}
