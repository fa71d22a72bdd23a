//! Active stiffness palpation: estimate the object's contact radius at zero
//! stretch, then escalate stretch and indentation with a monotonically
//! increasing applied-force schedule until the object is sensed to yield, and
//! report the proxy stiffness F*/deflection.
//!
//! The loop is closed through perception: the object height is re-measured
//! from rendered depth frames after every press, never read from simulator
//! state. A commanded descent splits into membrane indentation and object
//! yield; the yield share is what the height sensor sees, and the indentation
//! share is what the force model is fed at the trigger state.

use std::fmt::Write as _;
use std::path::Path;

use std::collections::HashSet;

use crate::geometry::{
    extract_contact, fit_sphere, mask_membrane, measure_diameters, median3_denoise, process_frame,
    to_membrane_frame, ContactPatch, GeometryError, Label, MembraneCloud, SensingConfig,
};
use crate::grid::Grid2;
use crate::mechanics::{estimate_force, invert_depth, MechanicsError, ModulusModel};
use crate::sim::{RenderConfig, SceneState, SimError};
use crate::MAX_DEPTH_MM;

/// Sensor noise band the deflection threshold must clear, mm.
pub const NOISE_BAND_MM: f64 = 1.0;
/// Largest stretch a palpation schedule may command, mm.
pub const MAX_SCHEDULE_STRETCH_MM: f64 = 60.0;
/// Sphere fits flatter than this radius are treated as degenerate and fall
/// back to the patch-extent radius.
const FLAT_FIT_RADIUS_MM: f64 = 100.0;
/// Sphere fits with a worse point-to-surface residual than this are treated
/// as degenerate (genuine caps fit to about the pixel noise level).
const MAX_FIT_RMS_MM: f64 = 0.5;
/// Rim pixels peeled off the curvature core before the sphere fit. The
/// contact label smears a few pixels past the true contact edge (median
/// filter plus finite curvature windows), and the smeared rim is nearly
/// conical, which flattens the fit.
const FIT_ERODE_RINGS: usize = 3;
/// Erosion backs off ring by ring until at least this many pixels survive.
const MIN_ERODED_PIXELS: usize = 24;
/// Half-width of the box window behind the apex-height statistic, px.
const APEX_WINDOW: i64 = 3;

#[derive(Debug, thiserror::Error)]
pub enum PalpationError {
    #[error("no contact at the full radius-probe depth; no object under the hand")]
    NoObject,
    #[error("invalid palpation config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mechanics(#[from] MechanicsError),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PalpationConfig {
    /// Sensed height drop that counts as yield, mm; must clear the sensor
    /// noise band.
    pub deflection_threshold_mm: f64,
    /// Zero-stretch press depth behind the radius estimate, mm.
    pub radius_probe_depth_mm: f64,
    /// Stretch states visited in order, mm; strictly increasing.
    pub stretch_schedule_mm: Vec<f64>,
    /// Deepest commanded descent per stretch state, mm.
    pub max_depth_mm: f64,
    /// Commanded descent increment within one stretch state, mm.
    pub depth_step_mm: f64,
    pub sensing: SensingConfig,
    pub render: RenderConfig,
}

impl Default for PalpationConfig {
    fn default() -> Self {
        Self {
            deflection_threshold_mm: 1.5,
            radius_probe_depth_mm: 10.0,
            stretch_schedule_mm: (0..=6).map(|k| 10.0 * k as f64).collect(),
            max_depth_mm: MAX_DEPTH_MM,
            depth_step_mm: 1.0,
            // Height reads difference two apex statistics; averaging a few
            // frames keeps that difference well inside the noise band that
            // the deflection threshold must clear.
            sensing: SensingConfig { frames_averaged: 4, ..SensingConfig::default() },
            render: RenderConfig::default(),
        }
    }
}

impl PalpationConfig {
    pub fn validate(&self) -> Result<(), PalpationError> {
        if !(self.deflection_threshold_mm > NOISE_BAND_MM) {
            return Err(PalpationError::BadConfig(format!(
                "deflection threshold {} mm must exceed the {} mm sensor noise band",
                self.deflection_threshold_mm, NOISE_BAND_MM
            )));
        }
        if !(self.radius_probe_depth_mm > 0.0 && self.radius_probe_depth_mm <= MAX_DEPTH_MM) {
            return Err(PalpationError::BadConfig(format!(
                "radius probe depth {} mm outside (0, {}]",
                self.radius_probe_depth_mm, MAX_DEPTH_MM
            )));
        }
        if !(self.max_depth_mm >= self.radius_probe_depth_mm && self.max_depth_mm <= MAX_DEPTH_MM)
        {
            return Err(PalpationError::BadConfig(format!(
                "max depth {} mm outside [probe depth, {}]",
                self.max_depth_mm, MAX_DEPTH_MM
            )));
        }
        if !(self.depth_step_mm > 0.0 && self.depth_step_mm.is_finite()) {
            return Err(PalpationError::BadConfig(format!(
                "depth step {} mm must be positive",
                self.depth_step_mm
            )));
        }
        if self.stretch_schedule_mm.is_empty() {
            return Err(PalpationError::BadConfig("empty stretch schedule".into()));
        }
        for pair in self.stretch_schedule_mm.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(PalpationError::BadConfig(format!(
                    "stretch schedule must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        for &x in &self.stretch_schedule_mm {
            if !(0.0..=MAX_SCHEDULE_STRETCH_MM).contains(&x) {
                return Err(PalpationError::BadConfig(format!(
                    "scheduled stretch {x} mm outside [0, {MAX_SCHEDULE_STRETCH_MM}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusEstimate {
    /// Contact radius from the zero-stretch probe press, mm.
    pub r_star_mm: f64,
    /// True when the sphere fit was degenerate (flat or near-flat patch) and
    /// the radius fell back to half the larger patch extent.
    pub from_extent: bool,
}

/// One visited state of the palpation loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub x_mm: f64,
    /// Commanded descent past first touch, mm.
    pub depth_mm: f64,
    /// Sensed object height above the table, mm.
    pub height_mm: f64,
    /// Model force at the commanded state, N.
    pub f_star_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessEstimate {
    /// Proxy stiffness F*/deflection, N/mm.
    pub stiffness_n_per_mm: f64,
    /// Model force through the membrane indentation share of the terminal
    /// descent (commanded depth minus sensed drop), N.
    pub f_star_n: f64,
    /// Sensed height drop at the trigger state, mm.
    pub deflection_mm: f64,
    pub radius: RadiusEstimate,
    /// Radius the force queries actually used: the estimate clamped into the
    /// model's guarded diameter range.
    pub r_star_used_mm: f64,
    pub terminal_x_mm: f64,
    pub terminal_depth_mm: f64,
    pub trace: Vec<TraceStep>,
}

/// Schedule exhausted without sensing yield: the object is stiffer than the
/// hand can measure, and the trace bounds its stiffness from below.
#[derive(Debug, Clone, PartialEq)]
pub struct TooStiffReport {
    /// Largest applied model force over the deflection threshold, N/mm.
    pub stiffness_lower_bound_n_per_mm: f64,
    pub f_star_max_n: f64,
    pub radius: RadiusEstimate,
    pub r_star_used_mm: f64,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PalpationOutcome {
    Estimate(StiffnessEstimate),
    TooStiff(TooStiffReport),
}

impl PalpationOutcome {
    pub fn trace(&self) -> &[TraceStep] {
        match self {
            PalpationOutcome::Estimate(e) => &e.trace,
            PalpationOutcome::TooStiff(t) => &t.trace,
        }
    }

    pub fn radius(&self) -> RadiusEstimate {
        match self {
            PalpationOutcome::Estimate(e) => e.radius,
            PalpationOutcome::TooStiff(t) => t.radius,
        }
    }
}

/// Maximum of the box-averaged height field. Averaging before taking the
/// maximum keeps the statistic from riding the upper tail of the pixel noise
/// the way a raw per-pixel max would.
fn apex_height(z: &Grid2<f64>) -> f64 {
    let rows = z.rows() as i64;
    let cols = z.cols() as i64;
    let mut best = f64::NEG_INFINITY;
    for i in 0..rows {
        for j in 0..cols {
            let mut sum = 0.0;
            let mut n = 0.0;
            for ii in (i - APEX_WINDOW).max(0)..=(i + APEX_WINDOW).min(rows - 1) {
                for jj in (j - APEX_WINDOW).max(0)..=(j + APEX_WINDOW).min(cols - 1) {
                    sum += z[(ii as usize, jj as usize)];
                    n += 1.0;
                }
            }
            best = best.max(sum / n);
        }
    }
    best
}

/// Sensed object height above the table: commanded hand position (known from
/// proprioception) plus the membrane apex read from a rendered frame.
fn sense_height(scene: &mut SceneState, config: &PalpationConfig) -> Result<f64, PalpationError> {
    let frame = scene.render_depth_averaged(
        &config.render,
        config.sensing.noise_sigma_mm,
        config.sensing.frames_averaged,
    )?;
    let masked = mask_membrane(&frame, config.sensing.mask_margin_mm)?;
    let mut cloud = to_membrane_frame(&masked, config.sensing.rest_depth_mm);
    if config.sensing.median_prefilter {
        median3_denoise(&mut cloud);
    }
    Ok(scene.first_touch_height_mm() - scene.indent_mm() + apex_height(&cloud.z_mm))
}

/// Curvature-labeled core of the patch, eroded to shed the smeared rim.
/// Backs off to lighter erosion on small patches; `None` means too few core
/// pixels survive for a stable fit.
fn sphere_fit_region(patch: &ContactPatch, cloud: &MembraneCloud) -> Option<ContactPatch> {
    let labels = cloud.labels.as_ref()?;
    let core: Vec<(usize, usize)> = patch
        .pixels
        .iter()
        .copied()
        .filter(|&(i, j)| labels[(i, j)] == Label::Contact)
        .collect();
    let set: HashSet<(usize, usize)> = core.iter().copied().collect();
    for rings in (0..=FIT_ERODE_RINGS as i64).rev() {
        let kept: Vec<(usize, usize)> = core
            .iter()
            .copied()
            .filter(|&(i, j)| {
                ((i as i64 - rings)..=(i as i64 + rings)).all(|ii| {
                    ((j as i64 - rings)..=(j as i64 + rings)).all(|jj| {
                        ii >= 0 && jj >= 0 && set.contains(&(ii as usize, jj as usize))
                    })
                })
            })
            .collect();
        if kept.len() >= MIN_ERODED_PIXELS {
            let points: Vec<[f64; 3]> = kept.iter().map(|&(i, j)| cloud.point(i, j)).collect();
            let n = points.len() as f64;
            let mut centroid = [0.0; 3];
            for p in &points {
                for k in 0..3 {
                    centroid[k] += p[k] / n;
                }
            }
            return Some(ContactPatch {
                pixels: kept,
                points,
                centroid,
                pitch_i_mm: patch.pitch_i_mm,
                pitch_j_mm: patch.pitch_j_mm,
            });
        }
    }
    None
}

/// Zero-stretch radius probe. Returns the radius estimate and the reference
/// height sensed before the press; leaves the scene pressed to probe depth.
fn probe_radius(
    scene: &mut SceneState,
    config: &PalpationConfig,
) -> Result<(RadiusEstimate, f64), PalpationError> {
    config.validate()?;
    if scene.stretch_mm() != 0.0 {
        scene.set_stretch(0.0)?;
    }
    if scene.indent_mm() != 0.0 {
        scene.indent(0.0)?;
    }
    let h_ref = sense_height(scene, config)?;
    scene.indent(config.radius_probe_depth_mm)?;
    let frame = scene.render_depth_averaged(
        &config.render,
        config.sensing.noise_sigma_mm,
        config.sensing.frames_averaged,
    )?;
    let cloud = process_frame(&frame, &config.sensing)?;
    let extraction = extract_contact(&cloud, config.sensing.plane_slack_mm)?;
    let Some(patch) = extraction.primary else {
        return Err(PalpationError::NoObject);
    };
    let fit = sphere_fit_region(&patch, &cloud).map(|region| fit_sphere(&region));
    let estimate = match fit {
        Some(Ok(fit)) if fit.radius_mm <= FLAT_FIT_RADIUS_MM && fit.rms_mm <= MAX_FIT_RMS_MM => {
            RadiusEstimate { r_star_mm: fit.radius_mm, from_extent: false }
        }
        Some(Err(e))
            if !matches!(
                e,
                GeometryError::DegenerateFit(_) | GeometryError::InsufficientData { .. }
            ) =>
        {
            return Err(e.into())
        }
        // Degenerate, flat, or too small a curvature core: half the larger
        // patch extent stands in for the radius.
        _ => {
            let d = measure_diameters(&patch)?;
            RadiusEstimate { r_star_mm: 0.5 * d.d_i_mm.max(d.d_j_mm), from_extent: true }
        }
    };
    Ok((estimate, h_ref))
}

/// Contact-radius estimate from a zero-stretch press to the probe depth.
/// Expects a freshly built scene (nothing commanded yet).
pub fn estimate_radius(
    scene: &mut SceneState,
    config: &PalpationConfig,
) -> Result<RadiusEstimate, PalpationError> {
    probe_radius(scene, config).map(|(r, _)| r)
}

/// Run the full palpation loop on a fresh scene: radius probe, then the
/// stretch schedule with entry depths chosen so the applied model force never
/// decreases, stepping deeper until the sensed object height has dropped by
/// the deflection threshold from its pre-palpation value.
pub fn palpate(
    scene: &mut SceneState,
    model: &ModulusModel,
    config: &PalpationConfig,
) -> Result<PalpationOutcome, PalpationError> {
    let (radius, h_ref) = probe_radius(scene, config)?;
    let r_used = radius
        .r_star_mm
        .clamp(model.min_guarded_radius_mm(), model.max_guarded_radius_mm());
    let threshold = config.deflection_threshold_mm;
    let mut trace: Vec<TraceStep> = Vec::new();
    let mut f_prev;

    // The probe press is the first visited state.
    {
        let h = sense_height(scene, config)?;
        let f = estimate_force(model, r_used, 0.0, config.radius_probe_depth_mm)?;
        trace.push(TraceStep {
            x_mm: 0.0,
            depth_mm: config.radius_probe_depth_mm,
            height_mm: h,
            f_star_n: f,
        });
        f_prev = f;
        let drop = (h_ref - h).max(0.0);
        if drop >= threshold {
            return finish_estimate(
                model,
                radius,
                r_used,
                0.0,
                config.radius_probe_depth_mm,
                drop,
                trace,
            );
        }
    }

    for &x in &config.stretch_schedule_mm {
        let mut depth = if x == 0.0 {
            // Probe stretch: keep stepping past the probe depth.
            config.radius_probe_depth_mm + config.depth_step_mm
        } else {
            scene.set_stretch(x)?;
            // Entry depth keeps the model force continuous across the
            // stretch change (the membrane got stiffer, so it is shallower).
            invert_depth(model, r_used, x, f_prev)?
        };
        if depth > self::depth_cap(config) {
            continue;
        }
        loop {
            let depth_cmd = depth.min(config.max_depth_mm);
            scene.indent(depth_cmd)?;
            let h = sense_height(scene, config)?;
            let f = estimate_force(model, r_used, x, depth_cmd)?;
            trace.push(TraceStep { x_mm: x, depth_mm: depth_cmd, height_mm: h, f_star_n: f });
            f_prev = f;
            let drop = (h_ref - h).max(0.0);
            if drop >= threshold {
                return finish_estimate(model, radius, r_used, x, depth_cmd, drop, trace);
            }
            if depth_cmd >= config.max_depth_mm - 1e-12 {
                break;
            }
            depth = (depth_cmd + config.depth_step_mm).min(config.max_depth_mm);
        }
    }

    Ok(PalpationOutcome::TooStiff(TooStiffReport {
        stiffness_lower_bound_n_per_mm: f_prev / threshold,
        f_star_max_n: f_prev,
        radius,
        r_star_used_mm: r_used,
        trace,
    }))
}

fn depth_cap(config: &PalpationConfig) -> f64 {
    config.max_depth_mm + 1e-12
}

fn finish_estimate(
    model: &ModulusModel,
    radius: RadiusEstimate,
    r_used: f64,
    x_mm: f64,
    depth_cmd_mm: f64,
    drop_mm: f64,
    trace: Vec<TraceStep>,
) -> Result<PalpationOutcome, PalpationError> {
    // The object yielded by `drop`, so only the remainder of the commanded
    // descent indented the membrane into it.
    let depth_eff = (depth_cmd_mm - drop_mm).max(0.0);
    let f_star = estimate_force(model, r_used, x_mm, depth_eff)?;
    Ok(PalpationOutcome::Estimate(StiffnessEstimate {
        stiffness_n_per_mm: f_star / drop_mm,
        f_star_n: f_star,
        deflection_mm: drop_mm,
        radius,
        r_star_used_mm: r_used,
        terminal_x_mm: x_mm,
        terminal_depth_mm: depth_cmd_mm,
        trace,
    }))
}

/// Applied-force schedule of a completed run: (x, depth, F*) per visited
/// state. Non-decreasing by construction of the entry depths.
pub fn force_trace(outcome: &PalpationOutcome) -> Vec<(f64, f64, f64)> {
    outcome.trace().iter().map(|s| (s.x_mm, s.depth_mm, s.f_star_n)).collect()
}

pub fn format_palpation(outcome: &PalpationOutcome) -> String {
    let mut out = String::from("step,x_mm,depth_mm,height_mm,Fstar_N\n");
    for (k, s) in outcome.trace().iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", k, s.x_mm, s.depth_mm, s.height_mm, s.f_star_n).unwrap();
    }
    writeln!(out, "Rstar_mm={}", outcome.radius().r_star_mm).unwrap();
    match outcome {
        PalpationOutcome::Estimate(e) => {
            writeln!(out, "stiffness_N_per_mm={}", e.stiffness_n_per_mm).unwrap();
        }
        PalpationOutcome::TooStiff(t) => {
            writeln!(out, "stiffness_lower_bound_N_per_mm={}", t.stiffness_lower_bound_n_per_mm)
                .unwrap();
        }
    }
    out
}

pub fn write_palpation(path: &Path, outcome: &PalpationOutcome) -> Result<(), PalpationError> {
    std::fs::write(path, format_palpation(outcome))?;
    Ok(())
}

/// A palpation result file read back: the trace plus the footer values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPalpation {
    pub trace: Vec<TraceStep>,
    pub r_star_mm: f64,
    /// Footer of a completed estimate.
    pub stiffness_n_per_mm: Option<f64>,
    /// Footer of a too-stiff outcome.
    pub stiffness_lower_bound_n_per_mm: Option<f64>,
}

pub fn parse_palpation(text: &str) -> Result<ParsedPalpation, PalpationError> {
    let mut trace = Vec::new();
    let mut r_star_mm = None;
    let mut stiffness = None;
    let mut lower_bound = None;
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "step,x_mm,depth_mm,height_mm,Fstar_N" {
                return Err(PalpationError::Parse {
                    line: lineno,
                    msg: format!("expected palpation CSV header, got '{line}'"),
                });
            }
            saw_header = true;
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            let v: f64 = value.trim().parse().map_err(|_| PalpationError::Parse {
                line: lineno,
                msg: format!("bad footer value '{value}'"),
            })?;
            match key.trim() {
                "Rstar_mm" => r_star_mm = Some(v),
                "stiffness_N_per_mm" => stiffness = Some(v),
                "stiffness_lower_bound_N_per_mm" => lower_bound = Some(v),
                other => {
                    return Err(PalpationError::Parse {
                        line: lineno,
                        msg: format!("unknown footer '{other}'"),
                    })
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(PalpationError::Parse {
                line: lineno,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let num = |s: &str| -> Result<f64, PalpationError> {
            s.trim().parse().map_err(|_| PalpationError::Parse {
                line: lineno,
                msg: format!("bad number '{s}'"),
            })
        };
        trace.push(TraceStep {
            x_mm: num(fields[1])?,
            depth_mm: num(fields[2])?,
            height_mm: num(fields[3])?,
            f_star_n: num(fields[4])?,
        });
    }
    let r_star_mm = r_star_mm.ok_or(PalpationError::Parse {
        line: text.lines().count(),
        msg: "missing Rstar_mm footer".into(),
    })?;
    Ok(ParsedPalpation { trace, r_star_mm, stiffness_n_per_mm: stiffness, stiffness_lower_bound_n_per_mm: lower_bound })
}

pub fn read_palpation(path: &Path) -> Result<ParsedPalpation, PalpationError> {
    parse_palpation(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use nalgebra::Translation3;

    use super::*;
    use crate::mechanics::build_modulus_model;
    use crate::sim::{
        run_characterization, Body, Protocol, ProtocolGeometry, SceneObject, Shape, SheetParams,
    };

    /// Calibration model fitted to the simulator itself on a reduced sweep
    /// (3 diameters, 7 stretches, odd depths); shared across tests.
    fn sim_model() -> &'static ModulusModel {
        static MODEL: OnceLock<ModulusModel> = OnceLock::new();
        MODEL.get_or_init(|| {
            let protocol = Protocol {
                seed: 7,
                trials: 1,
                force_noise_frac: 0.0,
                stretches_mm: (0..=6).map(|k| 10.0 * k as f64).collect(),
                depths_mm: (1..=7).map(|k| (2 * k + 1) as f64).collect(),
                geometries: [10.0, 20.0, 30.0]
                    .iter()
                    .map(|&d| ProtocolGeometry::Sphere { diameter_mm: d })
                    .collect(),
            };
            let records =
                run_characterization(&protocol, SheetParams::default(), |_| {}).unwrap();
            build_modulus_model(&records).unwrap()
        })
    }

    fn hemisphere(radius_mm: f64) -> Body {
        Body::single(Shape::Sphere { radius_mm }, Translation3::new(0.0, 0.0, 0.0).into())
            .unwrap()
    }

    fn balloon(k_o_n_per_mm: f64, radius_mm: f64, seed: u64) -> SceneState {
        SceneState::new(
            0.0,
            SheetParams::default(),
            SceneObject::SpringBody { body: hemisphere(radius_mm), k_o_n_per_mm },
            seed,
        )
        .unwrap()
    }

    fn assert_monotone(outcome: &PalpationOutcome) {
        let forces = force_trace(outcome);
        for pair in forces.windows(2) {
            assert!(
                pair[1].2 >= pair[0].2 - 1e-12,
                "force trace decreased: {:?} -> {:?}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    #[ignore]
    fn survey_radius_fit_contamination() {
        use crate::geometry::{ContactPatch, Label};
        let cases: Vec<(&str, SceneState, f64)> = vec![
            ("rigid R=25", SceneState::new(0.0, SheetParams::default(),
                SceneObject::Rigid(hemisphere(25.0)), 3).unwrap(), 25.0),
            ("spring k=0.5 R=25", balloon(0.5, 25.0, 3), 25.0),
            ("spring k=0.05 R=18", balloon(0.05, 18.0, 3), 18.0),
        ];
        let config = PalpationConfig::default();
        for (name, mut scene, r_true) in cases {
            scene.indent(config.radius_probe_depth_mm).unwrap();
            let frame = scene
                .render_depth_averaged(&config.render, config.sensing.noise_sigma_mm,
                    config.sensing.frames_averaged)
                .unwrap();
            let cloud = process_frame(&frame, &config.sensing).unwrap();
            let extraction = extract_contact(&cloud, config.sensing.plane_slack_mm).unwrap();
            let patch = extraction.primary.unwrap();
            let full = fit_sphere(&patch).map(|f| f.radius_mm);
            let labels = cloud.labels.as_ref().unwrap();
            let core_pixels: Vec<(usize, usize)> = patch
                .pixels
                .iter()
                .copied()
                .filter(|&(i, j)| labels[(i, j)] == Label::Contact)
                .collect();
            let mk = |pixels: Vec<(usize, usize)>| -> ContactPatch {
                let points: Vec<[f64; 3]> =
                    pixels.iter().map(|&(i, j)| cloud.point(i, j)).collect();
                let n = points.len().max(1) as f64;
                let mut centroid = [0.0; 3];
                for p in &points {
                    for k in 0..3 {
                        centroid[k] += p[k] / n;
                    }
                }
                ContactPatch {
                    pixels,
                    points,
                    centroid,
                    pitch_i_mm: patch.pitch_i_mm,
                    pitch_j_mm: patch.pitch_j_mm,
                }
            };
            let core = mk(core_pixels.clone());
            let core_fit = fit_sphere(&core).map(|f| f.radius_mm);
            println!(
                "{name}: true {r_true}  patch {} px -> {:?}  core {} px -> {:?}",
                patch.len(),
                full,
                core.len(),
                core_fit
            );
            for rings in [1usize, 2, 3] {
                let set: std::collections::HashSet<(usize, usize)> =
                    core_pixels.iter().copied().collect();
                let eroded: Vec<(usize, usize)> = core_pixels
                    .iter()
                    .copied()
                    .filter(|&(i, j)| {
                        let r = rings as i64;
                        ((i as i64 - r)..=(i as i64 + r)).all(|ii| {
                            ((j as i64 - r)..=(j as i64 + r)).all(|jj| {
                                ii >= 0
                                    && jj >= 0
                                    && set.contains(&(ii as usize, jj as usize))
                            })
                        })
                    })
                    .collect();
                let p = mk(eroded);
                println!("  core eroded {rings}: {} px -> {:?}", p.len(),
                    fit_sphere(&p).map(|f| f.radius_mm));
            }
        }
    }

    #[test]
    #[ignore]
    fn survey_balloon_suite() {
        let model = sim_model();
        let config = PalpationConfig::default();
        for k_o in [0.05, 0.15, 0.5, 1.5] {
            let mut vals = Vec::new();
            for seed in 1..=5u64 {
                let mut scene = balloon(k_o, 18.0, 100 + seed);
                let out = palpate(&mut scene, model, &config).unwrap();
                assert_monotone(&out);
                let PalpationOutcome::Estimate(e) = out else { panic!("{k_o} too stiff") };
                vals.push((e.stiffness_n_per_mm, e.terminal_x_mm, e.terminal_depth_mm,
                    e.deflection_mm, e.radius.r_star_mm));
            }
            let mean = vals.iter().map(|v| v.0).sum::<f64>() / 5.0;
            let var = vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / 5.0;
            let cov = var.sqrt() / mean;
            println!(
                "k_o {k_o}: mean {mean:.4} ({:+.1}%) cov {:.1}%  runs {:?}",
                100.0 * (mean / k_o - 1.0),
                100.0 * cov,
                vals.iter()
                    .map(|v| format!("k={:.3} x={} d={:.1} D={:.2} R={:.1}", v.0, v.1, v.2, v.3, v.4))
                    .collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn default_config_valid_and_threshold_guarded() {
        PalpationConfig::default().validate().unwrap();
        let mut bad = PalpationConfig::default();
        bad.deflection_threshold_mm = 0.5;
        assert!(matches!(bad.validate(), Err(PalpationError::BadConfig(_))));
        let mut unordered = PalpationConfig::default();
        unordered.stretch_schedule_mm = vec![0.0, 20.0, 10.0];
        assert!(matches!(unordered.validate(), Err(PalpationError::BadConfig(_))));
    }

    #[test]
    fn radius_probe_recovers_hemisphere_radius() {
        let mut scene = balloon(0.5, 25.0, 3);
        let estimate = estimate_radius(&mut scene, &PalpationConfig::default()).unwrap();
        assert!(!estimate.from_extent);
        assert!(
            (estimate.r_star_mm - 25.0).abs() <= 2.5,
            "R* = {} mm for a 25 mm hemisphere",
            estimate.r_star_mm
        );
    }

    #[test]
    fn flat_slab_radius_falls_back_to_extent() {
        let slab = Body::single(
            Shape::Cuboid { half_extents_mm: [30.0, 30.0, 5.0] },
            Translation3::new(0.0, 0.0, 0.0).into(),
        )
        .unwrap();
        let mut scene =
            SceneState::new(0.0, SheetParams::default(), SceneObject::Rigid(slab), 8).unwrap();
        let estimate = estimate_radius(&mut scene, &PalpationConfig::default()).unwrap();
        assert!(estimate.from_extent, "flat contact must use the extent fallback");
        assert!(estimate.r_star_mm > 10.0);
    }

    #[test]
    fn no_contact_label_reports_no_object() {
        let mut scene = balloon(0.5, 20.0, 4);
        let mut config = PalpationConfig::default();
        // An absurd curvature threshold labels nothing as contact.
        config.sensing.k_threshold = 1e12;
        assert!(matches!(
            estimate_radius(&mut scene, &config),
            Err(PalpationError::NoObject)
        ));
    }

    #[test]
    fn soft_balloon_stiffness_within_quarter() {
        let k_o = 0.05;
        let mut scene = balloon(k_o, 18.0, 11);
        let outcome = palpate(&mut scene, sim_model(), &PalpationConfig::default()).unwrap();
        assert_monotone(&outcome);
        let PalpationOutcome::Estimate(e) = outcome else {
            panic!("soft balloon must yield an estimate");
        };
        assert!(e.deflection_mm >= 1.5);
        assert_eq!(e.stiffness_n_per_mm, e.f_star_n / e.deflection_mm);
        let rel = (e.stiffness_n_per_mm - k_o).abs() / k_o;
        assert!(
            rel <= 0.25,
            "stiffness {} vs true {} ({}% off)",
            e.stiffness_n_per_mm,
            k_o,
            (100.0 * rel).round()
        );
    }

    #[test]
    fn stiffer_balloon_measures_stiffer() {
        let model = sim_model();
        let config = PalpationConfig::default();
        let mut soft = balloon(0.15, 18.0, 21);
        let mut firm = balloon(1.5, 18.0, 21);
        let soft_out = palpate(&mut soft, model, &config).unwrap();
        let firm_out = palpate(&mut firm, model, &config).unwrap();
        assert_monotone(&soft_out);
        assert_monotone(&firm_out);
        let (PalpationOutcome::Estimate(a), PalpationOutcome::Estimate(b)) =
            (&soft_out, &firm_out)
        else {
            panic!("both balloons are within the measurable range");
        };
        assert!(
            a.stiffness_n_per_mm < b.stiffness_n_per_mm,
            "ordering violated: {} !< {}",
            a.stiffness_n_per_mm,
            b.stiffness_n_per_mm
        );
        // The firmer balloon needs more stretch (or at least as much) to
        // trigger the same deflection.
        assert!(b.terminal_x_mm >= a.terminal_x_mm);
    }

    #[test]
    fn rigid_object_reports_too_stiff() {
        let mut scene = SceneState::new(
            0.0,
            SheetParams::default(),
            SceneObject::Rigid(hemisphere(18.0)),
            6,
        )
        .unwrap();
        // Coarse schedule keeps the exhaustive sweep short.
        let config = PalpationConfig {
            stretch_schedule_mm: vec![0.0, 30.0, 60.0],
            depth_step_mm: 3.0,
            ..PalpationConfig::default()
        };
        let outcome = palpate(&mut scene, sim_model(), &config).unwrap();
        assert_monotone(&outcome);
        let PalpationOutcome::TooStiff(report) = outcome else {
            panic!("a rigid object cannot deflect");
        };
        let last = report.trace.last().unwrap();
        assert_eq!(last.x_mm, 60.0);
        assert_eq!(last.depth_mm, 15.0);
        assert!(report.stiffness_lower_bound_n_per_mm > 0.0);
        assert_eq!(
            report.stiffness_lower_bound_n_per_mm,
            report.f_star_max_n / config.deflection_threshold_mm
        );
    }

    #[test]
    fn trace_is_deterministic_and_round_trips() {
        let model = sim_model();
        let config = PalpationConfig::default();
        let run = |seed: u64| {
            let mut scene = balloon(0.15, 18.0, seed);
            palpate(&mut scene, model, &config).unwrap()
        };
        let first = run(5);
        let second = run(5);
        assert_eq!(first, second);
        let text = format_palpation(&first);
        assert_eq!(text, format_palpation(&second));
        let parsed = parse_palpation(&text).unwrap();
        assert_eq!(parsed.trace, first.trace());
        assert_eq!(parsed.r_star_mm, first.radius().r_star_mm);
        let PalpationOutcome::Estimate(e) = &first else {
            panic!("balloon yields an estimate");
        };
        assert_eq!(parsed.stiffness_n_per_mm, Some(e.stiffness_n_per_mm));
    }

    #[test]
    fn schedule_granularity_shifts_estimate_under_20_percent() {
        let model = sim_model();
        let run = |schedule: Vec<f64>, seed: u64| {
            let mut scene = balloon(1.5, 18.0, seed);
            let config = PalpationConfig { stretch_schedule_mm: schedule, ..Default::default() };
            let out = palpate(&mut scene, model, &config).unwrap();
            assert_monotone(&out);
            let PalpationOutcome::Estimate(e) = out else {
                panic!("balloon is within the measurable range");
            };
            e.stiffness_n_per_mm
        };
        let fine = run((0..=6).map(|k| 10.0 * k as f64).collect(), 9);
        let coarse = run(vec![0.0, 20.0, 40.0, 60.0], 9);
        let rel = (fine - coarse).abs() / fine;
        assert!(rel <= 0.20, "fine {fine} vs coarse {coarse} ({:.1}% apart)", 100.0 * rel);
    }
}
