//! Scene state: one sheet, one object, and the command cycle
//! (stretch, indent, render) the task modules drive.
//!
//! World frame: z = 0 is the table, +z up. The hand hovers with the membrane
//! rest plane horizontal; (0, 0) in world xy sits under the hand center.
//! Membrane-frame coordinates (the sheet grid and every DepthFrame) put the
//! origin at the sheet corner, so world (0, 0) maps to the middle of the
//! current span. Commanded indentation is descent past first touch: at
//! indent 0 the highest object point grazes the rest plane.

use rand_distr::{Distribution, Normal};

use crate::geometry::DepthFrame;
use crate::grid::Grid2;
use crate::rng::stream;
use crate::{MAX_DEPTH_MM, REST_LENGTH_MM, REST_WIDTH_MM};

use super::dough::DoughField;
use super::shape::Body;
use super::sheet::{MembraneSheet, SheetParams, SolveStats};
use super::{SimError, ENVELOPE_CEILING_MM, NO_SURFACE_MM};

const RENDER_TAG: u64 = 0x72656e646572; // "render"

#[derive(Debug, Clone)]
pub enum SceneObject {
    /// Fixed rigid probe.
    Rigid(Body),
    /// Rigid geometry riding a vertical linear spring (a taped-down balloon
    /// behaves like this to first order); the whole body translates down by
    /// the spring compression.
    SpringBody { body: Body, k_o_n_per_mm: f64 },
    /// Plastic height field (dough).
    Dough(DoughField),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Pixel pitch along i at rest, mm; pitch along j scales with stretch.
    pub pixel_pitch_mm: f64,
    /// Camera-to-rest-plane distance, mm.
    pub rest_depth_mm: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { pixel_pitch_mm: 0.5, rest_depth_mm: 100.0 }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Node-grid contact mask (query metrically via `contact_at`).
    pub contact: Grid2<bool>,
    pub node_pitch_x_mm: f64,
    pub node_pitch_y_mm: f64,
    /// Summed normal load on the contact set, N.
    pub reaction_n: f64,
    /// Current top of the object above the table, mm.
    pub object_height_mm: f64,
}

impl GroundTruth {
    /// Contact state at a metric membrane-frame position (nearest node).
    pub fn contact_at(&self, x_mm: f64, y_mm: f64) -> bool {
        let i = (x_mm / self.node_pitch_x_mm).round() as i64;
        let j = (y_mm / self.node_pitch_y_mm).round() as i64;
        if i < 0 || j < 0 || i >= self.contact.rows() as i64 || j >= self.contact.cols() as i64 {
            return false;
        }
        self.contact[(i as usize, j as usize)]
    }

    pub fn contact_count(&self) -> usize {
        self.contact.as_slice().iter().filter(|&&c| c).count()
    }
}

/// Which coupling an indent step runs; avoids holding an object borrow
/// across sheet solves.
enum Coupling {
    Rigid,
    Spring(f64),
    Dough,
}

#[derive(Debug, Clone)]
pub struct SceneState {
    sheet: MembraneSheet,
    object: SceneObject,
    /// Object top per node column in hand coordinates at first touch
    /// (max = 0); columns the object misses hold the no-surface sentinel.
    base_env: Grid2<f64>,
    /// World height of the highest object point at scene creation.
    first_touch_height_mm: f64,
    /// Current spring compression of a SpringBody, mm.
    compression_mm: f64,
    /// Warm start for the spring balance: last effective envelope offset, mm.
    eff_depth_mm: f64,
    indent_mm: f64,
    seed: u64,
    render_count: u64,
}

/// Depth-consistency tolerance of the spring balance, mm.
const SPRING_TOL_MM: f64 = 1e-4;

impl SceneState {
    pub fn new(
        stretch_mm: f64,
        params: SheetParams,
        object: SceneObject,
        seed: u64,
    ) -> Result<Self, SimError> {
        let sheet = MembraneSheet::new(stretch_mm, params)?;
        let mut scene = Self {
            sheet,
            object,
            base_env: Grid2::filled(1, 1, NO_SURFACE_MM),
            first_touch_height_mm: f64::NAN,
            compression_mm: 0.0,
            eff_depth_mm: 0.0,
            indent_mm: 0.0,
            seed,
            render_count: 0,
        };
        let (env, top) = scene.sample_envelope()?;
        scene.first_touch_height_mm = top;
        scene.base_env = env;
        Ok(scene)
    }

    pub fn sheet(&self) -> &MembraneSheet {
        &self.sheet
    }

    pub fn object(&self) -> &SceneObject {
        &self.object
    }

    pub fn stretch_mm(&self) -> f64 {
        self.sheet.stretch_mm()
    }

    pub fn indent_mm(&self) -> f64 {
        self.indent_mm
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Membrane-frame position of the world origin (hand center).
    pub fn center_mm(&self) -> (f64, f64) {
        let (w, l) = self.sheet.span_mm();
        (0.5 * w, 0.5 * l)
    }

    /// World height of the highest object point when the scene was built
    /// (the indent reference).
    pub fn first_touch_height_mm(&self) -> f64 {
        self.first_touch_height_mm
    }

    /// Object top surface per node column in membrane-frame z at first
    /// touch, plus the world height of the highest point.
    fn sample_envelope(&self) -> Result<(Grid2<f64>, f64), SimError> {
        let (nx, ny) = self.sheet.nodes();
        let (px, py) = self.sheet.pitches_mm();
        let (w, l) = self.sheet.span_mm();
        let mut env = Grid2::filled(nx, ny, NO_SURFACE_MM);
        let mut top = f64::NEG_INFINITY;
        for i in 0..nx {
            for j in 0..ny {
                let wx = i as f64 * px - 0.5 * w;
                let wy = j as f64 * py - 0.5 * l;
                let t = match &self.object {
                    SceneObject::Rigid(body) | SceneObject::SpringBody { body, .. } => {
                        body.top_surface(wx, wy, 0.0, ENVELOPE_CEILING_MM + 100.0)
                    }
                    SceneObject::Dough(dough) => dough.top_at(wx, wy),
                };
                if let Some(t) = t {
                    env[(i, j)] = t;
                    top = top.max(t);
                }
            }
        }
        if !top.is_finite() {
            return Err(SimError::NoObject);
        }
        let reference = if self.first_touch_height_mm.is_finite() {
            self.first_touch_height_mm
        } else {
            top
        };
        for v in env.as_mut_slice() {
            if *v > NO_SURFACE_MM {
                *v -= reference;
            }
        }
        Ok((env, top))
    }

    /// Change the stretch state in place. Node heights carry over as the
    /// warm start; the envelope is resampled because node columns moved.
    pub fn set_stretch(&mut self, stretch_mm: f64) -> Result<(), SimError> {
        let params = *self.sheet.params();
        let z = self.sheet.z().clone();
        let mut sheet = MembraneSheet::new(stretch_mm, params)?;
        *sheet.z_mut() = z;
        self.sheet = sheet;
        let (env, _) = self.sample_envelope()?;
        self.base_env = env;
        Ok(())
    }

    /// Press to the given descent past first touch and relax to equilibrium.
    pub fn indent(&mut self, depth_mm: f64) -> Result<GroundTruth, SimError> {
        if !(0.0..=MAX_DEPTH_MM).contains(&depth_mm) {
            return Err(SimError::OutOfRange {
                name: "indent depth_mm",
                value: depth_mm,
                lo: 0.0,
                hi: MAX_DEPTH_MM,
            });
        }
        self.indent_mm = depth_mm;
        let coupling = match &self.object {
            SceneObject::Rigid(_) => Coupling::Rigid,
            SceneObject::SpringBody { k_o_n_per_mm, .. } => Coupling::Spring(*k_o_n_per_mm),
            SceneObject::Dough(_) => Coupling::Dough,
        };
        let stats = match coupling {
            Coupling::Rigid => {
                let env = offset_env(&self.base_env, depth_mm);
                self.sheet.solve(Some(&env))?
            }
            Coupling::Spring(k_o) => {
                let env0 = self.base_env.clone();
                let stats = self.solve_with_spring(&env0, depth_mm, k_o)?;
                self.compression_mm = stats.reaction_n / k_o;
                stats
            }
            Coupling::Dough => self.indent_dough(depth_mm)?,
        };
        let object_height = match &self.object {
            SceneObject::Rigid(_) => self.first_touch_height_mm,
            SceneObject::SpringBody { .. } => self.first_touch_height_mm - self.compression_mm,
            SceneObject::Dough(d) => d.max_height_mm(),
        };
        let (px, py) = self.sheet.pitches_mm();
        Ok(GroundTruth {
            contact: stats.contact,
            node_pitch_x_mm: px,
            node_pitch_y_mm: py,
            reaction_n: stats.reaction_n,
            object_height_mm: object_height,
        })
    }

    /// Relax the sheet at hand descent `depth_mm` with a sprung body
    /// retreating by F / k_o: find the envelope offset d where
    /// d + F_sheet(d) / k_o = depth. The left side is monotone in d, so a
    /// bracketed secant converges in a handful of warm-started solves.
    /// `env_first_touch` is the object top at zero offset.
    fn solve_with_spring(
        &mut self,
        env_first_touch: &Grid2<f64>,
        depth_mm: f64,
        k_o_n_per_mm: f64,
    ) -> Result<SolveStats, SimError> {
        let mut lo = 0.0_f64;
        let mut hi = depth_mm;
        let mut d = self.eff_depth_mm.clamp(lo, hi);
        let mut stats = self.sheet.solve(Some(&offset_env(env_first_touch, d)))?;
        let mut h = d + stats.reaction_n / k_o_n_per_mm - depth_mm;
        let mut prev: Option<(f64, f64)> = None;
        for _ in 0..64 {
            if h.abs() < SPRING_TOL_MM || hi - lo < SPRING_TOL_MM {
                break;
            }
            if h > 0.0 {
                hi = d;
            } else {
                lo = d;
            }
            let mut next = 0.5 * (lo + hi);
            if let Some((dp, hp)) = prev {
                let denom = h - hp;
                if denom.abs() > 0.0 {
                    let cand = d - h * (d - dp) / denom;
                    if cand > lo && cand < hi {
                        next = cand;
                    }
                }
            }
            prev = Some((d, h));
            d = next;
            stats = self.sheet.solve(Some(&offset_env(env_first_touch, d)))?;
            h = d + stats.reaction_n / k_o_n_per_mm - depth_mm;
        }
        self.eff_depth_mm = d;
        Ok(stats)
    }

    /// Press into dough: relax, let overloaded columns yield, repeat until
    /// the material stops flowing.
    fn indent_dough(&mut self, depth_mm: f64) -> Result<SolveStats, SimError> {
        let (nx, ny) = self.sheet.nodes();
        let (px, py) = self.sheet.pitches_mm();
        let (w, l) = self.sheet.span_mm();
        let reference = self.first_touch_height_mm;
        let mut stats;
        let mut rounds = 0;
        loop {
            // Resample the envelope from the current dough heights.
            let mut env = Grid2::filled(nx, ny, NO_SURFACE_MM);
            if let SceneObject::Dough(dough) = &self.object {
                for i in 0..nx {
                    for j in 0..ny {
                        let wx = i as f64 * px - 0.5 * w;
                        let wy = j as f64 * py - 0.5 * l;
                        if let Some(t) = dough.top_at(wx, wy) {
                            env[(i, j)] = t - reference + depth_mm;
                        }
                    }
                }
            }
            stats = self.sheet.solve(Some(&env))?;
            // Per-node loads -> dough columns.
            let mut loads: Vec<(f64, f64, f64)> = Vec::new();
            for i in 1..nx - 1 {
                for j in 1..ny - 1 {
                    if stats.contact[(i, j)] {
                        let f = -self.sheet.node_residual(i, j);
                        let wx = i as f64 * px - 0.5 * w;
                        let wy = j as f64 * py - 0.5 * l;
                        loads.push((wx, wy, f));
                    }
                }
            }
            let moved = if let SceneObject::Dough(dough) = &mut self.object {
                dough.plastic_update(&loads)
            } else {
                0.0
            };
            rounds += 1;
            if moved < 1e-9 || rounds >= 12 {
                break;
            }
        }
        Ok(stats)
    }

    /// Orthographic depth image of the sheet with per-pixel Gaussian noise.
    /// Each call consumes one noise stream; identical scenes and command
    /// sequences reproduce identical frames.
    pub fn render_depth(
        &mut self,
        config: &RenderConfig,
        noise_sigma_mm: f64,
    ) -> Result<DepthFrame, SimError> {
        if !(noise_sigma_mm >= 0.0 && noise_sigma_mm.is_finite()) {
            return Err(SimError::OutOfRange {
                name: "noise_sigma_mm",
                value: noise_sigma_mm,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let p = config.pixel_pitch_mm;
        if !(p > 0.0 && p <= 10.0) {
            return Err(SimError::OutOfRange {
                name: "pixel_pitch_mm",
                value: p,
                lo: 0.0,
                hi: 10.0,
            });
        }
        let rows = (REST_WIDTH_MM / p).round() as usize + 1;
        let cols = (REST_LENGTH_MM / p).round() as usize + 1;
        let scale_j = (REST_LENGTH_MM + self.stretch_mm()) / REST_LENGTH_MM;
        let pitch_j = p * scale_j;
        let mut rng = stream(self.seed, &[RENDER_TAG, self.render_count]);
        self.render_count += 1;
        let noise = Normal::new(0.0, noise_sigma_mm.max(f64::MIN_POSITIVE)).unwrap();
        let depth = Grid2::from_fn(rows, cols, |i, j| {
            let z = self.sheet.sample_z(i as f64 * p, j as f64 * pitch_j);
            let n = if noise_sigma_mm > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (config.rest_depth_mm - z + n).clamp(0.0, 200.0)
        });
        let frame = DepthFrame::new(
            p,
            pitch_j,
            self.stretch_mm(),
            REST_LENGTH_MM + self.stretch_mm(),
            depth,
        )
        .expect("a valid scene renders a valid frame");
        Ok(frame)
    }

    /// Average of several independently rendered depth images (temporal
    /// filtering, as a depth camera driver would do).
    pub fn render_depth_averaged(
        &mut self,
        config: &RenderConfig,
        noise_sigma_mm: f64,
        frames: usize,
    ) -> Result<DepthFrame, SimError> {
        let n = frames.max(1);
        let mut acc = self.render_depth(config, noise_sigma_mm)?;
        for _ in 1..n {
            let next = self.render_depth(config, noise_sigma_mm)?;
            for (a, b) in acc
                .depth_mm
                .as_mut_slice()
                .iter_mut()
                .zip(next.depth_mm.as_slice())
            {
                *a += b;
            }
        }
        let inv = 1.0 / n as f64;
        for a in acc.depth_mm.as_mut_slice() {
            *a *= inv;
        }
        Ok(acc)
    }
}

fn offset_env(base: &Grid2<f64>, shift_mm: f64) -> Grid2<f64> {
    let mut env = base.clone();
    for v in env.as_mut_slice() {
        if *v > NO_SURFACE_MM {
            *v += shift_mm;
        }
    }
    env
}
