//! Characterization protocols: which probes to press, how deep, how often.
//!
//! A protocol file is a plain-text directive list (`seed`, `trials`,
//! `force_noise`, `stretch_mm`, `depths_mm`, `geometry`), one directive per
//! line, `#` comments allowed. Probes are described the way they are
//! machined: spheres and cylinders by diameter, cones by surface angle.

use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};

use crate::mechanics::{IndentationRecord, ProbeGeometry};
use crate::rng::stream;
use crate::{MAX_DEPTH_MM, MAX_STRETCH_MM};

use super::scene::{SceneObject, SceneState};
use super::shape::{Body, Shape};
use super::sheet::SheetParams;
use super::SimError;

const FORCE_TAG: u64 = 0x666f726365; // "force"

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProtocolGeometry {
    Sphere { diameter_mm: f64 },
    Cylinder { diameter_mm: f64 },
    Cone { surface_angle_deg: f64 },
}

impl ProtocolGeometry {
    pub fn probe(&self) -> ProbeGeometry {
        match *self {
            ProtocolGeometry::Sphere { diameter_mm } => {
                ProbeGeometry::Sphere { radius_mm: 0.5 * diameter_mm }
            }
            ProtocolGeometry::Cylinder { diameter_mm } => {
                ProbeGeometry::Cylinder { radius_mm: 0.5 * diameter_mm }
            }
            ProtocolGeometry::Cone { surface_angle_deg } => {
                ProbeGeometry::Cone { surface_angle_deg }
            }
        }
    }

    /// The fixture body, resting on the table under the hand center.
    pub fn body(&self) -> Result<Body, SimError> {
        match *self {
            ProtocolGeometry::Sphere { diameter_mm } => {
                let r = 0.5 * diameter_mm;
                Body::single(
                    Shape::Sphere { radius_mm: r },
                    nalgebra::Translation3::new(0.0, 0.0, r).into(),
                )
            }
            ProtocolGeometry::Cylinder { diameter_mm } => {
                let r = 0.5 * diameter_mm;
                let l = 40.0;
                Body::single(
                    Shape::Cylinder { radius_mm: r, length_mm: l },
                    nalgebra::Translation3::new(0.0, 0.0, 0.5 * l).into(),
                )
            }
            ProtocolGeometry::Cone { surface_angle_deg } => {
                let base = 25.0;
                let h = base * surface_angle_deg.to_radians().tan();
                Body::single(
                    Shape::Cone { surface_angle_deg, base_radius_mm: base },
                    nalgebra::Translation3::new(0.0, 0.0, 0.5 * h).into(),
                )
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        match *self {
            ProtocolGeometry::Sphere { diameter_mm }
            | ProtocolGeometry::Cylinder { diameter_mm } => {
                if !(diameter_mm > 0.0 && diameter_mm <= 60.0) {
                    return Err(SimError::OutOfRange {
                        name: "probe diameter_mm",
                        value: diameter_mm,
                        lo: 0.0,
                        hi: 60.0,
                    });
                }
            }
            ProtocolGeometry::Cone { surface_angle_deg } => {
                if !(surface_angle_deg > 5.0 && surface_angle_deg < 85.0) {
                    return Err(SimError::OutOfRange {
                        name: "cone surface_angle_deg",
                        value: surface_angle_deg,
                        lo: 5.0,
                        hi: 85.0,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub seed: u64,
    pub trials: u32,
    /// Multiplicative 1-sigma force noise per trial (sensor repeatability).
    pub force_noise_frac: f64,
    pub stretches_mm: Vec<f64>,
    pub depths_mm: Vec<f64>,
    pub geometries: Vec<ProtocolGeometry>,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            seed: 42,
            trials: 5,
            force_noise_frac: 0.01,
            stretches_mm: (0..=6).map(|k| 10.0 * k as f64).collect(),
            depths_mm: (0..=15).map(|k| k as f64).collect(),
            geometries: [10.0, 15.0, 20.0, 25.0, 30.0]
                .iter()
                .map(|&d| ProtocolGeometry::Sphere { diameter_mm: d })
                .collect(),
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.trials == 0 {
            return Err(SimError::OutOfRange {
                name: "trials",
                value: 0.0,
                lo: 1.0,
                hi: f64::INFINITY,
            });
        }
        if !(0.0..0.5).contains(&self.force_noise_frac) {
            return Err(SimError::OutOfRange {
                name: "force_noise",
                value: self.force_noise_frac,
                lo: 0.0,
                hi: 0.5,
            });
        }
        if self.stretches_mm.is_empty() || self.depths_mm.is_empty() || self.geometries.is_empty()
        {
            return Err(SimError::BadProtocol {
                line: 0,
                msg: "need at least one stretch, one depth and one geometry".into(),
            });
        }
        for &x in &self.stretches_mm {
            if !(0.0..=MAX_STRETCH_MM).contains(&x) {
                return Err(SimError::OutOfRange {
                    name: "stretch_mm",
                    value: x,
                    lo: 0.0,
                    hi: MAX_STRETCH_MM,
                });
            }
        }
        for &d in &self.depths_mm {
            if !(0.0..=MAX_DEPTH_MM).contains(&d) {
                return Err(SimError::OutOfRange {
                    name: "depth_mm",
                    value: d,
                    lo: 0.0,
                    hi: MAX_DEPTH_MM,
                });
            }
        }
        for g in &self.geometries {
            g.validate()?;
        }
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        self.geometries.len() * self.stretches_mm.len() * self.depths_mm.len()
            * self.trials as usize
    }
}

pub fn format_protocol(p: &Protocol) -> String {
    let mut out = String::new();
    writeln!(out, "seed {}", p.seed).unwrap();
    writeln!(out, "trials {}", p.trials).unwrap();
    writeln!(out, "force_noise {}", p.force_noise_frac).unwrap();
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(out, "stretch_mm {}", join(&p.stretches_mm)).unwrap();
    writeln!(out, "depths_mm {}", join(&p.depths_mm)).unwrap();
    for g in &p.geometries {
        match *g {
            ProtocolGeometry::Sphere { diameter_mm } => {
                writeln!(out, "geometry sphere {diameter_mm}").unwrap()
            }
            ProtocolGeometry::Cylinder { diameter_mm } => {
                writeln!(out, "geometry cylinder {diameter_mm}").unwrap()
            }
            ProtocolGeometry::Cone { surface_angle_deg } => {
                writeln!(out, "geometry cone {surface_angle_deg}").unwrap()
            }
        }
    }
    out
}

pub fn parse_protocol(text: &str) -> Result<Protocol, SimError> {
    let mut p = Protocol::default();
    p.geometries.clear();
    let mut saw_geometry = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut tok = line.split_whitespace();
        let key = tok.next().unwrap();
        let rest: Vec<&str> = tok.collect();
        let bad = |msg: String| SimError::BadProtocol { line: lineno, msg };
        let one = || -> Result<&str, SimError> {
            if rest.len() == 1 {
                Ok(rest[0])
            } else {
                Err(SimError::BadProtocol {
                    line: lineno,
                    msg: format!("`{key}` takes exactly one value"),
                })
            }
        };
        let nums = || -> Result<Vec<f64>, SimError> {
            rest.iter()
                .map(|t| {
                    t.parse::<f64>().map_err(|e| SimError::BadProtocol {
                        line: lineno,
                        msg: format!("bad number `{t}`: {e}"),
                    })
                })
                .collect()
        };
        match key {
            "seed" => {
                p.seed = one()?
                    .parse()
                    .map_err(|e| bad(format!("bad seed: {e}")))?
            }
            "trials" => {
                p.trials = one()?
                    .parse()
                    .map_err(|e| bad(format!("bad trials: {e}")))?
            }
            "force_noise" => {
                p.force_noise_frac = one()?
                    .parse()
                    .map_err(|e| bad(format!("bad force_noise: {e}")))?
            }
            "stretch_mm" => p.stretches_mm = nums()?,
            "depths_mm" => p.depths_mm = nums()?,
            "geometry" => {
                if rest.len() != 2 {
                    return Err(bad("`geometry` takes a kind and one parameter".into()));
                }
                let v: f64 = rest[1]
                    .parse()
                    .map_err(|e| bad(format!("bad geometry parameter: {e}")))?;
                let g = match rest[0] {
                    "sphere" => ProtocolGeometry::Sphere { diameter_mm: v },
                    "cylinder" => ProtocolGeometry::Cylinder { diameter_mm: v },
                    "cone" => ProtocolGeometry::Cone { surface_angle_deg: v },
                    other => return Err(bad(format!("unknown geometry `{other}`"))),
                };
                p.geometries.push(g);
                saw_geometry = true;
            }
            other => return Err(bad(format!("unknown directive `{other}`"))),
        }
    }
    if !saw_geometry {
        p.geometries = Protocol::default().geometries;
    }
    p.validate()?;
    Ok(p)
}

/// Run the full press matrix and emit one record per (geometry, stretch,
/// depth, trial). Every record is handed to `sink` the moment it exists so a
/// caller can flush partial results; the same records are also returned.
///
/// The underlying equilibrium is solved once per (geometry, stretch, depth);
/// trials differ by the multiplicative force-sensor noise drawn from a
/// stream keyed on (seed, geometry, stretch, depth, trial), so reruns and
/// reorderings reproduce identical values.
pub fn run_characterization(
    protocol: &Protocol,
    params: SheetParams,
    mut sink: impl FnMut(&IndentationRecord),
) -> Result<Vec<IndentationRecord>, SimError> {
    protocol.validate()?;
    let mut records = Vec::with_capacity(protocol.record_count());
    for (gi, geom) in protocol.geometries.iter().enumerate() {
        let body = geom.body()?;
        let mut scene = SceneState::new(
            protocol.stretches_mm[0],
            params,
            SceneObject::Rigid(body),
            protocol.seed,
        )?;
        for &x in &protocol.stretches_mm {
            scene.set_stretch(x)?;
            for &depth in &protocol.depths_mm {
                let gt = scene.indent(depth)?;
                for trial in 0..protocol.trials {
                    let force = noisy_force(
                        gt.reaction_n,
                        protocol.force_noise_frac,
                        protocol.seed,
                        gi,
                        x,
                        depth,
                        trial,
                    );
                    let rec = IndentationRecord {
                        stretch_mm: x,
                        geometry: geom.probe(),
                        depth_mm: depth,
                        force_n: force,
                        trial,
                    };
                    sink(&rec);
                    records.push(rec);
                }
            }
        }
    }
    Ok(records)
}

fn noisy_force(
    force_n: f64,
    frac: f64,
    seed: u64,
    geometry_index: usize,
    stretch_mm: f64,
    depth_mm: f64,
    trial: u32,
) -> f64 {
    if frac <= 0.0 || force_n <= 0.0 {
        return force_n.max(0.0);
    }
    let mut rng = stream(
        seed,
        &[
            FORCE_TAG,
            geometry_index as u64,
            (stretch_mm * 1000.0).round() as u64,
            (depth_mm * 1000.0).round() as u64,
            trial as u64,
        ],
    );
    let n = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
    (force_n * (1.0 + frac * n)).max(0.0)
}
