//! Effective-modulus model fitted from characterization records.
//!
//! Per stretch state x, E*(d) over sphere contact diameter d follows a
//! decaying exponential a + b exp(-c d). For a queried contact radius R*, the
//! seven per-stretch values induce a stretch curve E*(x) = alpha +
//! beta ln(1 + x / 10 mm), which estimate_force / invert_depth evaluate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::records::{IndentationRecord, ProbeGeometry};
use super::{hertz_sphere, HertzParams, MechanicsError, MEMBRANE_POISSON};

/// Records shallower than this are excluded from modulus fits; the template
/// family is unreliable for small indentations.
pub const DEFAULT_MIN_FIT_DEPTH_MM: f64 = 3.0;

/// Reference stretch in the logarithmic stretch curve.
pub const STRETCH_LOG_REF_MM: f64 = 10.0;

/// Extrapolation guard: queried contact diameters may exceed the calibrated
/// diameter range by at most this factor.
pub const DIAMETER_GUARD_FACTOR: f64 = 0.25;

/// Relative slack allowed when verifying that per-stretch E* values are
/// non-decreasing in stretch (absorbs trial noise).
const MONOTONE_REL_SLACK: f64 = 0.01;

/// Diameter validity range assumed for models restored from a calibration
/// table, which does not carry the range itself.
pub const DEFAULT_DIAMETER_RANGE_MM: (f64, f64) = (10.0, 30.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusFit {
    pub e_star_kpa: f64,
    pub rms_n: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchRow {
    pub x_mm: f64,
    pub a_kpa: f64,
    pub b_kpa: f64,
    pub c_per_mm: f64,
    pub rms_n: f64,
}

impl StretchRow {
    pub fn eval_d(&self, d_mm: f64) -> f64 {
        self.a_kpa + self.b_kpa * (-self.c_per_mm * d_mm).exp()
    }
}

/// E*(x) = alpha + beta ln(1 + x / 10 mm), beta >= 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchCurve {
    pub r_star_mm: f64,
    pub alpha_kpa: f64,
    pub beta_kpa: f64,
}

impl StretchCurve {
    pub fn eval_x(&self, x_mm: f64) -> f64 {
        self.alpha_kpa + self.beta_kpa * (1.0 + x_mm / STRETCH_LOG_REF_MM).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusModel {
    pub poisson: f64,
    /// Per-stretch exponential curves, ascending in x.
    pub rows: Vec<StretchRow>,
    /// Calibrated sphere contact diameter range (mm).
    pub d_min_mm: f64,
    pub d_max_mm: f64,
    /// Stretch curves materialized by `cache_stretch_curve`, keyed by R* bits.
    pub cached_curves: BTreeMap<u64, StretchCurve>,
}

/// Shape factor g with F = E*[Pa] * g for a rigid probe.
fn shape_factor(geometry: ProbeGeometry, depth_mm: f64, v: f64) -> f64 {
    let d = depth_mm * 1e-3;
    match geometry {
        ProbeGeometry::Sphere { radius_mm } => {
            (4.0 / 3.0) * (d * d * d * radius_mm * 1e-3).sqrt() / (1.0 - v * v)
        }
        ProbeGeometry::Cylinder { radius_mm } => 2.0 * radius_mm * 1e-3 * d,
        ProbeGeometry::Cone { surface_angle_deg } => {
            2.0 * d * d
                / (std::f64::consts::PI * (1.0 - v * v) * surface_angle_deg.to_radians().tan())
        }
    }
}

/// Least-squares E* (kPa) through the template family for one observed curve.
/// Rigid probes assumed; records shallower than `min_depth_mm` are ignored.
pub fn fit_modulus(
    records: &[IndentationRecord],
    min_depth_mm: f64,
) -> Result<ModulusFit, MechanicsError> {
    let used: Vec<&IndentationRecord> =
        records.iter().filter(|r| r.depth_mm >= min_depth_mm).collect();
    if used.len() < 5 {
        return Err(MechanicsError::InsufficientData {
            what: "records at or above min fit depth",
            needed: 5,
            got: used.len(),
        });
    }
    let mut sgf = 0.0;
    let mut sgg = 0.0;
    for r in &used {
        let g = shape_factor(r.geometry, r.depth_mm, MEMBRANE_POISSON);
        sgf += g * r.force_n;
        sgg += g * g;
    }
    if sgg <= 0.0 {
        return Err(MechanicsError::FitDiverged("all shape factors are zero".into()));
    }
    let e_star_pa = sgf / sgg;
    if !e_star_pa.is_finite() || e_star_pa <= 0.0 {
        return Err(MechanicsError::FitDiverged(format!("nonpositive modulus {e_star_pa} Pa")));
    }
    let mut sse = 0.0;
    for r in &used {
        let g = shape_factor(r.geometry, r.depth_mm, MEMBRANE_POISSON);
        let e = r.force_n - e_star_pa * g;
        sse += e * e;
    }
    Ok(ModulusFit {
        e_star_kpa: e_star_pa * 1e-3,
        rms_n: (sse / used.len() as f64).sqrt(),
        n_used: used.len(),
    })
}

/// Linear sub-fit of a + b exp(-c d) for fixed c. Returns (a, b, sse);
/// b is clamped at zero when the unconstrained optimum decays upward.
fn exp_linear_subfit(points: &[(f64, f64)], c: f64) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let (mut se, mut see, mut sy, mut sye) = (0.0, 0.0, 0.0, 0.0);
    for &(d, y) in points {
        let e = (-c * d).exp();
        se += e;
        see += e * e;
        sy += y;
        sye += y * e;
    }
    let det = n * see - se * se;
    let (a, b) = if det.abs() < 1e-12 * n * see.max(1e-300) {
        (sy / n, 0.0)
    } else {
        let b = (n * sye - se * sy) / det;
        if b < 0.0 {
            (sy / n, 0.0)
        } else {
            ((sy - b * se) / n, b)
        }
    };
    let mut sse = 0.0;
    for &(d, y) in points {
        let r = y - a - b * (-c * d).exp();
        sse += r * r;
    }
    (a, b, sse)
}

/// Fit a + b exp(-c d) to (d, E*) points by scanning c and refining with
/// golden-section search; the linear parameters come in closed form.
fn fit_exp_curve(points: &[(f64, f64)]) -> Result<(f64, f64, f64), MechanicsError> {
    const C_LO: f64 = 1e-4;
    const C_HI: f64 = 1.0;
    const SCAN: usize = 64;
    let cs: Vec<f64> = (0..SCAN)
        .map(|k| C_LO * (C_HI / C_LO).powf(k as f64 / (SCAN - 1) as f64))
        .collect();
    let mut best = (0usize, f64::INFINITY);
    for (k, &c) in cs.iter().enumerate() {
        let (.., sse) = exp_linear_subfit(points, c);
        if sse < best.1 {
            best = (k, sse);
        }
    }
    let mut lo = cs[best.0.saturating_sub(1)];
    let mut hi = cs[(best.0 + 1).min(SCAN - 1)];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c1 = hi - phi * (hi - lo);
    let mut c2 = lo + phi * (hi - lo);
    let mut f1 = exp_linear_subfit(points, c1).2;
    let mut f2 = exp_linear_subfit(points, c2).2;
    for _ in 0..80 {
        if f1 <= f2 {
            hi = c2;
            c2 = c1;
            f2 = f1;
            c1 = hi - phi * (hi - lo);
            f1 = exp_linear_subfit(points, c1).2;
        } else {
            lo = c1;
            c1 = c2;
            f1 = f2;
            c2 = lo + phi * (hi - lo);
            f2 = exp_linear_subfit(points, c2).2;
        }
    }
    let c = 0.5 * (lo + hi);
    let (a, b, sse) = exp_linear_subfit(points, c);
    if !sse.is_finite() || !a.is_finite() || !b.is_finite() {
        return Err(MechanicsError::FitDiverged("exponential diameter fit".into()));
    }
    if a <= 0.0 {
        return Err(MechanicsError::FitDiverged(format!("nonpositive curve floor a = {a} kPa")));
    }
    Ok((a, b, c))
}

fn fit_stretch_curve(points: &[(f64, f64)], r_star_mm: f64) -> StretchCurve {
    let n = points.len() as f64;
    let (mut su, mut suu, mut sy, mut syu) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let u = (1.0 + x / STRETCH_LOG_REF_MM).ln();
        su += u;
        suu += u * u;
        sy += y;
        syu += y * u;
    }
    let det = n * suu - su * su;
    let (alpha, beta) = if det.abs() < 1e-12 * n * suu.max(1e-300) {
        (sy / n, 0.0)
    } else {
        let beta = (n * syu - su * sy) / det;
        if beta < 0.0 {
            (sy / n, 0.0)
        } else {
            ((sy - beta * su) / n, beta)
        }
    };
    StretchCurve { r_star_mm, alpha_kpa: alpha, beta_kpa: beta }
}

/// Build the full modulus model from sphere characterization records:
/// per-trial E* fits, per-stretch exponential diameter curves, and a
/// monotonicity check of E* in stretch over the calibrated diameter range.
pub fn build_modulus_model(
    records: &[IndentationRecord],
) -> Result<ModulusModel, MechanicsError> {
    let spheres: Vec<&IndentationRecord> = records
        .iter()
        .filter(|r| matches!(r.geometry, ProbeGeometry::Sphere { .. }))
        .collect();
    if spheres.is_empty() {
        return Err(MechanicsError::InsufficientData {
            what: "sphere records",
            needed: 1,
            got: 0,
        });
    }

    // Group into per-(stretch, diameter, trial) curves. Keys are quantized to
    // a nanometre so protocol values group exactly.
    let q = |v: f64| (v * 1e6).round() as i64;
    let mut curves: BTreeMap<(i64, i64, u32), Vec<IndentationRecord>> = BTreeMap::new();
    for r in &spheres {
        let radius = match r.geometry {
            ProbeGeometry::Sphere { radius_mm } => radius_mm,
            _ => unreachable!(),
        };
        curves.entry((q(r.stretch_mm), q(2.0 * radius), r.trial)).or_default().push(**r);
    }

    // stretch -> [(diameter, E*)] across diameters and trials.
    let mut per_stretch: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
    let mut rms_accum: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for ((xq, dq, _trial), group) in &curves {
        let fit = fit_modulus(group, DEFAULT_MIN_FIT_DEPTH_MM)?;
        per_stretch.entry(*xq).or_default().push((*dq as f64 * 1e-6, fit.e_star_kpa));
        let acc = rms_accum.entry(*xq).or_insert((0.0, 0));
        acc.0 += fit.rms_n * fit.rms_n * fit.n_used as f64;
        acc.1 += fit.n_used;
    }

    if per_stretch.len() < 2 {
        return Err(MechanicsError::InsufficientData {
            what: "stretch states",
            needed: 2,
            got: per_stretch.len(),
        });
    }

    let mut rows = Vec::with_capacity(per_stretch.len());
    let mut d_min = f64::INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    for (xq, points) in &per_stretch {
        let mut diameters: Vec<f64> = points.iter().map(|p| p.0).collect();
        diameters.sort_by(f64::total_cmp);
        diameters.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        if diameters.len() < 3 {
            return Err(MechanicsError::InsufficientData {
                what: "distinct probe diameters per stretch",
                needed: 3,
                got: diameters.len(),
            });
        }
        d_min = d_min.min(diameters[0]);
        d_max = d_max.max(*diameters.last().unwrap());
        let (a, b, c) = fit_exp_curve(points)?;
        let (sse, n) = rms_accum[xq];
        rows.push(StretchRow {
            x_mm: *xq as f64 * 1e-6,
            a_kpa: a,
            b_kpa: b,
            c_per_mm: c,
            rms_n: (sse / n as f64).sqrt(),
        });
    }

    let model = ModulusModel {
        poisson: MEMBRANE_POISSON,
        rows,
        d_min_mm: d_min,
        d_max_mm: d_max,
        cached_curves: BTreeMap::new(),
    };
    model.verify_monotone()?;
    Ok(model)
}

impl ModulusModel {
    /// E* must be positive and non-decreasing in stretch on a 1 mm diameter
    /// grid spanning the calibrated range.
    pub fn verify_monotone(&self) -> Result<(), MechanicsError> {
        let mut d = self.d_min_mm;
        loop {
            let mut prev: Option<f64> = None;
            for row in &self.rows {
                let e = row.eval_d(d);
                if e <= 0.0 {
                    return Err(MechanicsError::ModelRejected(format!(
                        "E*({d:.1} mm, x = {:.1} mm) = {e:.3} kPa is not positive",
                        row.x_mm
                    )));
                }
                if let Some(p) = prev {
                    if e < p * (1.0 - MONOTONE_REL_SLACK) {
                        return Err(MechanicsError::ModelRejected(format!(
                            "E*({d:.1} mm) drops from {p:.3} to {e:.3} kPa at x = {:.1} mm",
                            row.x_mm
                        )));
                    }
                }
                prev = Some(e);
            }
            if d >= self.d_max_mm - 1e-9 {
                break;
            }
            d = (d + 1.0).min(self.d_max_mm);
        }
        Ok(())
    }

    /// Fit (or fetch) the stretch curve for contact radius `r_star_mm`.
    pub fn stretch_curve(&self, r_star_mm: f64) -> StretchCurve {
        if let Some(c) = self.cached_curves.get(&r_star_mm.to_bits()) {
            return *c;
        }
        let d = 2.0 * r_star_mm;
        let points: Vec<(f64, f64)> =
            self.rows.iter().map(|row| (row.x_mm, row.eval_d(d))).collect();
        fit_stretch_curve(&points, r_star_mm)
    }

    /// Materialize the stretch curve for `r_star_mm`; cached curves are
    /// persisted by `write_calib`.
    pub fn cache_stretch_curve(&mut self, r_star_mm: f64) -> StretchCurve {
        let curve = self.stretch_curve(r_star_mm);
        self.cached_curves.insert(r_star_mm.to_bits(), curve);
        curve
    }

    fn guard_diameter(&self, r_star_mm: f64) -> Result<(), MechanicsError> {
        let d = 2.0 * r_star_mm;
        let lo = self.d_min_mm * (1.0 - DIAMETER_GUARD_FACTOR);
        let hi = self.d_max_mm * (1.0 + DIAMETER_GUARD_FACTOR);
        if !d.is_finite() || d < lo || d > hi {
            return Err(MechanicsError::OutOfRange { name: "contact diameter 2R*", value: d, lo, hi });
        }
        Ok(())
    }

    /// Largest contact radius accepted by the extrapolation guard.
    pub fn max_guarded_radius_mm(&self) -> f64 {
        self.d_max_mm * (1.0 + DIAMETER_GUARD_FACTOR) / 2.0
    }

    pub fn min_guarded_radius_mm(&self) -> f64 {
        self.d_min_mm * (1.0 - DIAMETER_GUARD_FACTOR) / 2.0
    }
}

fn evaluate_e_star(
    model: &ModulusModel,
    r_star_mm: f64,
    x_mm: f64,
) -> Result<f64, MechanicsError> {
    if !x_mm.is_finite() || !(0.0..=80.0).contains(&x_mm) {
        return Err(MechanicsError::OutOfRange { name: "stretch", value: x_mm, lo: 0.0, hi: 80.0 });
    }
    let e = model.stretch_curve(r_star_mm).eval_x(x_mm);
    if !e.is_finite() || e <= 0.0 {
        return Err(MechanicsError::ModelRejected(format!(
            "stretch curve for R* = {r_star_mm:.2} mm gives E* = {e:.3} kPa"
        )));
    }
    Ok(e)
}

pub(crate) fn estimate_force_unguarded(
    model: &ModulusModel,
    r_star_mm: f64,
    x_mm: f64,
    depth_mm: f64,
) -> Result<f64, MechanicsError> {
    let e_star = evaluate_e_star(model, r_star_mm, x_mm)?;
    let params = HertzParams { e_star_kpa: e_star, v: model.poisson, object: super::ObjectElasticity::Rigid };
    hertz_sphere(depth_mm, r_star_mm, &params)
}

/// Predicted load force for a spherical contact of radius R* at stretch x and
/// indentation depth. The contact diameter must sit within the calibrated
/// range plus a 25% extrapolation guard.
pub fn estimate_force(
    model: &ModulusModel,
    r_star_mm: f64,
    x_mm: f64,
    depth_mm: f64,
) -> Result<f64, MechanicsError> {
    model.guard_diameter(r_star_mm)?;
    estimate_force_unguarded(model, r_star_mm, x_mm, depth_mm)
}

/// Depth at which a spherical contact of radius R* at stretch x produces
/// `force_n`: the exact inverse of `estimate_force`.
pub fn invert_depth(
    model: &ModulusModel,
    r_star_mm: f64,
    x_mm: f64,
    force_n: f64,
) -> Result<f64, MechanicsError> {
    model.guard_diameter(r_star_mm)?;
    if !force_n.is_finite() || force_n < 0.0 {
        return Err(MechanicsError::BadInput { name: "force_n", value: force_n });
    }
    let e_star = evaluate_e_star(model, r_star_mm, x_mm)?;
    let e_prime = e_star * 1e3 / (1.0 - model.poisson * model.poisson);
    let r = r_star_mm * 1e-3;
    let depth_m = (3.0 * force_n / (4.0 * e_prime * r.sqrt())).powf(2.0 / 3.0);
    Ok(depth_m * 1e3)
}

pub const CALIB_HEADER: &str = "STRETCH-CALIB v1";

/// Serialize the calibration table: one 5-number line per stretch, then one
/// 3-number line per cached stretch curve.
pub fn format_calib(model: &ModulusModel) -> String {
    let mut out = String::new();
    out.push_str(CALIB_HEADER);
    out.push('\n');
    for row in &model.rows {
        writeln!(
            out,
            "{:.3} {:.6} {:.6} {:.9} {:.9}",
            row.x_mm, row.a_kpa, row.b_kpa, row.c_per_mm, row.rms_n
        )
        .unwrap();
    }
    for curve in model.cached_curves.values() {
        writeln!(out, "{:.3} {:.6} {:.6}", curve.r_star_mm, curve.alpha_kpa, curve.beta_kpa)
            .unwrap();
    }
    out
}

pub fn write_calib(path: &Path, model: &ModulusModel) -> Result<(), MechanicsError> {
    std::fs::write(path, format_calib(model))?;
    Ok(())
}

/// Parse a calibration table. The table does not carry the calibrated
/// diameter range, so the restored model assumes the default operating range.
pub fn parse_calib(text: &str) -> Result<ModulusModel, MechanicsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CALIB_HEADER => {}
        other => {
            return Err(MechanicsError::Parse {
                line: 1,
                msg: format!("expected header `{CALIB_HEADER}`, got {:?}", other.map(|(_, h)| h)),
            })
        }
    }
    let mut rows = Vec::new();
    let mut cached = BTreeMap::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let nums: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let nums = nums.map_err(|e| MechanicsError::Parse { line: lineno, msg: e.to_string() })?;
        match nums.len() {
            5 => rows.push(StretchRow {
                x_mm: nums[0],
                a_kpa: nums[1],
                b_kpa: nums[2],
                c_per_mm: nums[3],
                rms_n: nums[4],
            }),
            3 => {
                let curve =
                    StretchCurve { r_star_mm: nums[0], alpha_kpa: nums[1], beta_kpa: nums[2] };
                cached.insert(curve.r_star_mm.to_bits(), curve);
            }
            n => {
                return Err(MechanicsError::Parse {
                    line: lineno,
                    msg: format!("expected 5 numbers (stretch row) or 3 (cached curve), got {n}"),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(MechanicsError::Parse { line: 1, msg: "no stretch rows".into() });
    }
    Ok(ModulusModel {
        poisson: MEMBRANE_POISSON,
        rows,
        d_min_mm: DEFAULT_DIAMETER_RANGE_MM.0,
        d_max_mm: DEFAULT_DIAMETER_RANGE_MM.1,
        cached_curves: cached,
    })
}

pub fn read_calib(path: &Path) -> Result<ModulusModel, MechanicsError> {
    parse_calib(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Synthetic family that is exactly exponential in diameter and
    /// logarithmic in stretch, so every fit in the pipeline can recover it.
    pub fn synthetic_e_star(d_mm: f64, x_mm: f64) -> f64 {
        let u = (1.0 + x_mm / STRETCH_LOG_REF_MM).ln();
        let a = 3.0 + 1.5 * u;
        let b = 4.0 + 0.8 * u;
        a + b * (-0.12 * d_mm).exp()
    }

    pub fn synthetic_records(
        diameters_mm: &[f64],
        stretches_mm: &[f64],
        depths_mm: &[f64],
        trials: u32,
        noise: impl Fn(usize) -> f64,
    ) -> Vec<IndentationRecord> {
        let mut records = Vec::new();
        let mut k = 0;
        for &x in stretches_mm {
            for &d in diameters_mm {
                for trial in 0..trials {
                    for &depth in depths_mm {
                        let params = HertzParams::rigid(synthetic_e_star(d, x));
                        let f = hertz_sphere(depth, d / 2.0, &params).unwrap();
                        records.push(IndentationRecord {
                            stretch_mm: x,
                            geometry: ProbeGeometry::Sphere { radius_mm: d / 2.0 },
                            depth_mm: depth,
                            force_n: f * (1.0 + noise(k)),
                            trial,
                        });
                        k += 1;
                    }
                }
            }
        }
        records
    }

    pub fn default_grid() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let diameters = vec![10.0, 15.0, 20.0, 25.0, 30.0];
        let stretches = vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0];
        let depths: Vec<f64> = (0..=15).map(|k| k as f64).collect();
        (diameters, stretches, depths)
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fit_modulus_recovers_exact_synthetic_modulus() {
        let depths: Vec<f64> = (0..=15).map(|k| k as f64).collect();
        let params = HertzParams::rigid(6.5);
        let records: Vec<IndentationRecord> = depths
            .iter()
            .map(|&depth| IndentationRecord {
                stretch_mm: 20.0,
                geometry: ProbeGeometry::Sphere { radius_mm: 10.0 },
                depth_mm: depth,
                force_n: hertz_sphere(depth, 10.0, &params).unwrap(),
                trial: 0,
            })
            .collect();
        let fit = fit_modulus(&records, DEFAULT_MIN_FIT_DEPTH_MM).unwrap();
        assert_relative_eq!(fit.e_star_kpa, 6.5, max_relative = 1e-12);
        assert!(fit.rms_n < 1e-12);
        assert_eq!(fit.n_used, 13);
    }

    #[test]
    fn fit_modulus_needs_five_deep_records() {
        let params = HertzParams::rigid(5.0);
        let records: Vec<IndentationRecord> = (0..6)
            .map(|k| IndentationRecord {
                stretch_mm: 0.0,
                geometry: ProbeGeometry::Sphere { radius_mm: 10.0 },
                depth_mm: k as f64, // only 3, 4, 5 clear the default min depth
                force_n: hertz_sphere(k as f64, 10.0, &params).unwrap(),
                trial: 0,
            })
            .collect();
        let err = fit_modulus(&records, DEFAULT_MIN_FIT_DEPTH_MM).unwrap_err();
        assert!(matches!(err, MechanicsError::InsufficientData { got: 3, .. }));
    }

    #[test]
    fn model_build_recovers_synthetic_family() {
        let (diam, stretch, depths) = default_grid();
        let records = synthetic_records(&diam, &stretch, &depths, 1, |_| 0.0);
        let model = build_modulus_model(&records).unwrap();
        assert_eq!(model.rows.len(), 7);
        assert_eq!(model.d_min_mm, 10.0);
        assert_eq!(model.d_max_mm, 30.0);
        for row in &model.rows {
            for d in [10.0, 17.0, 25.0, 30.0] {
                assert_relative_eq!(
                    row.eval_d(d),
                    synthetic_e_star(d, row.x_mm),
                    max_relative = 1e-4
                );
            }
        }
        // Stretch curve through the per-stretch values reproduces the family.
        let curve = model.stretch_curve(10.0);
        for x in [0.0, 15.0, 30.0, 45.0, 60.0] {
            assert_relative_eq!(curve.eval_x(x), synthetic_e_star(20.0, x), max_relative = 1e-3);
        }
    }

    #[test]
    fn estimate_and_invert_round_trip() {
        let (diam, stretch, depths) = default_grid();
        let records = synthetic_records(&diam, &stretch, &depths, 1, |_| 0.0);
        let model = build_modulus_model(&records).unwrap();
        for &r_star in &[6.0, 10.0, 14.0] {
            for &x in &[0.0, 25.0, 60.0] {
                for &depth in &[1.0, 5.0, 12.0] {
                    let f = estimate_force(&model, r_star, x, depth).unwrap();
                    let back = invert_depth(&model, r_star, x, f).unwrap();
                    assert_relative_eq!(back, depth, max_relative = 1e-9);
                }
            }
        }
    }

    #[test]
    fn diameter_guard_rejects_far_extrapolation() {
        let (diam, stretch, depths) = default_grid();
        let records = synthetic_records(&diam, &stretch, &depths, 1, |_| 0.0);
        let model = build_modulus_model(&records).unwrap();
        // 2R* = 37.5 mm is the guard edge for a 10..30 mm calibration.
        assert!(estimate_force(&model, 18.75, 0.0, 5.0).is_ok());
        assert!(matches!(
            estimate_force(&model, 19.0, 0.0, 5.0),
            Err(MechanicsError::OutOfRange { .. })
        ));
        assert!(matches!(
            estimate_force(&model, 3.0, 0.0, 5.0),
            Err(MechanicsError::OutOfRange { .. })
        ));
    }

    #[test]
    fn rejects_stretch_softening_data() {
        let (diam, stretch, depths) = default_grid();
        // Invert the stretch axis: E* now decreases with x.
        let mut records = synthetic_records(&diam, &stretch, &depths, 1, |_| 0.0);
        for r in &mut records {
            r.stretch_mm = 60.0 - r.stretch_mm;
        }
        let err = build_modulus_model(&records).unwrap_err();
        assert!(matches!(err, MechanicsError::ModelRejected(_)));
    }

    #[test]
    fn calib_table_round_trips_bit_exactly() {
        let (diam, stretch, depths) = default_grid();
        let records = synthetic_records(&diam, &stretch, &depths, 1, |_| 0.0);
        let mut model = build_modulus_model(&records).unwrap();
        model.cache_stretch_curve(10.0);
        model.cache_stretch_curve(12.5);
        let text = format_calib(&model);
        let parsed = parse_calib(&text).unwrap();
        assert_eq!(format_calib(&parsed), text);
        assert_eq!(parsed.rows.len(), 7);
        assert_eq!(parsed.cached_curves.len(), 2);
    }

    #[test]
    fn cached_curve_is_used_verbatim() {
        let (diam, stretch, depths) = default_grid();
        let records = synthetic_records(&diam, &stretch, &depths, 1, |_| 0.0);
        let mut model = build_modulus_model(&records).unwrap();
        let fresh = model.stretch_curve(11.0);
        let cached = model.cache_stretch_curve(11.0);
        assert_eq!(fresh, cached);
        assert_eq!(model.stretch_curve(11.0), cached);
    }
}
