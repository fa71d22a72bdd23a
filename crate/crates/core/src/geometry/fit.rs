//! Contact-patch measurement: sphere fitting and through-centroid diameters.

use nalgebra::{Matrix4, Vector3, Vector4};

use super::segment::ContactPatch;
use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereFit {
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
    /// Root-mean-square point-to-surface distance, mm.
    pub rms_mm: f64,
}

const MIN_SPHERE_POINTS: usize = 10;
/// Points whose out-of-plane spread is below this are treated as coplanar.
const COPLANAR_SPREAD_MM: f64 = 0.02;

/// Least-squares sphere through the patch points: algebraic (Kasa) solve for
/// the initial guess, then geometric Gauss-Newton on the radial residuals.
pub fn fit_sphere(patch: &ContactPatch) -> Result<SphereFit, GeometryError> {
    let pts = &patch.points;
    if pts.len() < MIN_SPHERE_POINTS {
        return Err(GeometryError::InsufficientData {
            what: "sphere-fit points",
            needed: MIN_SPHERE_POINTS,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mut mean = Vector3::zeros();
    for p in pts {
        mean += Vector3::new(p[0], p[1], p[2]);
    }
    mean /= n;
    // Out-of-plane spread = smallest eigenvalue of the point covariance.
    let mut cov = nalgebra::Matrix3::zeros();
    for p in pts {
        let d = Vector3::new(p[0], p[1], p[2]) - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let spread = cov
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
        .sqrt();
    if spread < COPLANAR_SPREAD_MM {
        return Err(GeometryError::DegenerateFit(format!(
            "points are coplanar within {spread:.4} mm"
        )));
    }

    // Kasa: |p|^2 = 2 c . p + d, r^2 = |c|^2 + d. Centered coordinates keep
    // the normal matrix well scaled.
    let mut a = Matrix4::zeros();
    let mut b = Vector4::zeros();
    for p in pts {
        let q = Vector3::new(p[0], p[1], p[2]) - mean;
        let row = Vector4::new(2.0 * q.x, 2.0 * q.y, 2.0 * q.z, 1.0);
        a += row * row.transpose();
        b += row * q.norm_squared();
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| GeometryError::DegenerateFit("algebraic sphere system singular".into()))?;
    let mut center = Vector3::new(sol[0], sol[1], sol[2]);
    let r2 = center.norm_squared() + sol[3];
    if !(r2 > 0.0 && r2.is_finite()) {
        return Err(GeometryError::DegenerateFit(format!("algebraic radius^2 = {r2:.3}")));
    }
    let mut radius = r2.sqrt();

    // Geometric refinement on f_k = |p_k - c| - r.
    for _ in 0..24 {
        let mut jtj = Matrix4::zeros();
        let mut jtf = Vector4::zeros();
        for p in pts {
            let d = Vector3::new(p[0], p[1], p[2]) - mean - center;
            let dist = d.norm();
            if dist < 1e-9 {
                continue;
            }
            let u = d / dist;
            let jac = Vector4::new(-u.x, -u.y, -u.z, -1.0);
            jtj += jac * jac.transpose();
            jtf += jac * (dist - radius);
        }
        let step = match jtj.lu().solve(&jtf) {
            Some(s) => s,
            None => break,
        };
        center -= Vector3::new(step[0], step[1], step[2]);
        radius -= step[3];
        if step.norm() < 1e-12 * radius.abs().max(1.0) {
            break;
        }
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(GeometryError::DegenerateFit(format!("refined radius = {radius:.3}")));
    }
    let mut ss = 0.0;
    for p in pts {
        let d = (Vector3::new(p[0], p[1], p[2]) - mean - center).norm() - radius;
        ss += d * d;
    }
    let c = mean + center;
    Ok(SphereFit {
        center_mm: [c.x, c.y, c.z],
        radius_mm: radius,
        rms_mm: (ss / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiameterMeasure {
    /// Extent along the i (unstretched) axis, mm.
    pub d_i_mm: f64,
    /// Extent along the j (stretch) axis, mm; pitch already stretch-corrected.
    pub d_j_mm: f64,
}

/// Chord extents of the patch through its centroid. If the exact centroid
/// row/column holds no patch pixel, the nearest populated band is used.
pub fn measure_diameters(patch: &ContactPatch) -> Result<DiameterMeasure, GeometryError> {
    if patch.is_empty() {
        return Err(GeometryError::InsufficientData {
            what: "patch pixels",
            needed: 1,
            got: 0,
        });
    }
    let ic = (patch.centroid[0] / patch.pitch_i_mm).round() as i64;
    let jc = (patch.centroid[1] / patch.pitch_j_mm).round() as i64;

    // Chord along i reads pixels in the centroid column; if that exact column
    // holds none, the band widens until it does.
    let d_i_mm = {
        let mut width = 0i64;
        loop {
            let mut lo = i64::MAX;
            let mut hi = i64::MIN;
            for &(i, j) in &patch.pixels {
                if (j as i64 - jc).abs() <= width {
                    lo = lo.min(i as i64);
                    hi = hi.max(i as i64);
                }
            }
            if lo <= hi {
                break ((hi - lo + 1) as f64) * patch.pitch_i_mm;
            }
            width += 1;
        }
    };
    let d_j_mm = {
        let mut width = 0i64;
        loop {
            let mut lo = i64::MAX;
            let mut hi = i64::MIN;
            for &(i, j) in &patch.pixels {
                if (i as i64 - ic).abs() <= width {
                    lo = lo.min(j as i64);
                    hi = hi.max(j as i64);
                }
            }
            if lo <= hi {
                break ((hi - lo + 1) as f64) * patch.pitch_j_mm;
            }
            width += 1;
        }
    };
    Ok(DiameterMeasure { d_i_mm, d_j_mm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2;
    use crate::rng::stream;
    use rand_distr::{Distribution, Normal};

    fn cap_patch(r: f64, depth: f64, pitch: f64, noise: f64, seed: u64) -> ContactPatch {
        // Pixels sampling a spherical cap of the given indentation depth.
        let span = 40.0;
        let n = (span / pitch) as usize + 1;
        let c = span / 2.0;
        let mut rng = stream(seed, &[0x636170]);
        let dist = Normal::new(0.0, noise.max(1e-12)).unwrap();
        let mut pixels = Vec::new();
        let mut points = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let x = i as f64 * pitch;
                let y = j as f64 * pitch;
                let d2 = (x - c) * (x - c) + (y - c) * (y - c);
                let q = r * r - d2;
                if q <= 0.0 {
                    continue;
                }
                let z = depth - r + q.sqrt();
                if z <= 0.0 {
                    continue;
                }
                let z = if noise > 0.0 { z + dist.sample(&mut rng) } else { z };
                pixels.push((i, j));
                points.push([x, y, z]);
            }
        }
        let nn = points.len() as f64;
        let mut centroid = [0.0; 3];
        for p in &points {
            for k in 0..3 {
                centroid[k] += p[k] / nn;
            }
        }
        ContactPatch { pixels, points, centroid, pitch_i_mm: pitch, pitch_j_mm: pitch }
    }

    #[test]
    fn exact_cap_recovers_radius_to_machine_precision() {
        let patch = cap_patch(15.0, 6.0, 0.5, 0.0, 1);
        let fit = fit_sphere(&patch).unwrap();
        assert!(
            (fit.radius_mm - 15.0).abs() / 15.0 < 1e-6,
            "radius {} rms {}",
            fit.radius_mm,
            fit.rms_mm
        );
        assert!(fit.rms_mm < 1e-9);
        assert!((fit.center_mm[0] - 20.0).abs() < 1e-6);
        assert!((fit.center_mm[2] - (6.0 - 15.0)).abs() < 1e-6);
    }

    #[test]
    fn noisy_caps_recover_radius_within_five_percent() {
        let mut worst: f64 = 0.0;
        for seed in 0..20u64 {
            let patch = cap_patch(15.0, 8.0, 0.5, 0.33, seed);
            let fit = fit_sphere(&patch).unwrap();
            worst = worst.max((fit.radius_mm - 15.0).abs() / 15.0);
        }
        assert!(worst < 0.05, "worst relative radius error {worst:.4}");
    }

    #[test]
    fn coplanar_patch_is_rejected() {
        let pitch = 0.5;
        let mut pixels = Vec::new();
        let mut points = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                pixels.push((i, j));
                points.push([i as f64 * pitch, j as f64 * pitch, 5.0]);
            }
        }
        let patch = ContactPatch {
            pixels,
            points,
            centroid: [1.75, 1.75, 5.0],
            pitch_i_mm: pitch,
            pitch_j_mm: pitch,
        };
        match fit_sphere(&patch) {
            Err(GeometryError::DegenerateFit(_)) => {}
            other => panic!("expected degenerate fit, got {other:?}"),
        }
    }

    #[test]
    fn tiny_patch_is_rejected() {
        let patch = ContactPatch {
            pixels: vec![(0, 0), (0, 1)],
            points: vec![[0.0, 0.0, 1.0], [0.0, 0.5, 1.1]],
            centroid: [0.0, 0.25, 1.05],
            pitch_i_mm: 0.5,
            pitch_j_mm: 0.5,
        };
        assert!(matches!(
            fit_sphere(&patch),
            Err(GeometryError::InsufficientData { .. })
        ));
    }

    #[test]
    fn diameters_match_cap_footprint() {
        let (r, depth, pitch) = (12.0, 7.0, 0.5);
        let patch = cap_patch(r, depth, pitch, 0.0, 3);
        let d = measure_diameters(&patch).unwrap();
        // Footprint chord where the cap meets z = 0.
        let rho = (r * r - (r - depth) * (r - depth)).sqrt();
        assert!((d.d_i_mm - 2.0 * rho).abs() <= 2.0 * pitch, "{} vs {}", d.d_i_mm, 2.0 * rho);
        assert!((d.d_j_mm - 2.0 * rho).abs() <= 2.0 * pitch);
    }

    #[test]
    fn single_pixel_patch_measures_one_pitch() {
        let patch = ContactPatch {
            pixels: vec![(4, 7)],
            points: vec![[2.0, 3.5, 2.0]],
            centroid: [2.0, 3.5, 2.0],
            pitch_i_mm: 0.5,
            pitch_j_mm: 0.8,
        };
        let d = measure_diameters(&patch).unwrap();
        assert!((d.d_i_mm - 0.5).abs() < 1e-12);
        assert!((d.d_j_mm - 0.8).abs() < 1e-12);
    }

    #[test]
    fn diameters_are_translation_invariant_within_a_pixel() {
        let base = cap_patch(12.0, 7.0, 0.5, 0.0, 4);
        let d0 = measure_diameters(&base).unwrap();
        for shift in [(3i64, 5i64), (11, 2), (7, 9)] {
            let pixels: Vec<(usize, usize)> = base
                .pixels
                .iter()
                .map(|&(i, j)| ((i as i64 + shift.0) as usize, (j as i64 + shift.1) as usize))
                .collect();
            let points: Vec<[f64; 3]> = base
                .points
                .iter()
                .map(|p| [p[0] + shift.0 as f64 * 0.5, p[1] + shift.1 as f64 * 0.5, p[2]])
                .collect();
            let centroid = [
                base.centroid[0] + shift.0 as f64 * 0.5,
                base.centroid[1] + shift.1 as f64 * 0.5,
                base.centroid[2],
            ];
            let moved = ContactPatch {
                pixels,
                points,
                centroid,
                pitch_i_mm: 0.5,
                pitch_j_mm: 0.5,
            };
            let d = measure_diameters(&moved).unwrap();
            assert!((d.d_i_mm - d0.d_i_mm).abs() <= 0.5 + 1e-12);
            assert!((d.d_j_mm - d0.d_j_mm).abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn grid_noise_does_not_break_sphere_fit_on_masked_cap() {
        // Same pipeline shape as production: cap heights on a grid, fit only
        // pixels above a band.
        let pitch = 0.5;
        let r = 18.0;
        let depth = 9.0;
        let g = Grid2::from_fn(81, 81, |i, j| {
            let x = i as f64 * pitch - 20.0;
            let y = j as f64 * pitch - 20.0;
            let q = r * r - x * x - y * y;
            if q <= 0.0 {
                0.0
            } else {
                (depth - r + q.sqrt()).max(0.0)
            }
        });
        let mut pixels = Vec::new();
        let mut points = Vec::new();
        for (i, j, &z) in g.iter_indexed() {
            if z > 1.0 {
                pixels.push((i, j));
                points.push([i as f64 * pitch, j as f64 * pitch, z]);
            }
        }
        let n = points.len() as f64;
        let mut centroid = [0.0; 3];
        for p in &points {
            for k in 0..3 {
                centroid[k] += p[k] / n;
            }
        }
        let patch = ContactPatch { pixels, points, centroid, pitch_i_mm: pitch, pitch_j_mm: pitch };
        let fit = fit_sphere(&patch).unwrap();
        assert!((fit.radius_mm - r).abs() / r < 1e-6);
    }
}
