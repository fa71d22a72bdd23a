//! Rigid indenter geometry: exact signed distance fields for the probe
//! primitives, arbitrary rigid poses, unions, and the vertical top-surface
//! query the contact solver consumes.
//!
//! Frame convention: the membrane rest plane is z = 0 with z growing toward
//! the camera; objects sit below and press their top surfaces up into the
//! sheet, so contact needs the highest z of the body under each (x, y).

use nalgebra::{Isometry3, Point3, Vector2};

use super::SimError;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere { radius_mm: f64 },
    /// Flat-ended cylinder, axis along local z.
    Cylinder { radius_mm: f64, length_mm: f64 },
    /// Solid cone, base disk at the bottom, apex pointing along local +z.
    /// `surface_angle_deg` is measured between the slanted surface and the
    /// base plane.
    Cone { surface_angle_deg: f64, base_radius_mm: f64 },
    Cuboid { half_extents_mm: [f64; 3] },
    /// Ring lying in the local xy plane (a bent wire), axis along local z.
    Torus { ring_radius_mm: f64, tube_radius_mm: f64 },
}

impl Shape {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |name: &'static str, value: f64| SimError::BadShape { name, value };
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(name, v))
            }
        };
        match *self {
            Shape::Sphere { radius_mm } => pos("sphere radius", radius_mm),
            Shape::Cylinder { radius_mm, length_mm } => {
                pos("cylinder radius", radius_mm)?;
                pos("cylinder length", length_mm)
            }
            Shape::Cone { surface_angle_deg, base_radius_mm } => {
                pos("cone base radius", base_radius_mm)?;
                if surface_angle_deg > 0.0 && surface_angle_deg < 90.0 {
                    Ok(())
                } else {
                    Err(bad("cone surface angle", surface_angle_deg))
                }
            }
            Shape::Cuboid { half_extents_mm } => {
                for v in half_extents_mm {
                    pos("cuboid half extent", v)?;
                }
                Ok(())
            }
            Shape::Torus { ring_radius_mm, tube_radius_mm } => {
                pos("torus ring radius", ring_radius_mm)?;
                pos("torus tube radius", tube_radius_mm)?;
                if tube_radius_mm < ring_radius_mm {
                    Ok(())
                } else {
                    Err(bad("torus tube radius", tube_radius_mm))
                }
            }
        }
    }

    /// Exact signed distance in the shape's local frame (negative inside).
    pub fn sdf_local(&self, p: Point3<f64>) -> f64 {
        match *self {
            Shape::Sphere { radius_mm } => p.coords.norm() - radius_mm,
            Shape::Cylinder { radius_mm, length_mm } => {
                let d = Vector2::new(
                    (p.x * p.x + p.y * p.y).sqrt() - radius_mm,
                    p.z.abs() - 0.5 * length_mm,
                );
                let outside = Vector2::new(d.x.max(0.0), d.y.max(0.0)).norm();
                let inside = d.x.max(d.y).min(0.0);
                outside + inside
            }
            Shape::Cone { surface_angle_deg, base_radius_mm } => {
                // Capped cone between z = -h and z = +h with radii r1 -> r2.
                let height = base_radius_mm * surface_angle_deg.to_radians().tan();
                let h = 0.5 * height;
                let (r1, r2) = (base_radius_mm, 0.0f64);
                let q = Vector2::new((p.x * p.x + p.y * p.y).sqrt(), p.z);
                let k1 = Vector2::new(r2, h);
                let k2 = Vector2::new(r2 - r1, 2.0 * h);
                let ca = Vector2::new(
                    q.x - q.x.min(if q.y < 0.0 { r1 } else { r2 }),
                    q.y.abs() - h,
                );
                let t = ((k1 - q).dot(&k2) / k2.norm_squared()).clamp(0.0, 1.0);
                let cb = q - k1 + k2 * t;
                let s = if cb.x < 0.0 && ca.y < 0.0 { -1.0 } else { 1.0 };
                s * ca.norm_squared().min(cb.norm_squared()).sqrt()
            }
            Shape::Cuboid { half_extents_mm } => {
                let d = [
                    p.x.abs() - half_extents_mm[0],
                    p.y.abs() - half_extents_mm[1],
                    p.z.abs() - half_extents_mm[2],
                ];
                let outside =
                    (d[0].max(0.0).powi(2) + d[1].max(0.0).powi(2) + d[2].max(0.0).powi(2)).sqrt();
                let inside = d[0].max(d[1]).max(d[2]).min(0.0);
                outside + inside
            }
            Shape::Torus { ring_radius_mm, tube_radius_mm } => {
                let q = Vector2::new(
                    (p.x * p.x + p.y * p.y).sqrt() - ring_radius_mm,
                    p.z,
                );
                q.norm() - tube_radius_mm
            }
        }
    }

    /// Loose bounding radius around the local origin.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius_mm } => radius_mm,
            Shape::Cylinder { radius_mm, length_mm } => {
                (radius_mm * radius_mm + 0.25 * length_mm * length_mm).sqrt()
            }
            Shape::Cone { surface_angle_deg, base_radius_mm } => {
                let h = 0.5 * base_radius_mm * surface_angle_deg.to_radians().tan();
                (base_radius_mm * base_radius_mm + h * h).sqrt()
            }
            Shape::Cuboid { half_extents_mm } => {
                (half_extents_mm[0].powi(2)
                    + half_extents_mm[1].powi(2)
                    + half_extents_mm[2].powi(2))
                .sqrt()
            }
            Shape::Torus { ring_radius_mm, tube_radius_mm } => ring_radius_mm + tube_radius_mm,
        }
    }
}

/// A rigid body: a union of posed primitives ("composite" bodies are unions).
#[derive(Debug, Clone)]
pub struct Body {
    parts: Vec<(Shape, Isometry3<f64>)>,
}

impl Body {
    pub fn single(shape: Shape, pose: Isometry3<f64>) -> Result<Self, SimError> {
        shape.validate()?;
        Ok(Self { parts: vec![(shape, pose)] })
    }

    pub fn union(parts: Vec<(Shape, Isometry3<f64>)>) -> Result<Self, SimError> {
        if parts.is_empty() {
            return Err(SimError::BadShape { name: "empty body", value: 0.0 });
        }
        for (shape, _) in &parts {
            shape.validate()?;
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[(Shape, Isometry3<f64>)] {
        &self.parts
    }

    /// Signed distance in the world frame; a min over parts stays Lipschitz-1
    /// because every part SDF is exact.
    pub fn sdf(&self, p: Point3<f64>) -> f64 {
        self.parts
            .iter()
            .map(|(shape, pose)| shape.sdf_local(pose.inverse_transform_point(&p)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Highest z of the body over the world-frame z interval
    /// [z_floor, z_ceiling] at column (x, y), or None if the vertical ray
    /// misses. Sphere tracing downward from the ceiling: Lipschitz-1 distance
    /// makes every step safe.
    pub fn top_surface(&self, x: f64, y: f64, z_floor: f64, z_ceiling: f64) -> Option<f64> {
        const HIT_MM: f64 = 1e-7;
        const MAX_STEPS: usize = 256;
        let mut z = z_ceiling;
        for _ in 0..MAX_STEPS {
            let d = self.sdf(Point3::new(x, y, z));
            if d < HIT_MM {
                return Some(z);
            }
            z -= d;
            if z < z_floor {
                return None;
            }
        }
        // Grazing column: the march stalled near the surface without meeting
        // the hit tolerance. Treat sub-0.05 mm residuals as a tangential hit.
        let d = self.sdf(Point3::new(x, y, z));
        if d < 0.05 {
            Some(z)
        } else {
            None
        }
    }

    /// Maximum of `top_surface` over a rectangle [0,w] x [0,l] sampled at the
    /// given pitch — used to normalize scenes so first touch is at zero.
    pub fn max_top_over(&self, w: f64, l: f64, pitch: f64, z_floor: f64, z_ceiling: f64) -> Option<f64> {
        let nx = (w / pitch).round() as usize + 1;
        let ny = (l / pitch).round() as usize + 1;
        let mut best: Option<f64> = None;
        for i in 0..nx {
            for j in 0..ny {
                if let Some(t) =
                    self.top_surface(i as f64 * pitch, j as f64 * pitch, z_floor, z_ceiling)
                {
                    best = Some(best.map_or(t, |b: f64| b.max(t)));
                }
            }
        }
        best
    }
}
