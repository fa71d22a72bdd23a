//! Closed-form indentation force templates for the three probe families.
//!
//! The sphere form carries an optional object-compliance term; the flat-punch
//! and cone forms are for rigid probes, which is how they are used during
//! characterization.

use super::{MechanicsError, MEMBRANE_POISSON};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectElasticity {
    Rigid,
    Elastic { e_o_kpa: f64, v_o: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HertzParams {
    /// Effective membrane modulus E* in kPa.
    pub e_star_kpa: f64,
    /// Membrane Poisson ratio.
    pub v: f64,
    pub object: ObjectElasticity,
}

impl HertzParams {
    pub fn rigid(e_star_kpa: f64) -> Self {
        Self { e_star_kpa, v: MEMBRANE_POISSON, object: ObjectElasticity::Rigid }
    }

    fn validate(&self) -> Result<(), MechanicsError> {
        check_positive("e_star_kpa", self.e_star_kpa)?;
        check_fraction("v", self.v)?;
        if let ObjectElasticity::Elastic { e_o_kpa, v_o } = self.object {
            check_positive("e_o_kpa", e_o_kpa)?;
            check_fraction("v_o", v_o)?;
        }
        Ok(())
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), MechanicsError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(MechanicsError::BadInput { name, value });
    }
    Ok(())
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), MechanicsError> {
    if !value.is_finite() || !(0.0..0.5 + 1e-12).contains(&value) {
        return Err(MechanicsError::BadInput { name, value });
    }
    Ok(())
}

fn check_nonnegative(name: &'static str, value: f64) -> Result<(), MechanicsError> {
    if !value.is_finite() || value < 0.0 {
        return Err(MechanicsError::BadInput { name, value });
    }
    Ok(())
}

/// Indentation force (N) of a sphere of radius `radius_mm` at depth `depth_mm`.
///
/// F = (4/3) sqrt(d^3 R) / [ (1 - v^2)/E* + (1 - v_o^2)/E_o ]; a rigid object
/// drops the second compliance term.
pub fn hertz_sphere(
    depth_mm: f64,
    radius_mm: f64,
    params: &HertzParams,
) -> Result<f64, MechanicsError> {
    params.validate()?;
    check_nonnegative("depth_mm", depth_mm)?;
    check_positive("radius_mm", radius_mm)?;
    let d = depth_mm * 1e-3;
    let r = radius_mm * 1e-3;
    let mut compliance = (1.0 - params.v * params.v) / (params.e_star_kpa * 1e3);
    if let ObjectElasticity::Elastic { e_o_kpa, v_o } = params.object {
        compliance += (1.0 - v_o * v_o) / (e_o_kpa * 1e3);
    }
    Ok((4.0 / 3.0) * (d * d * d * r).sqrt() / compliance)
}

/// Indentation force (N) of a flat-ended cylindrical punch of radius
/// `radius_mm` pressed along its axis: F = 2 R d E*.
pub fn hertz_cylinder(
    depth_mm: f64,
    radius_mm: f64,
    params: &HertzParams,
) -> Result<f64, MechanicsError> {
    params.validate()?;
    check_nonnegative("depth_mm", depth_mm)?;
    check_positive("radius_mm", radius_mm)?;
    if let ObjectElasticity::Elastic { e_o_kpa, .. } = params.object {
        return Err(MechanicsError::BadInput { name: "e_o_kpa (punch form is rigid-probe only)", value: e_o_kpa });
    }
    let d = depth_mm * 1e-3;
    let r = radius_mm * 1e-3;
    Ok(2.0 * r * d * params.e_star_kpa * 1e3)
}

/// Indentation force (N) of a cone whose surface makes `surface_angle_deg`
/// with the undeformed membrane plane: F = 2 d^2 E* / (pi (1 - v^2) tan(theta)).
pub fn hertz_cone(
    depth_mm: f64,
    surface_angle_deg: f64,
    params: &HertzParams,
) -> Result<f64, MechanicsError> {
    params.validate()?;
    check_nonnegative("depth_mm", depth_mm)?;
    if !surface_angle_deg.is_finite() || surface_angle_deg <= 0.0 || surface_angle_deg >= 90.0 {
        return Err(MechanicsError::BadInput { name: "surface_angle_deg", value: surface_angle_deg });
    }
    if let ObjectElasticity::Elastic { e_o_kpa, .. } = params.object {
        return Err(MechanicsError::BadInput { name: "e_o_kpa (cone form is rigid-probe only)", value: e_o_kpa });
    }
    let d = depth_mm * 1e-3;
    let theta = surface_angle_deg.to_radians();
    let e_star = params.e_star_kpa * 1e3;
    Ok(2.0 * d * d * e_star / (std::f64::consts::PI * (1.0 - params.v * params.v) * theta.tan()))
}
