//! Leave-one-diameter-out validation of the modulus model.

use std::collections::BTreeSet;

use super::modulus::estimate_force_unguarded;
use super::records::{IndentationRecord, ProbeGeometry};
use super::{build_modulus_model, MechanicsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LooReport {
    pub mean_abs_err_n: f64,
    pub std_abs_err_n: f64,
    /// Spread (max - min) of observed forces across the full record set.
    pub range_n: f64,
    pub folds: usize,
    pub predictions: usize,
}

impl LooReport {
    pub fn mean_err_fraction_of_range(&self) -> f64 {
        self.mean_abs_err_n / self.range_n
    }
}

/// Hold out each probe diameter in turn, rebuild the model from the rest and
/// predict the held-out forces. Prediction intentionally bypasses the
/// extrapolation guard: the extreme folds sit one diameter outside the
/// reduced calibration range by construction.
pub fn loo_validate(records: &[IndentationRecord]) -> Result<LooReport, MechanicsError> {
    let q = |v: f64| (v * 1e6).round() as i64;
    let diameters: BTreeSet<i64> = records
        .iter()
        .filter_map(|r| match r.geometry {
            ProbeGeometry::Sphere { radius_mm } => Some(q(2.0 * radius_mm)),
            _ => None,
        })
        .collect();
    if diameters.len() < 3 {
        return Err(MechanicsError::InsufficientData {
            what: "distinct sphere diameters",
            needed: 3,
            got: diameters.len(),
        });
    }

    let mut f_min = f64::INFINITY;
    let mut f_max = f64::NEG_INFINITY;
    for r in records {
        f_min = f_min.min(r.force_n);
        f_max = f_max.max(r.force_n);
    }

    let mut errors = Vec::new();
    for &held in &diameters {
        let keep: Vec<IndentationRecord> = records
            .iter()
            .filter(|r| match r.geometry {
                ProbeGeometry::Sphere { radius_mm } => q(2.0 * radius_mm) != held,
                _ => false,
            })
            .copied()
            .collect();
        let model = build_modulus_model(&keep)?;
        let r_star = held as f64 * 1e-6 / 2.0;
        for r in records {
            let is_held = match r.geometry {
                ProbeGeometry::Sphere { radius_mm } => q(2.0 * radius_mm) == held,
                _ => false,
            };
            if !is_held {
                continue;
            }
            let pred = estimate_force_unguarded(&model, r_star, r.stretch_mm, r.depth_mm)?;
            errors.push((pred - r.force_n).abs());
        }
    }

    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(LooReport {
        mean_abs_err_n: mean,
        std_abs_err_n: var.sqrt(),
        range_n: f_max - f_min,
        folds: diameters.len(),
        predictions: errors.len(),
    })
}
