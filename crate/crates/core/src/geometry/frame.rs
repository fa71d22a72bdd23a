//! Depth frames and their on-disk format.
//!
//! A frame samples the membrane surface on the node grid: pixel (i, j) sits at
//! metric (i * pitch_i, j * pitch_j), and pitch_j carries the uniform stretch
//! factor (rest + x) / rest. Depth is distance from the camera in mm.

use std::fmt::Write as _;
use std::path::Path;

use super::GeometryError;
use crate::grid::Grid2;
use crate::{MAX_STRETCH_MM, REST_LENGTH_MM};

pub const DEPTH_FRAME_HEADER: &str = "STRETCH-DEPTH v1";
const DEPTH_LIMIT_MM: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub pitch_i_mm: f64,
    pub pitch_j_mm: f64,
    pub stretch_mm: f64,
    /// Gripper separation (rest length + stretch), mm.
    pub throw_mm: f64,
    pub depth_mm: Grid2<f64>,
}

impl DepthFrame {
    pub fn new(
        pitch_i_mm: f64,
        pitch_j_mm: f64,
        stretch_mm: f64,
        throw_mm: f64,
        depth_mm: Grid2<f64>,
    ) -> Result<Self, GeometryError> {
        let frame = Self { pitch_i_mm, pitch_j_mm, stretch_mm, throw_mm, depth_mm };
        frame.validate()?;
        Ok(frame)
    }

    pub fn rows(&self) -> usize {
        self.depth_mm.rows()
    }

    pub fn cols(&self) -> usize {
        self.depth_mm.cols()
    }

    fn validate(&self) -> Result<(), GeometryError> {
        if self.rows() < 2 || self.cols() < 2 {
            return Err(GeometryError::BadFrame(format!(
                "{}x{} frame is too small",
                self.rows(),
                self.cols()
            )));
        }
        if !(self.pitch_i_mm > 0.0) || !(self.pitch_j_mm > 0.0) {
            return Err(GeometryError::BadFrame("pixel pitch must be positive".into()));
        }
        if !(0.0..=MAX_STRETCH_MM).contains(&self.stretch_mm) {
            return Err(GeometryError::OutOfRange {
                name: "stretch",
                value: self.stretch_mm,
                lo: 0.0,
                hi: MAX_STRETCH_MM,
            });
        }
        if !(REST_LENGTH_MM..=REST_LENGTH_MM + MAX_STRETCH_MM).contains(&self.throw_mm) {
            return Err(GeometryError::OutOfRange {
                name: "throw",
                value: self.throw_mm,
                lo: REST_LENGTH_MM,
                hi: REST_LENGTH_MM + MAX_STRETCH_MM,
            });
        }
        for (i, j, &d) in self.depth_mm.iter_indexed() {
            if !d.is_finite() || !(0.0..=DEPTH_LIMIT_MM).contains(&d) {
                return Err(GeometryError::BadFrame(format!(
                    "depth {d} mm at pixel ({i}, {j}) outside [0, {DEPTH_LIMIT_MM}]"
                )));
            }
        }
        Ok(())
    }
}

/// Crop `margin_mm` of border (grip lines, lens falloff) from every side.
pub fn mask_membrane(frame: &DepthFrame, margin_mm: f64) -> Result<DepthFrame, GeometryError> {
    if !(margin_mm >= 0.0) {
        return Err(GeometryError::OutOfRange {
            name: "mask margin",
            value: margin_mm,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let keep = |count: usize, pitch: f64| -> Option<(usize, usize)> {
        let extent = (count - 1) as f64 * pitch;
        let lo = (margin_mm / pitch - 1e-9).ceil().max(0.0) as usize;
        let hi = ((extent - margin_mm) / pitch + 1e-9).floor() as usize;
        (hi > lo + 1).then_some((lo, hi))
    };
    let (i0, i1) = keep(frame.rows(), frame.pitch_i_mm).ok_or_else(|| {
        GeometryError::BadFrame(format!("margin {margin_mm} mm leaves no rows"))
    })?;
    let (j0, j1) = keep(frame.cols(), frame.pitch_j_mm).ok_or_else(|| {
        GeometryError::BadFrame(format!("margin {margin_mm} mm leaves no columns"))
    })?;
    let depth = Grid2::from_fn(i1 - i0 + 1, j1 - j0 + 1, |i, j| frame.depth_mm[(i + i0, j + j0)]);
    Ok(DepthFrame {
        pitch_i_mm: frame.pitch_i_mm,
        pitch_j_mm: frame.pitch_j_mm,
        stretch_mm: frame.stretch_mm,
        throw_mm: frame.throw_mm,
        depth_mm: depth,
    })
}

/// Header: `STRETCH-DEPTH v1 <rows> <cols> <pitch_i_um> <pitch_j_um>
/// <stretch_mm> <throw_mm>`, then one line of 3-decimal mm depths per row.
pub fn format_depth_frame(frame: &DepthFrame) -> String {
    let mut out = String::with_capacity(frame.rows() * frame.cols() * 8 + 64);
    writeln!(
        out,
        "{DEPTH_FRAME_HEADER} {} {} {:.3} {:.3} {:.3} {:.3}",
        frame.rows(),
        frame.cols(),
        frame.pitch_i_mm * 1e3,
        frame.pitch_j_mm * 1e3,
        frame.stretch_mm,
        frame.throw_mm
    )
    .unwrap();
    for i in 0..frame.rows() {
        for j in 0..frame.cols() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{:.3}", frame.depth_mm[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_depth_frame(path: &Path, frame: &DepthFrame) -> Result<(), GeometryError> {
    std::fs::write(path, format_depth_frame(frame))?;
    Ok(())
}

pub fn parse_depth_frame(text: &str) -> Result<DepthFrame, GeometryError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| GeometryError::Parse { line: 1, msg: "empty file".into() })?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 8 || tokens[0] != "STRETCH-DEPTH" || tokens[1] != "v1" {
        return Err(GeometryError::Parse {
            line: 1,
            msg: format!("expected `{DEPTH_FRAME_HEADER} <rows> <cols> <pitch_i_um> <pitch_j_um> <stretch_mm> <throw_mm>`"),
        });
    }
    let dim = |k: usize, name: &str| -> Result<usize, GeometryError> {
        tokens[k].parse().map_err(|e| GeometryError::Parse {
            line: 1,
            msg: format!("bad {name} `{}`: {e}", tokens[k]),
        })
    };
    let num = |k: usize, name: &str| -> Result<f64, GeometryError> {
        tokens[k].parse().map_err(|e| GeometryError::Parse {
            line: 1,
            msg: format!("bad {name} `{}`: {e}", tokens[k]),
        })
    };
    let rows = dim(2, "rows")?;
    let cols = dim(3, "cols")?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut consumed = 0usize;
    for (idx, line) in lines {
        if consumed == rows {
            if !line.trim().is_empty() {
                return Err(GeometryError::Parse {
                    line: idx + 1,
                    msg: "trailing data after last row".into(),
                });
            }
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|e| GeometryError::Parse {
                line: idx + 1,
                msg: format!("bad depth `{tok}`: {e}"),
            })?);
        }
        if data.len() - before != cols {
            return Err(GeometryError::Parse {
                line: idx + 1,
                msg: format!("expected {cols} depths, got {}", data.len() - before),
            });
        }
        consumed += 1;
    }
    if consumed != rows {
        return Err(GeometryError::Parse {
            line: consumed + 2,
            msg: format!("expected {rows} rows, got {consumed}"),
        });
    }
    DepthFrame::new(
        num(4, "pitch_i_um")? * 1e-3,
        num(5, "pitch_j_um")? * 1e-3,
        num(6, "stretch_mm")?,
        num(7, "throw_mm")?,
        Grid2::from_vec(rows, cols, data),
    )
}

pub fn read_depth_frame(path: &Path) -> Result<DepthFrame, GeometryError> {
    parse_depth_frame(&std::fs::read_to_string(path)?)
}
