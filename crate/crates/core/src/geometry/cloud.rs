//! Membrane-frame clouds: lifting frames, normal estimation, curvature
//! signals, and the labeled-cloud export.

use std::fmt::Write as _;
use std::path::Path;

use super::frame::DepthFrame;
use super::segment::Label;
use super::GeometryError;
use crate::grid::Grid2;

#[derive(Debug, Clone, PartialEq)]
pub struct MembraneCloud {
    pub pitch_i_mm: f64,
    pub pitch_j_mm: f64,
    pub stretch_mm: f64,
    /// Height above the rest plane, positive toward the camera/object, mm.
    pub z_mm: Grid2<f64>,
    /// Unit normals oriented toward the camera; set by `estimate_normals`.
    pub normals: Option<Grid2<[f64; 3]>>,
    /// Pixels whose normal neighborhood was degenerate (fallback +z used).
    pub degenerate_normals: Option<Grid2<bool>>,
    /// Curvature signals along i and j; borders carry 0 and invalid flags.
    pub k_i: Option<Grid2<f64>>,
    pub k_j: Option<Grid2<f64>>,
    pub k_i_valid: Option<Grid2<bool>>,
    pub k_j_valid: Option<Grid2<bool>>,
    pub labels: Option<Grid2<Label>>,
}

impl MembraneCloud {
    pub fn rows(&self) -> usize {
        self.z_mm.rows()
    }

    pub fn cols(&self) -> usize {
        self.z_mm.cols()
    }

    /// Metric position of pixel (i, j).
    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 3] {
        [i as f64 * self.pitch_i_mm, j as f64 * self.pitch_j_mm, self.z_mm[(i, j)]]
    }
}

/// Lift a (masked) depth frame into the membrane frame:
/// z = rest_depth - depth, x/y from pixel index times pitch.
pub fn to_membrane_frame(frame: &DepthFrame, rest_depth_mm: f64) -> MembraneCloud {
    let z = Grid2::from_fn(frame.rows(), frame.cols(), |i, j| {
        rest_depth_mm - frame.depth_mm[(i, j)]
    });
    MembraneCloud {
        pitch_i_mm: frame.pitch_i_mm,
        pitch_j_mm: frame.pitch_j_mm,
        stretch_mm: frame.stretch_mm,
        z_mm: z,
        normals: None,
        degenerate_normals: None,
        k_i: None,
        k_j: None,
        k_i_valid: None,
        k_j_valid: None,
        labels: None,
    }
}

/// 3x3 median filter on the height field (borders use the clamped window).
/// Knocks depth-sensor speckle down before slopes and curvatures are formed.
pub fn median3_denoise(cloud: &mut MembraneCloud) {
    let rows = cloud.rows();
    let cols = cloud.cols();
    let src = cloud.z_mm.clone();
    let mut buf = [0.0f64; 9];
    for i in 0..rows {
        for j in 0..cols {
            let mut n = 0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let ni = (i as i64 + di).clamp(0, rows as i64 - 1) as usize;
                    let nj = (j as i64 + dj).clamp(0, cols as i64 - 1) as usize;
                    buf[n] = src[(ni, nj)];
                    n += 1;
                }
            }
            let w = &mut buf[..n];
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cloud.z_mm[(i, j)] = w[n / 2];
        }
    }
}

/// Summed-area table with an implicit zero row/column in front.
struct Sat {
    cols: usize,
    data: Vec<f64>,
}

impl Sat {
    fn build(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let w = cols + 1;
        let mut data = vec![0.0; (rows + 1) * w];
        for i in 0..rows {
            let mut row_sum = 0.0;
            for j in 0..cols {
                row_sum += f(i, j);
                data[(i + 1) * w + (j + 1)] = data[i * w + (j + 1)] + row_sum;
            }
        }
        Self { cols: w, data }
    }

    /// Inclusive window sum over [i0, i1] x [j0, j1].
    #[inline]
    fn sum(&self, i0: usize, i1: usize, j0: usize, j1: usize) -> f64 {
        let w = self.cols;
        self.data[(i1 + 1) * w + (j1 + 1)] - self.data[i0 * w + (j1 + 1)]
            - self.data[(i1 + 1) * w + j0]
            + self.data[i0 * w + j0]
    }
}

/// Closed-form sums of k and k^2 for k in [a, b].
fn index_sums(a: usize, b: usize) -> (f64, f64, f64) {
    let n = (b - a + 1) as f64;
    let a = a as f64;
    let b = b as f64;
    let s1 = (a + b) * n / 2.0;
    // sum k^2 for 0..=m is m(m+1)(2m+1)/6
    let sq = |m: f64| m * (m + 1.0) * (2.0 * m + 1.0) / 6.0;
    let s2 = sq(b) - if a > 0.0 { sq(a - 1.0) } else { 0.0 };
    (n, s1, s2)
}

/// Per-pixel least-squares plane normals over a square window (clamped at the
/// borders), oriented toward the camera. Windows too thin to define a plane
/// get the +z fallback and a degenerate flag.
pub fn estimate_normals(cloud: &mut MembraneCloud, window: usize) -> Result<(), GeometryError> {
    if window < 3 || window % 2 == 0 {
        return Err(GeometryError::BadWindow(window));
    }
    let rows = cloud.rows();
    let cols = cloud.cols();
    let half = window / 2;
    let sat_z = Sat::build(rows, cols, |i, j| cloud.z_mm[(i, j)]);
    let sat_zi = Sat::build(rows, cols, |i, j| cloud.z_mm[(i, j)] * i as f64);
    let sat_zj = Sat::build(rows, cols, |i, j| cloud.z_mm[(i, j)] * j as f64);

    let du = cloud.pitch_i_mm;
    let dv = cloud.pitch_j_mm;
    let mut normals = Grid2::filled(rows, cols, [0.0, 0.0, 1.0]);
    let mut degenerate = Grid2::filled(rows, cols, false);

    for i in 0..rows {
        let i0 = i.saturating_sub(half);
        let i1 = (i + half).min(rows - 1);
        let (ni, si1, si2) = index_sums(i0, i1);
        for j in 0..cols {
            let j0 = j.saturating_sub(half);
            let j1 = (j + half).min(cols - 1);
            let (nj, sj1, sj2) = index_sums(j0, j1);
            if i1 == i0 || j1 == j0 {
                degenerate[(i, j)] = true;
                continue;
            }
            let sz = sat_z.sum(i0, i1, j0, j1);
            let szi = sat_zi.sum(i0, i1, j0, j1);
            let szj = sat_zj.sum(i0, i1, j0, j1);
            // Centered index moments make the normal system block-diagonal:
            // beta = cov(z, u) / var(u), gamma = cov(z, v) / var(v).
            let mi = si1 / ni;
            let mj = sj1 / nj;
            let var_i = (si2 - mi * si1) * nj;
            let var_j = (sj2 - mj * sj1) * ni;
            let cov_zi = szi - mi * sz;
            let cov_zj = szj - mj * sz;
            let beta = cov_zi / (var_i * du);
            let gamma = cov_zj / (var_j * dv);
            let norm = (beta * beta + gamma * gamma + 1.0).sqrt();
            normals[(i, j)] = [-beta / norm, -gamma / norm, 1.0 / norm];
        }
    }
    cloud.normals = Some(normals);
    cloud.degenerate_normals = Some(degenerate);
    Ok(())
}

/// Central-difference curvature signals: the inner product of the position
/// delta and the normal delta across each pixel, per grid direction. Positive
/// means locally convex toward the camera.
pub fn curvature_signals(cloud: &mut MembraneCloud) -> Result<(), GeometryError> {
    let normals =
        cloud.normals.as_ref().ok_or(GeometryError::MissingStage("estimate_normals"))?;
    let rows = cloud.rows();
    let cols = cloud.cols();
    let mut k_i = Grid2::filled(rows, cols, 0.0);
    let mut k_j = Grid2::filled(rows, cols, 0.0);
    let mut k_i_valid = Grid2::filled(rows, cols, false);
    let mut k_j_valid = Grid2::filled(rows, cols, false);

    let dot = |p: [f64; 3], n: [f64; 3]| p[0] * n[0] + p[1] * n[1] + p[2] * n[2];
    for i in 0..rows {
        for j in 0..cols {
            if i > 0 && i + 1 < rows {
                let pa = cloud.point(i + 1, j);
                let pb = cloud.point(i - 1, j);
                let na = normals[(i + 1, j)];
                let nb = normals[(i - 1, j)];
                let dp = [pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]];
                let dn = [na[0] - nb[0], na[1] - nb[1], na[2] - nb[2]];
                k_i[(i, j)] = dot(dp, dn);
                k_i_valid[(i, j)] = true;
            }
            if j > 0 && j + 1 < cols {
                let pa = cloud.point(i, j + 1);
                let pb = cloud.point(i, j - 1);
                let na = normals[(i, j + 1)];
                let nb = normals[(i, j - 1)];
                let dp = [pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]];
                let dn = [na[0] - nb[0], na[1] - nb[1], na[2] - nb[2]];
                k_j[(i, j)] = dot(dp, dn);
                k_j_valid[(i, j)] = true;
            }
        }
    }
    cloud.k_i = Some(k_i);
    cloud.k_j = Some(k_j);
    cloud.k_i_valid = Some(k_i_valid);
    cloud.k_j_valid = Some(k_j_valid);
    Ok(())
}

/// One row of the labeled-cloud CSV export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledCloudRow {
    pub i: usize,
    pub j: usize,
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub normal: [f64; 3],
    pub k_i: f64,
    pub k_j: f64,
    /// 0 = undeformed, 1 = deformed without contact, 2 = contact.
    pub label: u8,
}

pub const LABELED_CLOUD_HEADER: &str = "i,j,x_mm,y_mm,z_mm,nx,ny,nz,Ki,Kj,label";

/// Flatten a fully processed cloud into export rows.
pub fn labeled_rows(cloud: &MembraneCloud) -> Result<Vec<LabeledCloudRow>, GeometryError> {
    let normals = cloud.normals.as_ref().ok_or(GeometryError::MissingStage("estimate_normals"))?;
    let k_i = cloud.k_i.as_ref().ok_or(GeometryError::MissingStage("curvature_signals"))?;
    let k_j = cloud.k_j.as_ref().unwrap();
    let labels = cloud.labels.as_ref().ok_or(GeometryError::MissingStage("segment"))?;
    let mut rows = Vec::with_capacity(cloud.z_mm.len());
    for (i, j, &z) in cloud.z_mm.iter_indexed() {
        rows.push(LabeledCloudRow {
            i,
            j,
            x_mm: i as f64 * cloud.pitch_i_mm,
            y_mm: j as f64 * cloud.pitch_j_mm,
            z_mm: z,
            normal: normals[(i, j)],
            k_i: k_i[(i, j)],
            k_j: k_j[(i, j)],
            label: labels[(i, j)] as u8,
        });
    }
    Ok(rows)
}

pub fn format_labeled_cloud(rows: &[LabeledCloudRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64 + 64);
    out.push_str(LABELED_CLOUD_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{:.3},{:.3},{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.i, r.j, r.x_mm, r.y_mm, r.z_mm, r.normal[0], r.normal[1], r.normal[2], r.k_i,
            r.k_j, r.label
        )
        .unwrap();
    }
    out
}

pub fn write_labeled_cloud(path: &Path, cloud: &MembraneCloud) -> Result<(), GeometryError> {
    std::fs::write(path, format_labeled_cloud(&labeled_rows(cloud)?))?;
    Ok(())
}

pub fn parse_labeled_cloud(text: &str) -> Result<Vec<LabeledCloudRow>, GeometryError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == LABELED_CLOUD_HEADER => {}
        other => {
            return Err(GeometryError::Parse {
                line: 1,
                msg: format!(
                    "expected header `{LABELED_CLOUD_HEADER}`, got {:?}",
                    other.map(|(_, h)| h)
                ),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(GeometryError::Parse {
                line: lineno,
                msg: format!("expected 11 fields, got {}", fields.len()),
            });
        }
        let int = |k: usize| -> Result<usize, GeometryError> {
            fields[k].parse().map_err(|e| GeometryError::Parse {
                line: lineno,
                msg: format!("bad index `{}`: {e}", fields[k]),
            })
        };
        let num = |k: usize| -> Result<f64, GeometryError> {
            fields[k].parse().map_err(|e| GeometryError::Parse {
                line: lineno,
                msg: format!("bad number `{}`: {e}", fields[k]),
            })
        };
        let label: u8 = fields[10].parse().map_err(|e| GeometryError::Parse {
            line: lineno,
            msg: format!("bad label `{}`: {e}", fields[10]),
        })?;
        if label > 2 {
            return Err(GeometryError::Parse {
                line: lineno,
                msg: format!("label {label} outside 0..=2"),
            });
        }
        rows.push(LabeledCloudRow {
            i: int(0)?,
            j: int(1)?,
            x_mm: num(2)?,
            y_mm: num(3)?,
            z_mm: num(4)?,
            normal: [num(5)?, num(6)?, num(7)?],
            k_i: num(8)?,
            k_j: num(9)?,
            label,
        });
    }
    Ok(rows)
}

pub fn read_labeled_cloud(path: &Path) -> Result<Vec<LabeledCloudRow>, GeometryError> {
    parse_labeled_cloud(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::REST_LENGTH_MM;

    pub fn synthetic_cloud(
        rows: usize,
        cols: usize,
        pitch: f64,
        z: impl Fn(f64, f64) -> f64,
    ) -> MembraneCloud {
        let depth = Grid2::from_fn(rows, cols, |i, j| {
            100.0 - z(i as f64 * pitch, j as f64 * pitch)
        });
        let frame =
            DepthFrame::new(pitch, pitch, 0.0, REST_LENGTH_MM, depth).unwrap();
        to_membrane_frame(&frame, 100.0)
    }

    #[test]
    fn lift_flips_depth_sign() {
        let cloud = synthetic_cloud(8, 8, 1.0, |_, _| 4.0);
        assert!((cloud.z_mm[(3, 3)] - 4.0).abs() < 1e-12);
        // 60 mm stretch: j extent of the full-field cloud is 150 mm.
        let depth = Grid2::filled(5, 181, 100.0);
        let pitch_j = 0.5 * 150.0 / 90.0;
        let frame = DepthFrame::new(0.5, pitch_j, 60.0, 150.0, depth).unwrap();
        let cloud = to_membrane_frame(&frame, 100.0);
        let last = cloud.point(0, 180);
        assert!((last[1] - 150.0).abs() < 1e-9);
    }

    #[test]
    fn normals_recover_inclined_plane_exactly() {
        // 45 degree incline along i.
        let mut cloud = synthetic_cloud(32, 32, 0.5, |u, _| u);
        estimate_normals(&mut cloud, 7).unwrap();
        let n = cloud.normals.as_ref().unwrap()[(16, 16)];
        let s = 1.0 / 2.0f64.sqrt();
        assert!((n[0] + s).abs() < 1e-9, "n = {n:?}");
        assert!(n[1].abs() < 1e-9);
        assert!((n[2] - s).abs() < 1e-9);
        // Borders are clamped, not degenerate, on a 2D grid.
        assert!(!cloud.degenerate_normals.as_ref().unwrap()[(0, 0)]);
    }

    #[test]
    fn normals_point_up_on_sphere_apex() {
        let r = 20.0f64;
        let mut cloud = synthetic_cloud(41, 41, 0.5, |u, v| {
            let du = u - 10.0;
            let dv = v - 10.0;
            (r * r - du * du - dv * dv).sqrt() - r + 10.0
        });
        estimate_normals(&mut cloud, 5).unwrap();
        let n = cloud.normals.as_ref().unwrap()[(20, 20)];
        assert!(n[2] > 0.99999, "apex normal {n:?}");
    }

    #[test]
    fn single_row_grid_is_degenerate() {
        let depth = Grid2::filled(1, 16, 100.0);
        // DepthFrame rejects 1-row frames, so build the cloud directly.
        let mut cloud = MembraneCloud {
            pitch_i_mm: 0.5,
            pitch_j_mm: 0.5,
            stretch_mm: 0.0,
            z_mm: Grid2::from_fn(1, 16, |_, _| 0.0),
            normals: None,
            degenerate_normals: None,
            k_i: None,
            k_j: None,
            k_i_valid: None,
            k_j_valid: None,
            labels: None,
        };
        drop(depth);
        estimate_normals(&mut cloud, 3).unwrap();
        assert!(cloud.degenerate_normals.as_ref().unwrap()[(0, 8)]);
    }

    #[test]
    fn curvature_positive_on_convex_cap_negative_in_bowl() {
        let r = 15.0f64;
        let cap = |u: f64, v: f64| {
            let du = u - 8.0;
            let dv = v - 8.0;
            (r * r - du * du - dv * dv).sqrt() - r + 8.0
        };
        let mut cloud = synthetic_cloud(33, 33, 0.5, cap);
        estimate_normals(&mut cloud, 5).unwrap();
        curvature_signals(&mut cloud).unwrap();
        let ki = cloud.k_i.as_ref().unwrap();
        let kj = cloud.k_j.as_ref().unwrap();
        assert!(ki[(16, 16)] > 0.0 && kj[(16, 16)] > 0.0);

        let mut bowl = synthetic_cloud(33, 33, 0.5, |u, v| -cap(u, v));
        estimate_normals(&mut bowl, 5).unwrap();
        curvature_signals(&mut bowl).unwrap();
        assert!(bowl.k_i.as_ref().unwrap()[(16, 16)] < 0.0);
    }

    #[test]
    fn curvature_zero_on_flat_and_invalid_on_borders() {
        let mut cloud = synthetic_cloud(9, 9, 0.5, |_, _| 2.0);
        estimate_normals(&mut cloud, 3).unwrap();
        curvature_signals(&mut cloud).unwrap();
        assert_eq!(cloud.k_i.as_ref().unwrap()[(4, 4)], 0.0);
        assert!(!cloud.k_i_valid.as_ref().unwrap()[(0, 4)]);
        assert!(!cloud.k_j_valid.as_ref().unwrap()[(4, 8)]);
        assert!(cloud.k_i_valid.as_ref().unwrap()[(1, 4)]);
    }

    #[test]
    fn curvature_matches_brute_force_on_random_smooth_grids() {
        use rand::Rng;
        // Independent scalar evaluation of the curvature inner products on a
        // cloud with analytically assigned normals.
        for seed in 0..5u64 {
            let mut rng = crate::rng::stream(seed, &[0x6f7261636c65]);
            let (rows, cols, pitch) = (24usize, 26usize, 0.7f64);
            let mut amps = [[0.0f64; 3]; 4];
            for a in amps.iter_mut() {
                a[0] = rng.gen_range(0.2..1.5); // amplitude
                a[1] = rng.gen_range(0.05..0.25); // spatial frequency
                a[2] = rng.gen_range(0.0..6.28); // phase
            }
            let surface = |u: f64, v: f64| -> f64 {
                amps.iter()
                    .enumerate()
                    .map(|(k, a)| {
                        let arg = a[1] * (u + (k as f64 + 1.0) * 0.6 * v) + a[2];
                        a[0] * arg.sin()
                    })
                    .sum()
            };
            let mut cloud = MembraneCloud {
                pitch_i_mm: pitch,
                pitch_j_mm: pitch,
                stretch_mm: 0.0,
                z_mm: Grid2::from_fn(rows, cols, |i, j| {
                    surface(i as f64 * pitch, j as f64 * pitch)
                }),
                normals: None,
                degenerate_normals: None,
                k_i: None,
                k_j: None,
                k_i_valid: None,
                k_j_valid: None,
                labels: None,
            };
            // Analytic unit normals from the exact gradient.
            let h = 1e-6;
            let normals = Grid2::from_fn(rows, cols, |i, j| {
                let u = i as f64 * pitch;
                let v = j as f64 * pitch;
                let gu = (surface(u + h, v) - surface(u - h, v)) / (2.0 * h);
                let gv = (surface(u, v + h) - surface(u, v - h)) / (2.0 * h);
                let norm = (gu * gu + gv * gv + 1.0).sqrt();
                [-gu / norm, -gv / norm, 1.0 / norm]
            });
            cloud.normals = Some(normals.clone());
            cloud.degenerate_normals = Some(Grid2::filled(rows, cols, false));
            curvature_signals(&mut cloud).unwrap();
            let k_i = cloud.k_i.as_ref().unwrap();
            let k_j = cloud.k_j.as_ref().unwrap();

            // Brute force, written as scalar arithmetic with no shared
            // helpers.
            for i in 1..rows - 1 {
                for j in 1..cols - 1 {
                    let px = |ii: usize, jj: usize| {
                        (
                            ii as f64 * pitch,
                            jj as f64 * pitch,
                            cloud.z_mm[(ii, jj)],
                        )
                    };
                    let (ax, ay, az) = px(i + 1, j);
                    let (bx, by, bz) = px(i - 1, j);
                    let na = normals[(i + 1, j)];
                    let nb = normals[(i - 1, j)];
                    let want_i = (ax - bx) * (na[0] - nb[0])
                        + (ay - by) * (na[1] - nb[1])
                        + (az - bz) * (na[2] - nb[2]);
                    let (cx, cy, cz) = px(i, j + 1);
                    let (dx, dy, dz) = px(i, j - 1);
                    let nc = normals[(i, j + 1)];
                    let nd = normals[(i, j - 1)];
                    let want_j = (cx - dx) * (nc[0] - nd[0])
                        + (cy - dy) * (nc[1] - nd[1])
                        + (cz - dz) * (nc[2] - nd[2]);
                    let scale_i = want_i.abs().max(1e-9);
                    let scale_j = want_j.abs().max(1e-9);
                    assert!(
                        (k_i[(i, j)] - want_i).abs() / scale_i < 1e-9,
                        "K_i mismatch at ({i},{j}): {} vs {want_i}",
                        k_i[(i, j)]
                    );
                    assert!(
                        (k_j[(i, j)] - want_j).abs() / scale_j < 1e-9,
                        "K_j mismatch at ({i},{j}): {} vs {want_j}",
                        k_j[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn labeled_cloud_round_trip_is_bit_stable() {
        let mut cloud = synthetic_cloud(6, 6, 0.5, |u, v| 0.1 * u + 0.05 * v);
        estimate_normals(&mut cloud, 3).unwrap();
        curvature_signals(&mut cloud).unwrap();
        cloud.labels = Some(Grid2::from_fn(6, 6, |i, j| {
            if (i + j) % 3 == 0 {
                Label::Undeformed
            } else if (i + j) % 3 == 1 {
                Label::DeformedNoContact
            } else {
                Label::Contact
            }
        }));
        let rows = labeled_rows(&cloud).unwrap();
        let text = format_labeled_cloud(&rows);
        let parsed = parse_labeled_cloud(&text).unwrap();
        assert_eq!(format_labeled_cloud(&parsed), text);
        assert_eq!(parsed.len(), 36);
    }
}
