//! Plastic dough as a height field on the table.
//!
//! Columns loaded past the yield pressure compress; the displaced volume
//! flows to the nearest unloaded columns (a ridge forms around the pressed
//! region, like real dough under a palm). Volume is conserved exactly by
//! bookkeeping: whatever leaves the yielded cells is deposited on the
//! receiving cells in the same update.

use crate::grid::Grid2;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoughParams {
    /// Cell pitch of the height field, mm.
    pub pitch_mm: f64,
    /// Pressure below which columns carry load without flowing, kPa.
    pub yield_kpa: f64,
    /// Compression per update per kPa of overpressure, mm.
    pub flow_mm_per_kpa: f64,
    /// Empty table margin kept around the initial footprint so material has
    /// somewhere to flow, mm.
    pub pad_mm: f64,
}

impl Default for DoughParams {
    fn default() -> Self {
        Self { pitch_mm: 2.0, yield_kpa: 0.5, flow_mm_per_kpa: 0.6, pad_mm: 24.0 }
    }
}

#[derive(Debug, Clone)]
pub struct DoughField {
    /// World xy of cell (0, 0)'s center.
    x0_mm: f64,
    y0_mm: f64,
    pitch_mm: f64,
    yield_kpa: f64,
    flow_mm_per_kpa: f64,
    heights_mm: Grid2<f64>,
}

impl DoughField {
    /// Rectangular slab centered at `center`, resting on the table.
    pub fn slab(
        center: (f64, f64),
        extent_mm: (f64, f64),
        height_mm: f64,
        params: DoughParams,
    ) -> Result<Self, SimError> {
        Self::from_profile(center, extent_mm, params, |dx, dy| {
            let inside = dx.abs() <= 0.5 * extent_mm.0 && dy.abs() <= 0.5 * extent_mm.1;
            if inside {
                height_mm
            } else {
                0.0
            }
        })
    }

    /// Flat-topped disk centered at `center`.
    pub fn disk(
        center: (f64, f64),
        radius_mm: f64,
        height_mm: f64,
        params: DoughParams,
    ) -> Result<Self, SimError> {
        Self::from_profile(center, (2.0 * radius_mm, 2.0 * radius_mm), params, |dx, dy| {
            if dx * dx + dy * dy <= radius_mm * radius_mm {
                height_mm
            } else {
                0.0
            }
        })
    }

    fn from_profile(
        center: (f64, f64),
        extent_mm: (f64, f64),
        params: DoughParams,
        profile: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, SimError> {
        if !(params.pitch_mm > 0.0
            && params.yield_kpa > 0.0
            && params.flow_mm_per_kpa > 0.0
            && params.pad_mm >= 0.0
            && extent_mm.0 > 0.0
            && extent_mm.1 > 0.0)
        {
            return Err(SimError::BadShape {
                name: "dough parameters",
                value: params.pitch_mm,
            });
        }
        let p = params.pitch_mm;
        let nx = ((extent_mm.0 + 2.0 * params.pad_mm) / p).ceil() as usize + 1;
        let ny = ((extent_mm.1 + 2.0 * params.pad_mm) / p).ceil() as usize + 1;
        let x0 = center.0 - 0.5 * (nx - 1) as f64 * p;
        let y0 = center.1 - 0.5 * (ny - 1) as f64 * p;
        let heights = Grid2::from_fn(nx, ny, |i, j| {
            let wx = x0 + i as f64 * p;
            let wy = y0 + j as f64 * p;
            profile(wx - center.0, wy - center.1).max(0.0)
        });
        if heights.as_slice().iter().all(|&h| h <= 0.0) {
            return Err(SimError::NoObject);
        }
        Ok(Self {
            x0_mm: x0,
            y0_mm: y0,
            pitch_mm: p,
            yield_kpa: params.yield_kpa,
            flow_mm_per_kpa: params.flow_mm_per_kpa,
            heights_mm: heights,
        })
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_mm
    }

    pub fn origin_mm(&self) -> (f64, f64) {
        (self.x0_mm, self.y0_mm)
    }

    pub fn heights(&self) -> &Grid2<f64> {
        &self.heights_mm
    }

    /// Shift the dough in world xy (the hand rolling across it is modeled as
    /// the dough sliding the other way).
    pub fn translate(&mut self, dx_mm: f64, dy_mm: f64) {
        self.x0_mm += dx_mm;
        self.y0_mm += dy_mm;
    }

    pub fn volume_mm3(&self) -> f64 {
        let a = self.pitch_mm * self.pitch_mm;
        self.heights_mm.as_slice().iter().sum::<f64>() * a
    }

    pub fn max_height_mm(&self) -> f64 {
        self.heights_mm
            .as_slice()
            .iter()
            .fold(0.0f64, |m, &h| m.max(h))
    }

    /// Bilinear top-surface sample; None off the field or over bare table.
    pub fn top_at(&self, wx_mm: f64, wy_mm: f64) -> Option<f64> {
        let fx = (wx_mm - self.x0_mm) / self.pitch_mm;
        let fy = (wy_mm - self.y0_mm) / self.pitch_mm;
        let (nx, ny) = (self.heights_mm.rows(), self.heights_mm.cols());
        if fx < 0.0 || fy < 0.0 || fx > (nx - 1) as f64 || fy > (ny - 1) as f64 {
            return None;
        }
        let i0 = (fx.floor() as usize).min(nx - 2);
        let j0 = (fy.floor() as usize).min(ny - 2);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let h = self.heights_mm[(i0, j0)] * (1.0 - tx) * (1.0 - ty)
            + self.heights_mm[(i0 + 1, j0)] * tx * (1.0 - ty)
            + self.heights_mm[(i0, j0 + 1)] * (1.0 - tx) * ty
            + self.heights_mm[(i0 + 1, j0 + 1)] * tx * ty;
        (h > 1e-6).then_some(h)
    }

    /// One plastic step under the given point loads (world x, world y,
    /// normal force in N). Returns the volume moved, mm^3.
    pub fn plastic_update(&mut self, loads: &[(f64, f64, f64)]) -> f64 {
        let (nx, ny) = (self.heights_mm.rows(), self.heights_mm.cols());
        let area = self.pitch_mm * self.pitch_mm;
        let mut force = Grid2::filled(nx, ny, 0.0f64);
        for &(wx, wy, f) in loads {
            let i = ((wx - self.x0_mm) / self.pitch_mm).round();
            let j = ((wy - self.y0_mm) / self.pitch_mm).round();
            if i >= 0.0 && j >= 0.0 && (i as usize) < nx && (j as usize) < ny {
                force[(i as usize, j as usize)] += f.max(0.0);
            }
        }
        // kPa = 1e-3 N/mm^2.
        let to_kpa = 1.0e3 / area;
        let mut yielded: Vec<(usize, usize)> = Vec::new();
        let mut displaced = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                let p_kpa = force[(i, j)] * to_kpa;
                let over = p_kpa - self.yield_kpa;
                if over > 0.0 && self.heights_mm[(i, j)] > 0.0 {
                    let dh = (self.flow_mm_per_kpa * over).min(self.heights_mm[(i, j)]);
                    if dh > 0.0 {
                        self.heights_mm[(i, j)] -= dh;
                        displaced += dh * area;
                        yielded.push((i, j));
                    }
                }
            }
        }
        if displaced <= 0.0 {
            return 0.0;
        }
        self.deposit_outward(&yielded, &force, displaced);
        displaced
    }

    /// Spread `volume` over rings of unloaded cells growing outward from the
    /// yielded set. Each ring takes up to a 1 mm layer per pass; any volume
    /// the grid cannot place lands on the last ring so none is lost.
    fn deposit_outward(&mut self, seeds: &[(usize, usize)], force: &Grid2<f64>, volume: f64) {
        let (nx, ny) = (self.heights_mm.rows(), self.heights_mm.cols());
        let area = self.pitch_mm * self.pitch_mm;
        let cap_per_cell = 1.0 * area;
        let mut visited = Grid2::filled(nx, ny, false);
        for &(i, j) in seeds {
            visited[(i, j)] = true;
        }
        let mut frontier: Vec<(usize, usize)> = seeds.to_vec();
        frontier.sort_unstable();
        let mut remaining = volume;
        let mut last_ring: Vec<(usize, usize)> = Vec::new();
        while remaining > 1e-12 {
            let mut ring: Vec<(usize, usize)> = Vec::new();
            for &(i, j) in &frontier {
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let ni = i as i64 + di;
                    let nj = j as i64 + dj;
                    if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                        continue;
                    }
                    let c = (ni as usize, nj as usize);
                    if !visited[c] {
                        visited[c] = true;
                        ring.push(c);
                    }
                }
            }
            if ring.is_empty() {
                break;
            }
            ring.sort_unstable();
            // Loaded cells pass material through without taking any.
            let takers: Vec<(usize, usize)> =
                ring.iter().copied().filter(|&c| force[c] <= 0.0).collect();
            if !takers.is_empty() {
                let per = (remaining / takers.len() as f64).min(cap_per_cell);
                for &c in &takers {
                    self.heights_mm[c] += per / area;
                }
                remaining -= per * takers.len() as f64;
                last_ring = takers;
            }
            frontier = ring;
        }
        if remaining > 1e-12 {
            let takers = if last_ring.is_empty() {
                seeds.to_vec()
            } else {
                last_ring
            };
            let per = remaining / takers.len() as f64;
            for &c in &takers {
                self.heights_mm[c] += per / area;
            }
        }
    }
}
