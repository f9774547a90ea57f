//! Marker distance and mean Chamfer distance between simulated and reference
//! data. Inputs and outputs are in meters.

use crate::error::{Result, SimError};

pub type Point = [f64; 3];

/// Markers of one trajectory: `frames x markers`.
pub type MarkerFrames = Vec<Vec<Point>>;

#[inline]
pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Mean Euclidean distance over trajectories, frames and markers.
pub fn marker_error(sim: &[MarkerFrames], reference: &[MarkerFrames]) -> Result<f64> {
    if sim.len() != reference.len() {
        return Err(SimError::DimensionMismatch {
            what: "marker trajectories",
            expected: reference.len(),
            found: sim.len(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (s, r) in sim.iter().zip(reference) {
        if s.len() != r.len() {
            return Err(SimError::DimensionMismatch {
                what: "marker frames",
                expected: r.len(),
                found: s.len(),
            });
        }
        for (fs, fr) in s.iter().zip(r) {
            if fs.len() != fr.len() {
                return Err(SimError::DimensionMismatch {
                    what: "markers per frame",
                    expected: fr.len(),
                    found: fs.len(),
                });
            }
            for (a, b) in fs.iter().zip(fr) {
                sum += squared_distance(a, b).sqrt();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(SimError::invalid("marker_error", "no markers to compare"));
    }
    Ok(sum / count as f64)
}

/// Nearest-neighbor search strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NearestNeighbor {
    #[default]
    BruteForce,
    Grid,
}

/// Index and squared distance of the nearest point, ties to the smaller index.
pub fn nearest_brute(points: &[Point], q: &Point) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = squared_distance(p, q);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

/// Uniform grid answering the same queries as [`nearest_brute`].
pub struct GridIndex<'a> {
    points: &'a [Point],
    cell: f64,
    lo: [i64; 3],
    dims: [i64; 3],
    /// Cell `c` holds `order[start[c]..start[c + 1]]`.
    start: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for c in 0..3 {
                min[c] = min[c].min(p[c]);
                max[c] = max[c].max(p[c]);
            }
        }
        let extent = (0..3).map(|c| max[c] - min[c]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let mut grid = GridIndex {
            points,
            cell,
            lo: [0; 3],
            dims: [1; 3],
            start: Vec::new(),
            order: Vec::new(),
        };
        if !points.is_empty() {
            let lo = grid.key(&min);
            let hi = grid.key(&max);
            grid.lo = lo;
            grid.dims = [0, 1, 2].map(|c| hi[c] - lo[c] + 1);
        }
        let slots: Vec<usize> = points.iter().map(|p| grid.slot(grid.key(p)).expect("inside grid")).collect();
        let ncells = grid.dims.iter().product::<i64>() as usize;
        let mut start = vec![0; ncells + 1];
        for &s in &slots {
            start[s + 1] += 1;
        }
        for c in 0..ncells {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut order = vec![0; points.len()];
        for (i, &s) in slots.iter().enumerate() {
            order[fill[s]] = i;
            fill[s] += 1;
        }
        grid.start = start;
        grid.order = order;
        grid
    }

    fn key(&self, p: &Point) -> [i64; 3] {
        [0, 1, 2].map(|c| (p[c] / self.cell).floor() as i64)
    }

    fn slot(&self, k: [i64; 3]) -> Option<usize> {
        let mut s = 0;
        for ((&k, &lo), &dim) in k.iter().zip(&self.lo).zip(&self.dims) {
            let o = k - lo;
            if o < 0 || o >= dim {
                return None;
            }
            s = s * dim + o;
        }
        Some(s as usize)
    }

    pub fn nearest(&self, q: &Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let k = self.key(q);
        let max_ring = (0..3)
            .map(|c| (k[c] - self.lo[c]).abs().max((self.lo[c] + self.dims[c] - 1 - k[c]).abs()))
            .max()
            .unwrap();
        // distance from q to the nearest face of its own cell
        let inset = (0..3)
            .map(|c| {
                let a = q[c] - k[c] as f64 * self.cell;
                a.min(self.cell - a).max(0.0)
            })
            .fold(f64::INFINITY, f64::min);
        let mut best: Option<(usize, f64)> = None;
        for r in 0..=max_ring {
            // every point in ring r or beyond is at least this far away
            if let Some((_, bd)) = best {
                let reach = (r - 1) as f64 * self.cell + inset;
                if r > 0 && reach * reach > bd {
                    break;
                }
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    let edge = dx.abs().max(dy.abs()) == r;
                    let stride = if edge { 1 } else { 2 * r as usize };
                    for dz in (-r..=r).step_by(stride) {
                        let Some(s) = self.slot([k[0] + dx, k[1] + dy, k[2] + dz]) else {
                            continue;
                        };
                        for &i in &self.order[self.start[s]..self.start[s + 1]] {
                            let d = squared_distance(&self.points[i], q);
                            if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

fn one_sided(from: &[Point], to: &[Point], method: NearestNeighbor) -> f64 {
    let sum: f64 = match method {
        NearestNeighbor::BruteForce => from
            .iter()
            .map(|p| nearest_brute(to, p).expect("non-empty").1)
            .sum(),
        NearestNeighbor::Grid => {
            let grid = GridIndex::new(to);
            from.iter().map(|p| grid.nearest(p).expect("non-empty").1).sum()
        }
    };
    sum / from.len() as f64
}

/// Symmetric Chamfer distance (mean squared nearest-neighbor distances in
/// both directions).
pub fn chamfer_distance(p: &[Point], q: &[Point], method: NearestNeighbor) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(SimError::invalid("chamfer_distance", "point clouds must be non-empty"));
    }
    Ok(one_sided(p, q, method) + one_sided(q, p, method))
}

/// Mean over all `(simulated, reference)` cloud pairs of `sqrt(CD)`.
pub fn chamfer_error(pairs: &[(Vec<Point>, Vec<Point>)], method: NearestNeighbor) -> Result<f64> {
    if pairs.is_empty() {
        return Err(SimError::invalid("chamfer_error", "no frames to compare"));
    }
    let mut sum = 0.0;
    for (p, q) in pairs {
        sum += chamfer_distance(p, q, method)?.sqrt();
    }
    Ok(sum / pairs.len() as f64)
}
