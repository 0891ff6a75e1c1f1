//! Exact nearest-neighbour queries on a uniform 3D cell grid.
//!
//! Results are identical to a linear scan: the same squared distance
//! expression is evaluated, and equal distances resolve to the smallest
//! reference index.

use rayon::prelude::*;

use crate::types::Vec3;

/// Below this many reference points a linear scan is used.
const LINEAR_SCAN_MAX: usize = 32;

pub(crate) struct NearestIndex<'a> {
    points: &'a [Vec3],
    grid: Option<CellGrid>,
}

struct CellGrid {
    min: Vec3,
    cell: f64,
    dims: [i64; 3],
    start: Vec<usize>,
    items: Vec<usize>,
}

#[inline]
fn better(d: f64, i: usize, best_d: f64, best_i: usize) -> bool {
    d < best_d || (d == best_d && i < best_i)
}

impl<'a> NearestIndex<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let grid = if points.len() > LINEAR_SCAN_MAX {
            CellGrid::new(points)
        } else {
            None
        };
        Self { points, grid }
    }

    /// `(squared distance, index)` of the nearest reference point.
    pub fn nearest(&self, q: Vec3) -> (f64, usize) {
        match &self.grid {
            Some(g) => g.nearest(self.points, q),
            None => linear_nearest(self.points, q),
        }
    }

    pub fn nearest_all(&self, queries: &[Vec3]) -> Vec<(f64, usize)> {
        queries.par_iter().map(|&q| self.nearest(q)).collect()
    }
}

fn linear_nearest(points: &[Vec3], q: Vec3) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, p) in points.iter().enumerate() {
        let d = q.dist_sq(*p);
        if better(d, i, best.0, best.1) {
            best = (d, i);
        }
    }
    best
}

impl CellGrid {
    fn new(points: &[Vec3]) -> Option<Self> {
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = Vec3::new(min.x.min(p.x), min.y.min(p.y), min.z.min(p.z));
            max = Vec3::new(max.x.max(p.x), max.y.max(p.y), max.z.max(p.z));
        }
        let ext = max - min;
        let longest = ext.x.max(ext.y).max(ext.z);
        if !(longest > 0.0 && longest.is_finite()) {
            return None;
        }
        // About two points per cell over the occupied bounding box, with flat
        // axes padded so the volume estimate stays meaningful.
        let floor = longest * 1e-3;
        let vol = ext.x.max(floor) * ext.y.max(floor) * ext.z.max(floor);
        let cell = (2.0 * vol / points.len() as f64).cbrt().max(floor);
        let dims = [
            (ext.x / cell).floor() as i64 + 1,
            (ext.y / cell).floor() as i64 + 1,
            (ext.z / cell).floor() as i64 + 1,
        ];
        let n_cells = (dims[0] * dims[1] * dims[2]) as usize;
        if n_cells > 8 * points.len() + 64 {
            return None;
        }
        let mut grid = CellGrid {
            min,
            cell,
            dims,
            start: vec![0; n_cells + 1],
            items: vec![0; points.len()],
        };
        let cells: Vec<usize> = points
            .iter()
            .map(|&p| {
                let c = grid.cell_of(p);
                grid.flat(clamp3(c, dims))
            })
            .collect();
        for &c in &cells {
            grid.start[c + 1] += 1;
        }
        for i in 1..grid.start.len() {
            grid.start[i] += grid.start[i - 1];
        }
        let mut fill = grid.start.clone();
        for (i, &c) in cells.iter().enumerate() {
            grid.items[fill[c]] = i;
            fill[c] += 1;
        }
        Some(grid)
    }

    fn cell_of(&self, p: Vec3) -> [i64; 3] {
        [
            ((p.x - self.min.x) / self.cell).floor() as i64,
            ((p.y - self.min.y) / self.cell).floor() as i64,
            ((p.z - self.min.z) / self.cell).floor() as i64,
        ]
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        ((c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]) as usize
    }

    fn nearest(&self, points: &[Vec3], q: Vec3) -> (f64, usize) {
        let qc = self.cell_of(q);
        // Chebyshev distance (in cells) from the query cell to the grid box.
        let mut r_min = 0;
        let mut r_max = 0;
        for a in 0..3 {
            let below = -qc[a];
            let above = qc[a] - (self.dims[a] - 1);
            r_min = r_min.max(below).max(above);
            r_max = r_max.max(qc[a].abs()).max((qc[a] - (self.dims[a] - 1)).abs());
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let mut r = r_min.max(0);
        while r <= r_max {
            self.visit_shell(qc, r, |cell| {
                for &i in &self.items[self.start[cell]..self.start[cell + 1]] {
                    let d = q.dist_sq(points[i]);
                    if better(d, i, best.0, best.1) {
                        best = (d, i);
                    }
                }
            });
            // Every point in shell r + 1 is at least r cells away; the slack
            // absorbs rounding in the cell assignment.
            let bound = (r as f64 - 1e-6) * self.cell;
            if bound > 0.0 && bound * bound > best.0 {
                break;
            }
            r += 1;
        }
        best
    }

    /// Visits the in-grid cells at Chebyshev distance exactly `r` from `c`.
    fn visit_shell(&self, c: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        let lo = |a: usize| (c[a] - r).max(0);
        let hi = |a: usize| (c[a] + r).min(self.dims[a] - 1);
        for z in lo(2)..=hi(2) {
            let dz = (z - c[2]).abs();
            for y in lo(1)..=hi(1) {
                let dy = (y - c[1]).abs();
                if dz == r || dy == r {
                    for x in lo(0)..=hi(0) {
                        f(self.flat([x, y, z]));
                    }
                } else {
                    for x in [c[0] - r, c[0] + r] {
                        if x >= 0 && x < self.dims[0] {
                            f(self.flat([x, y, z]));
                        }
                        if r == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }
}

fn clamp3(c: [i64; 3], dims: [i64; 3]) -> [i64; 3] {
    [
        c[0].clamp(0, dims[0] - 1),
        c[1].clamp(0, dims[1] - 1),
        c[2].clamp(0, dims[2] - 1),
    ]
}
