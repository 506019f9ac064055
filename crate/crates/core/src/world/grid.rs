use super::geometry::{point_segment_distance, Point};
use super::Wall;

/// Occupancy grid cell edge, meters.
pub const GRID_RES: f64 = 0.25;

/// Boolean occupancy at [`GRID_RES`]: a cell is blocked iff some wall segment
/// passes through its open interior. Also caches, per cell, the distance from
/// the cell center to the nearest wall.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: Point,
    pub width: usize,
    pub height: usize,
    blocked: Vec<bool>,
    clearance: Vec<f64>,
}

/// Whether segment `a -> b` meets the open rectangle `(lo, hi)`.
/// Liang-Barsky clipping with strict inequalities.
fn crosses_open_box(a: Point, b: Point, lo: Point, hi: Point) -> bool {
    let d = b.sub(a);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-d.x, a.x - lo.x),
        (d.x, hi.x - a.x),
        (-d.y, a.y - lo.y),
        (d.y, hi.y - a.y),
    ] {
        if p == 0.0 {
            if q <= 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    t0 < t1
}

impl OccupancyGrid {
    pub fn build(bounds: (Point, Point), walls: &[Wall]) -> Self {
        let (lo, hi) = bounds;
        let width = ((hi.x - lo.x) / GRID_RES).ceil().max(1.0) as usize;
        let height = ((hi.y - lo.y) / GRID_RES).ceil().max(1.0) as usize;
        let mut blocked = vec![false; width * height];
        let mut clearance = vec![f64::INFINITY; width * height];
        for j in 0..height {
            for i in 0..width {
                let c0 = Point::new(lo.x + i as f64 * GRID_RES, lo.y + j as f64 * GRID_RES);
                let c1 = Point::new(c0.x + GRID_RES, c0.y + GRID_RES);
                let center = Point::new(c0.x + 0.5 * GRID_RES, c0.y + 0.5 * GRID_RES);
                let k = j * width + i;
                for w in walls {
                    if !blocked[k] && crosses_open_box(w.a, w.b, c0, c1) {
                        blocked[k] = true;
                    }
                    clearance[k] = clearance[k].min(point_segment_distance(center, w.a, w.b));
                }
            }
        }
        OccupancyGrid {
            origin: lo,
            width,
            height,
            blocked,
            clearance,
        }
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.width, k / self.width)
    }

    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.blocked[self.index(i, j)]
    }

    pub fn blocked_at(&self, k: usize) -> bool {
        self.blocked[k]
    }

    pub fn clearance_at(&self, k: usize) -> f64 {
        self.clearance[k]
    }

    /// Cell containing `p`, clamped to the grid.
    pub fn cell_of(&self, p: Point) -> (usize, usize) {
        let i = ((p.x - self.origin.x) / GRID_RES).floor().clamp(0.0, (self.width - 1) as f64);
        let j = ((p.y - self.origin.y) / GRID_RES).floor().clamp(0.0, (self.height - 1) as f64);
        (i as usize, j as usize)
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.origin.x + (i as f64 + 0.5) * GRID_RES,
            self.origin.y + (j as f64 + 0.5) * GRID_RES,
        )
    }

    /// Octile neighbours of cell `k` that are free, with diagonal moves only
    /// when both adjacent orthogonal cells are free (no corner cutting).
    /// Yields `(neighbour, is_diagonal)`.
    pub fn neighbours(&self, k: usize, free: impl Fn(usize) -> bool) -> Vec<(usize, bool)> {
        let (i, j) = self.coords(k);
        let (i, j) = (i as i64, j as i64);
        let ok = |x: i64, y: i64| {
            x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && free(self.index(x as usize, y as usize))
        };
        let mut out = Vec::with_capacity(8);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            if ok(i + dx, j + dy) {
                out.push((self.index((i + dx) as usize, (j + dy) as usize), false));
            }
        }
        for (dx, dy) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
            if ok(i + dx, j + dy) && ok(i + dx, j) && ok(i, j + dy) {
                out.push((self.index((i + dx) as usize, (j + dy) as usize), true));
            }
        }
        out
    }
}
