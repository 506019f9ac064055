use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::Point;
use super::{Door, FloorPlan, Room, Wall, JAMB_COLOR, ROOM_COLORS};
use crate::error::{Error, Result};

/// Wall inset from the room-grid lines. Neighbouring rooms therefore share a
/// double wall, one face per room color.
pub const WALL_INSET: f64 = 0.05;
/// Minimum distance from a door opening to a room corner.
pub const DOOR_MARGIN: f64 = 0.5;
const SIZE_QUANTUM: f64 = 0.5;
const DOOR_QUANTUM: f64 = 0.25;
const MIN_DOOR_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub rows: usize,
    pub cols: usize,
    pub room_min: f64,
    pub room_max: f64,
    pub door_width: f64,
    /// Chance that a grid edge outside the spanning tree also gets a door.
    pub extra_door_prob: f64,
    pub cell_size: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            rows: 2,
            cols: 2,
            room_min: 3.0,
            room_max: 6.0,
            door_width: 1.0,
            extra_door_prob: 0.25,
            cell_size: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn grid(rows: usize, cols: usize) -> Self {
        WorldConfig {
            rows,
            cols,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.rows < 2 || self.cols < 2 {
            return bad(format!("room grid {}x{} must be at least 2x2", self.rows, self.cols));
        }
        if self.rows * self.cols > ROOM_COLORS {
            return bad(format!("{} rooms exceed the {ROOM_COLORS}-color palette", self.rows * self.cols));
        }
        if !(self.room_min >= 3.0 && self.room_max <= 6.0 && self.room_min <= self.room_max) {
            return bad(format!("room sizes [{}, {}] outside 3-6 m", self.room_min, self.room_max));
        }
        if !(self.door_width >= MIN_DOOR_WIDTH) {
            return bad(format!("door width {} below {MIN_DOOR_WIDTH} m", self.door_width));
        }
        if self.room_min < self.door_width + 2.0 * DOOR_MARGIN {
            return bad(format!("rooms of {} m cannot fit a {} m door", self.room_min, self.door_width));
        }
        if !(0.0..=1.0).contains(&self.extra_door_prob) {
            return bad(format!("extra_door_prob {} not in [0, 1]", self.extra_door_prob));
        }
        if !(self.cell_size > 0.0) {
            return bad(format!("cell_size {} must be positive", self.cell_size));
        }
        Ok(())
    }
}

fn quantized(rng: &mut impl Rng, lo: f64, hi: f64, q: f64) -> f64 {
    let a = (lo / q).ceil() as i64;
    let b = (hi / q).floor() as i64;
    rng.random_range(a..=b) as f64 * q
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Grid of rectangular rooms joined by doors along a random spanning tree,
/// plus a few extra doors to create loops.
pub fn generate_floorplan(seed: u64, config: WorldConfig) -> Result<FloorPlan> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (config.rows, config.cols);

    let mut xs = vec![0.0];
    for _ in 0..cols {
        let w = quantized(&mut rng, config.room_min, config.room_max, SIZE_QUANTUM);
        xs.push(xs.last().unwrap() + w);
    }
    let mut ys = vec![0.0];
    for _ in 0..rows {
        let h = quantized(&mut rng, config.room_min, config.room_max, SIZE_QUANTUM);
        ys.push(ys.last().unwrap() + h);
    }

    let mut colors: Vec<u8> = (0..ROOM_COLORS as u8).collect();
    colors.shuffle(&mut rng);
    let room_id = |r: usize, c: usize| r * cols + c;
    let rooms: Vec<Room> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| Room {
            min: Point::new(xs[c] + WALL_INSET, ys[r] + WALL_INSET),
            max: Point::new(xs[c + 1] - WALL_INSET, ys[r + 1] - WALL_INSET),
            color: colors[room_id(r, c)],
        })
        .collect();

    // Grid edges between adjacent rooms, shuffled, then Kruskal.
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((room_id(r, c), room_id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((room_id(r, c), room_id(r + 1, c)));
            }
        }
    }
    edges.shuffle(&mut rng);
    let mut parent: Vec<usize> = (0..rooms.len()).collect();
    let mut doors = Vec::new();
    for (u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        let in_tree = ru != rv;
        let extra = rng.random::<f64>() < config.extra_door_prob;
        if in_tree {
            parent[ru] = rv;
        }
        if !(in_tree || extra) {
            continue;
        }
        let (ur, uc) = (u / cols, u % cols);
        let door = if v == u + 1 {
            // Vertical shared wall at xs[uc + 1].
            let x = xs[uc + 1];
            let s = quantized(
                &mut rng,
                ys[ur] + DOOR_MARGIN,
                ys[ur + 1] - DOOR_MARGIN - config.door_width,
                DOOR_QUANTUM,
            );
            Door {
                a: Point::new(x, s),
                b: Point::new(x, s + config.door_width),
                rooms: (u, v),
            }
        } else {
            let y = ys[ur + 1];
            let s = quantized(
                &mut rng,
                xs[uc] + DOOR_MARGIN,
                xs[uc + 1] - DOOR_MARGIN - config.door_width,
                DOOR_QUANTUM,
            );
            Door {
                a: Point::new(s, y),
                b: Point::new(s + config.door_width, y),
                rooms: (u, v),
            }
        };
        doors.push(door);
    }
    doors.sort_by_key(|d| d.rooms);

    let mut walls = Vec::new();
    for (k, room) in rooms.iter().enumerate() {
        let (lo, hi) = (room.min, room.max);
        let sides = [
            (Point::new(lo.x, lo.y), Point::new(hi.x, lo.y)),
            (Point::new(hi.x, lo.y), Point::new(hi.x, hi.y)),
            (Point::new(hi.x, hi.y), Point::new(lo.x, hi.y)),
            (Point::new(lo.x, hi.y), Point::new(lo.x, lo.y)),
        ];
        for (a, b) in sides {
            let horizontal = a.y == b.y;
            // Door gaps cut into this side, as intervals along its axis.
            let mut gaps: Vec<(f64, f64)> = doors
                .iter()
                .filter(|d| d.rooms.0 == k || d.rooms.1 == k)
                .filter(|d| {
                    if horizontal {
                        d.a.y == d.b.y && (d.a.y - a.y).abs() <= WALL_INSET + 1e-9
                    } else {
                        d.a.x == d.b.x && (d.a.x - a.x).abs() <= WALL_INSET + 1e-9
                    }
                })
                .map(|d| if horizontal { (d.a.x, d.b.x) } else { (d.a.y, d.b.y) })
                .collect();
            gaps.sort_by(|p, q| p.0.total_cmp(&q.0));
            let (t0, t1) = if horizontal {
                (a.x.min(b.x), a.x.max(b.x))
            } else {
                (a.y.min(b.y), a.y.max(b.y))
            };
            let at = |t: f64| if horizontal { Point::new(t, a.y) } else { Point::new(a.x, t) };
            let mut cursor = t0;
            for (g0, g1) in gaps {
                walls.push(Wall { a: at(cursor), b: at(g0), color: room.color });
                cursor = g1;
            }
            walls.push(Wall { a: at(cursor), b: at(t1), color: room.color });
        }
    }
    for d in &doors {
        for t in [d.a, d.b] {
            let (a, b) = if d.a.x == d.b.x {
                (Point::new(t.x - WALL_INSET, t.y), Point::new(t.x + WALL_INSET, t.y))
            } else {
                (Point::new(t.x, t.y - WALL_INSET), Point::new(t.x, t.y + WALL_INSET))
            };
            walls.push(Wall { a, b, color: JAMB_COLOR });
        }
    }

    let bounds = (Point::new(0.0, 0.0), Point::new(xs[cols], ys[rows]));
    Ok(FloorPlan::new(seed, Some(config), bounds, walls, rooms, doors))
}
