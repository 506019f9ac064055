//! Procedural 2.5D indoor world: floorplans, agent kinematics under the
//! ten-action space, and grid pathfinding oracles.

mod format;
mod generate;
mod geometry;
mod grid;
mod kinematics;
mod oracle;

pub use format::{parse_floorplan, write_floorplan, FORMAT_VERSION};
pub use generate::{generate_floorplan, WorldConfig};
pub use geometry::{ray_hit, segment_distance, segments_intersect, Point};
pub use grid::{OccupancyGrid, GRID_RES};
pub use kinematics::{step_action, StepOutcome, AGENT_RADIUS};
pub use oracle::{
    distance_field, geodesic_distance, oracle_action, oracle_rollout, path_length, path_to_actions, shortest_path,
    DistanceField,
    LOS_CLEARANCE, MAX_COMPILED_ACTIONS, STOP_RADIUS, TURN_DEADBAND_DEG, WAYPOINT_RADIUS,
};

use serde::{Deserialize, Serialize};

use crate::hashing::hash_u64;

/// Room label palette. Index 12 is the neutral door-jamb color.
pub const PALETTE: [(&str, [f64; 3]); 13] = [
    ("red", [0.85, 0.15, 0.15]),
    ("green", [0.2, 0.7, 0.25]),
    ("blue", [0.2, 0.3, 0.9]),
    ("yellow", [0.9, 0.85, 0.2]),
    ("purple", [0.55, 0.25, 0.7]),
    ("orange", [0.95, 0.55, 0.1]),
    ("pink", [0.95, 0.55, 0.7]),
    ("cyan", [0.2, 0.8, 0.85]),
    ("brown", [0.5, 0.3, 0.15]),
    ("white", [0.95, 0.95, 0.95]),
    ("gray", [0.55, 0.55, 0.55]),
    ("olive", [0.5, 0.5, 0.1]),
    ("jamb", [0.35, 0.35, 0.35]),
];
pub const ROOM_COLORS: usize = 12;
pub const JAMB_COLOR: u8 = 12;

pub fn color_name(id: u8) -> &'static str {
    PALETTE[id as usize].0
}

pub fn color_rgb(id: u8) -> [f64; 3] {
    PALETTE[id as usize].1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: Point,
    pub b: Point,
    pub color: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub min: Point,
    pub max: Point,
    pub color: u8,
}

impl Room {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.min.x + self.max.x), 0.5 * (self.min.y + self.max.y))
    }
}

/// A door opening: the gap segment across a shared wall and the two rooms it
/// joins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub a: Point,
    pub b: Point,
    pub rooms: (usize, usize),
}

/// Immutable world. Construct through [`generate_floorplan`],
/// [`parse_floorplan`] or [`FloorPlan::new`]; the occupancy grid is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlan {
    pub seed: u64,
    pub config: Option<WorldConfig>,
    pub cell_size: f64,
    pub bounds: (Point, Point),
    pub walls: Vec<Wall>,
    pub rooms: Vec<Room>,
    pub doors: Vec<Door>,
    occupancy: OccupancyGrid,
    fingerprint: u64,
}

impl FloorPlan {
    pub fn new(
        seed: u64,
        config: Option<WorldConfig>,
        bounds: (Point, Point),
        walls: Vec<Wall>,
        rooms: Vec<Room>,
        doors: Vec<Door>,
    ) -> Self {
        let occupancy = OccupancyGrid::build(bounds, &walls);
        let mut plan = FloorPlan {
            seed,
            config,
            cell_size: config.map_or(1.0, |c| c.cell_size),
            bounds,
            walls,
            rooms,
            doors,
            occupancy,
            fingerprint: 0,
        };
        plan.fingerprint = hash_u64(write_floorplan(&plan).as_bytes());
        plan
    }

    /// Enclosed empty box, handy for tests and previews.
    pub fn open_box(min: Point, max: Point, color: u8) -> Self {
        let c = [min, Point::new(max.x, min.y), max, Point::new(min.x, max.y)];
        let walls = (0..4)
            .map(|i| Wall {
                a: c[i],
                b: c[(i + 1) % 4],
                color,
            })
            .collect();
        FloorPlan::new(
            0,
            None,
            (min, max),
            walls,
            vec![Room { min, max, color }],
            vec![],
        )
    }

    pub fn occupancy(&self) -> &OccupancyGrid {
        &self.occupancy
    }

    /// Content hash of the serialized plan.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn room_at(&self, p: Point) -> Option<usize> {
        self.rooms.iter().position(|r| r.contains(p))
    }

    pub fn min_wall_distance(&self, p: Point) -> f64 {
        self.walls
            .iter()
            .map(|w| geometry::point_segment_distance(p, w.a, w.b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Inside the bounds and the agent disc touches no wall.
    pub fn is_free(&self, p: Point) -> bool {
        let (lo, hi) = self.bounds;
        p.x > lo.x && p.x < hi.x && p.y > lo.y && p.y < hi.y && self.min_wall_distance(p) >= AGENT_RADIUS
    }

    /// Whether the disc of `radius` swept from `a` to `b` stays clear of walls.
    pub fn swept_clear(&self, a: Point, b: Point, radius: f64) -> bool {
        self.walls.iter().all(|w| segment_distance(a, b, w.a, w.b) >= radius)
    }
}

/// Agent pose. Heading is stored in integer quarter-degrees so that turn
/// arithmetic is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "PoseRecord", from = "PoseRecord")]
pub struct Pose {
    x_bits: u64,
    y_bits: u64,
    heading_q: u32,
}

pub const QUARTERS_PER_TURN: u32 = 1440;

impl Pose {
    pub fn new(x: f64, y: f64, heading_deg: f64) -> Self {
        let q = (heading_deg * 4.0).round().rem_euclid(QUARTERS_PER_TURN as f64) as u32;
        Pose::from_quarters(x, y, q)
    }

    pub fn from_quarters(x: f64, y: f64, heading_q: u32) -> Self {
        Pose {
            x_bits: x.to_bits(),
            y_bits: y.to_bits(),
            heading_q: heading_q % QUARTERS_PER_TURN,
        }
    }

    pub fn x(&self) -> f64 {
        f64::from_bits(self.x_bits)
    }

    pub fn y(&self) -> f64 {
        f64::from_bits(self.y_bits)
    }

    pub fn position(&self) -> Point {
        Point::new(self.x(), self.y())
    }

    pub fn heading_quarters(&self) -> u32 {
        self.heading_q
    }

    /// Heading in degrees, in `[0, 360)`. Counter-clockwise from +x.
    pub fn heading_deg(&self) -> f64 {
        self.heading_q as f64 / 4.0
    }

    pub fn heading_rad(&self) -> f64 {
        self.heading_deg().to_radians()
    }

    /// Rotated by `delta_q` quarter-degrees (positive = left).
    pub fn rotated(&self, delta_q: i64) -> Pose {
        let q = (self.heading_q as i64 + delta_q).rem_euclid(QUARTERS_PER_TURN as i64) as u32;
        Pose::from_quarters(self.x(), self.y(), q)
    }

    pub fn with_position(&self, p: Point) -> Pose {
        Pose::from_quarters(p.x, p.y, self.heading_q)
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    x: f64,
    y: f64,
    heading: f64,
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        PoseRecord {
            x: p.x(),
            y: p.y(),
            heading: p.heading_deg(),
        }
    }
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        Pose::new(r.x, r.y, r.heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stride {
    Cm25,
    Cm50,
    Cm75,
}

impl Stride {
    pub const ALL: [Stride; 3] = [Stride::Cm25, Stride::Cm50, Stride::Cm75];

    pub fn meters(self) -> f64 {
        match self {
            Stride::Cm25 => 0.25,
            Stride::Cm50 => 0.5,
            Stride::Cm75 => 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Turn {
    Deg15,
    Deg30,
    Deg45,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Deg15, Turn::Deg30, Turn::Deg45];

    pub fn degrees(self) -> u32 {
        match self {
            Turn::Deg15 => 15,
            Turn::Deg30 => 30,
            Turn::Deg45 => 45,
        }
    }
}

/// The ten discrete navigation actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Forward(Stride),
    TurnLeft(Turn),
    TurnRight(Turn),
    Stop,
}

impl Action {
    pub const COUNT: usize = 10;

    pub const ALL: [Action; 10] = [
        Action::Forward(Stride::Cm25),
        Action::Forward(Stride::Cm50),
        Action::Forward(Stride::Cm75),
        Action::TurnLeft(Turn::Deg15),
        Action::TurnLeft(Turn::Deg30),
        Action::TurnLeft(Turn::Deg45),
        Action::TurnRight(Turn::Deg15),
        Action::TurnRight(Turn::Deg30),
        Action::TurnRight(Turn::Deg45),
        Action::Stop,
    ];

    pub fn index(self) -> usize {
        Action::ALL.iter().position(|&a| a == self).expect("listed")
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Short stable name, e.g. `forward50`, `left30`, `stop`.
    pub fn name(self) -> String {
        match self {
            Action::Forward(s) => format!("forward{}", (s.meters() * 100.0) as u32),
            Action::TurnLeft(t) => format!("left{}", t.degrees()),
            Action::TurnRight(t) => format!("right{}", t.degrees()),
            Action::Stop => "stop".to_string(),
        }
    }

    pub fn from_name(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Signed heading change in quarter-degrees.
    pub fn turn_quarters(self) -> i64 {
        match self {
            Action::TurnLeft(t) => 4 * t.degrees() as i64,
            Action::TurnRight(t) => -4 * t.degrees() as i64,
            _ => 0,
        }
    }

    pub fn forward_meters(self) -> f64 {
        match self {
            Action::Forward(s) => s.meters(),
            _ => 0.0,
        }
    }
}
