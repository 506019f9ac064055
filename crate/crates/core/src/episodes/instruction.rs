use serde::{Deserialize, Serialize};

use super::vocab::vocab;
use crate::world::{color_name, FloorPlan, Point, Pose};

/// Bends smaller than this between path segments are folded into one
/// forward clause.
pub const TURN_CLAUSE_DEG: f64 = 30.0;
/// Bends at least this sharp read as "turn around".
pub const TURN_AROUND_DEG: f64 = 135.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub tokens: Vec<usize>,
}

impl Instruction {
    pub fn from_text(text: &str) -> crate::Result<Instruction> {
        Ok(Instruction {
            text: text.to_string(),
            tokens: vocab().tokenize(text)?,
        })
    }
}

fn wrap_deg(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

/// Spacing of the room probes taken along each path segment.
const ROOM_PROBE_STEP: f64 = 0.05;

/// Rooms entered along segment `a -> b`, in order. Probes inside wall gaps
/// belong to no room and are ignored.
fn rooms_entered(plan: &FloorPlan, a: Point, b: Point, mut current: Option<usize>) -> (Vec<usize>, Option<usize>) {
    let steps = (a.dist(b) / ROOM_PROBE_STEP).ceil().max(1.0) as usize;
    let mut entered = Vec::new();
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let p = Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
        if let Some(r) = plan.room_at(p) {
            if current.is_some_and(|c| c != r) {
                entered.push(r);
            }
            current = Some(r);
        }
    }
    (entered, current)
}

enum Clause {
    Turn(f64),
    Forward(Option<u8>),
    Stop(Option<u8>),
}

/// Compiles the waypoint polyline into clauses: one per turn, one per run of
/// forward segments (naming the last room entered), and a closing stop.
pub fn generate_instruction(plan: &FloorPlan, start: Pose, waypoints: &[Point]) -> Instruction {
    let mut clauses = Vec::new();
    let mut heading = start.heading_deg();
    let mut forward: Option<Option<u8>> = None;
    let mut room = plan.room_at(start.position());
    for seg in waypoints.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if a.dist(b) < 1e-9 {
            continue;
        }
        let dir = (b.y - a.y).atan2(b.x - a.x).to_degrees();
        let turn = wrap_deg(dir - heading);
        if turn.abs() >= TURN_CLAUSE_DEG {
            if let Some(room) = forward.take() {
                clauses.push(Clause::Forward(room));
            }
            clauses.push(Clause::Turn(turn));
        }
        heading = dir;
        let (entered, now) = rooms_entered(plan, a, b, room);
        room = now;
        let last = entered.last().map(|&r| plan.rooms[r].color);
        forward = Some(last.or(forward.flatten()));
    }
    if let Some(room) = forward {
        clauses.push(Clause::Forward(room));
    }
    let goal = waypoints.last().copied().unwrap_or(start.position());
    clauses.push(Clause::Stop(plan.room_at(goal).or(room).map(|r| plan.rooms[r].color)));

    let text = clauses
        .iter()
        .map(|c| match c {
            Clause::Turn(t) if t.abs() >= TURN_AROUND_DEG => "turn around.".to_string(),
            Clause::Turn(t) if *t > 0.0 => "turn left.".to_string(),
            Clause::Turn(_) => "turn right.".to_string(),
            Clause::Forward(None) => "go forward.".to_string(),
            Clause::Forward(Some(c)) => format!("go forward through the {} room.", color_name(*c)),
            Clause::Stop(None) => "stop.".to_string(),
            Clause::Stop(Some(c)) => format!("stop in the {} room.", color_name(*c)),
        })
        .collect::<Vec<_>>()
        .join(" ");
    Instruction::from_text(&text).expect("instruction words are in the vocabulary")
}
