use serde::{Deserialize, Serialize};

use super::geometry::Point;
use super::{Action, FloorPlan, Pose};

/// Agent body radius used for collision checks.
pub const AGENT_RADIUS: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub pose: Pose,
    pub blocked: bool,
}

/// Unit heading vector, exact on the axes.
pub(crate) fn heading_vector(pose: &Pose) -> Point {
    match pose.heading_quarters() {
        0 => Point::new(1.0, 0.0),
        360 => Point::new(0.0, 1.0),
        720 => Point::new(-1.0, 0.0),
        1080 => Point::new(0.0, -1.0),
        _ => {
            let r = pose.heading_rad();
            Point::new(r.cos(), r.sin())
        }
    }
}

/// Applies one action. A forward move whose swept disc would touch a wall
/// leaves the pose unchanged and sets `blocked`.
pub fn step_action(plan: &FloorPlan, pose: Pose, action: Action) -> StepOutcome {
    match action {
        Action::Stop => StepOutcome { pose, blocked: false },
        Action::TurnLeft(_) | Action::TurnRight(_) => StepOutcome {
            pose: pose.rotated(action.turn_quarters()),
            blocked: false,
        },
        Action::Forward(s) => {
            let from = pose.position();
            let to = from.add(heading_vector(&pose).scale(s.meters()));
            if plan.swept_clear(from, to, AGENT_RADIUS) {
                StepOutcome {
                    pose: pose.with_position(to),
                    blocked: false,
                }
            } else {
                StepOutcome { pose, blocked: true }
            }
        }
    }
}
