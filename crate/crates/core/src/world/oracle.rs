use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use super::geometry::Point;
use super::grid::{OccupancyGrid, GRID_RES};
use super::kinematics::step_action;
use super::{Action, FloorPlan, Pose, Stride, Turn, AGENT_RADIUS};
use crate::error::{Error, Result};

/// Disc clearance required for line-of-sight shortcuts between waypoints.
pub const LOS_CLEARANCE: f64 = 0.28;
/// Minimum wall clearance of grid cells the waypoint search may use.
const PATH_CLEARANCE: f64 = 0.3;
pub const WAYPOINT_RADIUS: f64 = 0.3;
pub const STOP_RADIUS: f64 = 0.5;
pub const TURN_DEADBAND_DEG: f64 = 7.5;
pub const MAX_COMPILED_ACTIONS: usize = 1000;
const MAX_REPLANS: usize = 50;

/// Path cost as (straight moves, diagonal moves). Comparing on a single
/// derived key keeps every search over the same grid bit-compatible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Moves {
    straight: u32,
    diagonal: u32,
}

impl Moves {
    fn key(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    fn meters(self) -> f64 {
        GRID_RES * self.key()
    }

    fn then(self, diagonal: bool) -> Moves {
        if diagonal {
            Moves { diagonal: self.diagonal + 1, ..self }
        } else {
            Moves { straight: self.straight + 1, ..self }
        }
    }
}

#[derive(PartialEq)]
struct Open {
    priority: f64,
    cell: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn octile(grid: &OccupancyGrid, a: usize, b: usize) -> f64 {
    let (ai, aj) = grid.coords(a);
    let (bi, bj) = grid.coords(b);
    let dx = ai.abs_diff(bi) as f64;
    let dy = aj.abs_diff(bj) as f64;
    (dx.max(dy) - dx.min(dy)) + dx.min(dy) * SQRT_2
}

/// A* over free cells; returns the move counts and the cell sequence.
fn astar(
    grid: &OccupancyGrid,
    start: usize,
    goal: usize,
    free: &dyn Fn(usize) -> bool,
) -> Option<(Moves, Vec<usize>)> {
    let n = grid.len();
    let mut best: Vec<Option<Moves>> = vec![None; n];
    let mut came = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    best[start] = Some(Moves::default());
    open.push(Open {
        priority: octile(grid, start, goal),
        cell: start,
    });
    while let Some(Open { cell, .. }) = open.pop() {
        if closed[cell] {
            continue;
        }
        closed[cell] = true;
        let g = best[cell].expect("queued cells have a cost");
        if cell == goal {
            let mut path = vec![goal];
            let mut k = goal;
            while k != start {
                k = came[k];
                path.push(k);
            }
            path.reverse();
            return Some((g, path));
        }
        for (next, diag) in grid.neighbours(cell, free) {
            if closed[next] {
                continue;
            }
            let cand = g.then(diag);
            if best[next].is_none_or(|b| cand.key() < b.key()) {
                best[next] = Some(cand);
                came[next] = cell;
                open.push(Open {
                    priority: cand.key() + octile(grid, next, goal),
                    cell: next,
                });
            }
        }
    }
    None
}

/// The cell containing `p` if acceptable, otherwise the acceptable cell whose
/// center is nearest to `p`.
fn snap(grid: &OccupancyGrid, p: Point, accept: &dyn Fn(usize) -> bool) -> Option<usize> {
    let (i, j) = grid.cell_of(p);
    let k = grid.index(i, j);
    if accept(k) {
        return Some(k);
    }
    (0..grid.len())
        .filter(|&k| accept(k))
        .min_by(|&a, &b| {
            let (ai, aj) = grid.coords(a);
            let (bi, bj) = grid.coords(b);
            p.dist(grid.center(ai, aj))
                .total_cmp(&p.dist(grid.center(bi, bj)))
                .then(a.cmp(&b))
        })
}

fn unreachable(a: Point, b: Point) -> Error {
    Error::Unreachable(a.x, a.y, b.x, b.y)
}

/// Octile grid distance between the cells holding `a` and `b`, in meters.
/// Endpoints inside blocked cells are moved to the nearest free cell.
pub fn geodesic_distance(plan: &FloorPlan, a: Point, b: Point) -> Result<f64> {
    let grid = plan.occupancy();
    let free = |k: usize| !grid.blocked_at(k);
    let sa = snap(grid, a, &free).ok_or_else(|| unreachable(a, b))?;
    let sb = snap(grid, b, &free).ok_or_else(|| unreachable(a, b))?;
    astar(grid, sa, sb, &free)
        .map(|(m, _)| m.meters())
        .ok_or_else(|| unreachable(a, b))
}

/// Single-source grid distances to a goal, for repeated queries against the
/// same target.
#[derive(Debug, Clone)]
pub struct DistanceField {
    goal: Point,
    dist: Vec<Option<Moves>>,
}

impl DistanceField {
    pub fn goal(&self) -> Point {
        self.goal
    }

    /// Same value as [`geodesic_distance`] from `p` to the goal.
    pub fn at(&self, plan: &FloorPlan, p: Point) -> Result<f64> {
        let grid = plan.occupancy();
        let free = |k: usize| !grid.blocked_at(k);
        let k = snap(grid, p, &free).ok_or_else(|| unreachable(p, self.goal))?;
        self.dist[k]
            .map(Moves::meters)
            .ok_or_else(|| unreachable(p, self.goal))
    }
}

pub fn distance_field(plan: &FloorPlan, goal: Point) -> Result<DistanceField> {
    let grid = plan.occupancy();
    let free = |k: usize| !grid.blocked_at(k);
    let src = snap(grid, goal, &free).ok_or_else(|| unreachable(goal, goal))?;
    let mut dist: Vec<Option<Moves>> = vec![None; grid.len()];
    let mut done = vec![false; grid.len()];
    let mut open = BinaryHeap::new();
    dist[src] = Some(Moves::default());
    open.push(Open { priority: 0.0, cell: src });
    while let Some(Open { cell, .. }) = open.pop() {
        if done[cell] {
            continue;
        }
        done[cell] = true;
        let g = dist[cell].expect("queued");
        for (next, diag) in grid.neighbours(cell, free) {
            let cand = g.then(diag);
            if !done[next] && dist[next].is_none_or(|b| cand.key() < b.key()) {
                dist[next] = Some(cand);
                open.push(Open {
                    priority: cand.key(),
                    cell: next,
                });
            }
        }
    }
    Ok(DistanceField { goal, dist })
}

pub fn path_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Waypoint polyline from the start position to `goal`: A* over cells with
/// comfortable wall clearance, then greedy line-of-sight shortcutting.
pub fn shortest_path(plan: &FloorPlan, start: Pose, goal: Point) -> Result<Vec<Point>> {
    let from = start.position();
    if from.dist(goal) < 1e-9 {
        return Ok(vec![goal]);
    }
    let grid = plan.occupancy();
    let center = |k: usize| {
        let (i, j) = grid.coords(k);
        grid.center(i, j)
    };
    let mut cells = None;
    for clearance in [PATH_CLEARANCE, AGENT_RADIUS] {
        let free = |k: usize| !grid.blocked_at(k) && grid.clearance_at(k) >= clearance;
        let enter_from = |p: Point| move |k: usize| free(k) && plan.swept_clear(p, center(k), AGENT_RADIUS);
        let (Some(s), Some(g)) = (snap(grid, from, &enter_from(from)), snap(grid, goal, &enter_from(goal)))
        else {
            continue;
        };
        if let Some((_, path)) = astar(grid, s, g, &free) {
            cells = Some(path);
            break;
        }
    }
    let cells = cells.ok_or_else(|| unreachable(from, goal))?;

    let mut raw = vec![from];
    raw.extend(cells.into_iter().map(center));
    raw.push(goal);
    raw.dedup_by(|a, b| a.dist(*b) < 1e-12);

    // Shortest shortcut chain over the raw points: any pair with a clear
    // corridor may be joined, consecutive points always may.
    let n = raw.len();
    let mut best = vec![f64::INFINITY; n];
    let mut prev = vec![0; n];
    best[0] = 0.0;
    // Endpoints may sit closer to walls than the shortcut margin; segments
    // leaving them only need the clearance the endpoint itself has.
    let margin = |p: Point| LOS_CLEARANCE.min(plan.min_wall_distance(p)).max(AGENT_RADIUS);
    let (m_first, m_last) = (margin(raw[0]), margin(raw[n - 1]));
    for j in 1..n {
        for i in 0..j {
            let cand = best[i] + raw[i].dist(raw[j]);
            let clearance = match (i, j) {
                (0, j) if j == n - 1 => m_first.min(m_last),
                (0, _) => m_first,
                (_, j) if j == n - 1 => m_last,
                _ => LOS_CLEARANCE,
            };
            if cand < best[j] && (i + 1 == j || plan.swept_clear(raw[i], raw[j], clearance)) {
                best[j] = cand;
                prev[j] = i;
            }
        }
    }
    let mut out = vec![raw[n - 1]];
    let mut k = n - 1;
    while k != 0 {
        k = prev[k];
        out.push(raw[k]);
    }
    out.reverse();
    let clear = |pts: &[Point], i: usize, j: usize, a: Point, b: Point| {
        let c = if i == 0 && j == pts.len() - 1 {
            m_first.min(m_last)
        } else if i == 0 {
            m_first
        } else if j == pts.len() - 1 {
            m_last
        } else {
            LOS_CLEARANCE
        };
        plan.swept_clear(a, b, c)
    };
    for _ in 0..4 {
        pull_taut(&mut out, &clear);
        merge_corner_pairs(&mut out, &clear);
    }
    Ok(out)
}

type Clearance<'a> = dyn Fn(&[Point], usize, usize, Point, Point) -> bool + 'a;

/// Slides each interior waypoint toward the chord between its neighbours as
/// far as the clearance allows, and drops it once the chord itself is clear.
fn pull_taut(pts: &mut Vec<Point>, clear: &Clearance) {
    for _ in 0..8 {
        let mut i = 1;
        while i + 1 < pts.len() {
            let (p, w, n) = (pts[i - 1], pts[i], pts[i + 1]);
            if clear(pts, i - 1, i + 1, p, n) {
                pts.remove(i);
                continue;
            }
            let chord = n.sub(p);
            let t = (w.sub(p).dot(chord) / chord.dot(chord)).clamp(0.0, 1.0);
            let toward = p.add(chord.scale(t)).sub(w);
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..12 {
                let mid = 0.5 * (lo + hi);
                let q = w.add(toward.scale(mid));
                if clear(pts, i - 1, i, p, q) && clear(pts, i, i + 1, q, n) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            pts[i] = w.add(toward.scale(lo));
            i += 1;
        }
    }
}

/// Replaces two nearby interior waypoints by the intersection of the legs
/// entering and leaving them when that single corner is also clear and barely
/// longer. Grid paths round a convex corner through two cell centers; one
/// turn is easier to follow.
fn merge_corner_pairs(pts: &mut Vec<Point>, clear: &Clearance) {
    let mut i = 1;
    while i + 2 < pts.len() {
        let (p, a, b, n) = (pts[i - 1], pts[i], pts[i + 1], pts[i + 2]);
        let (d1, d2) = (a.sub(p), n.sub(b));
        let denom = d1.cross(d2);
        let merged = (denom.abs() > 1e-12).then(|| p.add(d1.scale(b.sub(p).cross(d2) / denom)));
        let before = p.dist(a) + a.dist(b) + b.dist(n);
        let ok = merged.filter(|&q| {
            let mut trial = pts.clone();
            trial[i] = q;
            trial.remove(i + 1);
            p.dist(q) + q.dist(n) <= before + 0.1
                && clear(&trial, i - 1, i, p, q)
                && clear(&trial, i, i + 1, q, n)
        });
        match ok {
            Some(q) => {
                pts[i] = q;
                pts.remove(i + 1);
            }
            None => i += 1,
        }
    }
}

/// Signed bearing from `pose` to `target` relative to its heading, degrees in
/// (-180, 180]. Positive means the target is to the left.
#[cfg(test)]
fn heading_error(pose: &Pose, target: Point) -> f64 {
    let d = target.sub(pose.position());
    let bearing = d.y.atan2(d.x).to_degrees();
    wrap_deg(bearing - pose.heading_deg())
}

fn wrap_deg(a: f64) -> f64 {
    let e = a.rem_euclid(360.0);
    if e > 180.0 {
        e - 360.0
    } else {
        e
    }
}

fn turn_for(error: f64) -> Action {
    let mag = error.abs();
    let turn = [Turn::Deg45, Turn::Deg30, Turn::Deg15]
        .into_iter()
        .find(|t| t.degrees() as f64 <= mag)
        .unwrap_or(Turn::Deg15);
    if error > 0.0 {
        Action::TurnLeft(turn)
    } else {
        Action::TurnRight(turn)
    }
}

/// Heading (degrees, a multiple of 15) to travel toward `aim` from `pos`:
/// the one closest to the bearing whose 25 cm move is free and gets closer.
/// Depends on position only, so a closed-loop policy that re-queries after
/// every turn settles instead of oscillating.
fn travel_heading(plan: &FloorPlan, pos: Point, aim: Point) -> Option<f64> {
    let d = aim.sub(pos);
    let bearing = d.y.atan2(d.x).to_degrees();
    let here = pos.dist(aim);
    let mut cands: Vec<i32> = (0..24).map(|k| 15 * k).collect();
    cands.sort_by(|a, b| {
        wrap_deg(*a as f64 - bearing)
            .abs()
            .total_cmp(&wrap_deg(*b as f64 - bearing).abs())
            .then(a.cmp(b))
    });
    cands.into_iter().map(|h| h as f64).find(|&h| {
        let out = step_action(plan, Pose::new(pos.x, pos.y, h), Action::Forward(Stride::Cm25));
        !out.blocked && out.pose.position().dist(aim) < here
    })
}

/// One decision of the compiler: Stop at the goal, otherwise turn toward the
/// travel heading or stride along it. `None` when no heading makes progress.
fn decide(plan: &FloorPlan, pose: Pose, path: &[Point], idx: usize) -> Option<Action> {
    let goal = *path.last()?;
    let pos = pose.position();
    if idx + 1 == path.len() && pos.dist(goal) <= STOP_RADIUS {
        return Some(Action::Stop);
    }
    let aim = path[idx];
    let heading = travel_heading(plan, pos, aim)?;
    let error = wrap_deg(heading - pose.heading_deg());
    if error.abs() > TURN_DEADBAND_DEG {
        return Some(turn_for(error));
    }
    let reach = pos.dist(aim).max(Stride::Cm25.meters());
    [Stride::Cm75, Stride::Cm50, Stride::Cm25]
        .into_iter()
        .filter(|s| s.meters() <= reach + 1e-9)
        .map(Action::Forward)
        .find(|&a| !step_action(plan, pose, a).blocked)
}

/// Greedy compiler from a waypoint polyline to discrete actions, simulating
/// each action as it goes. Replans from the current pose when no heading
/// makes progress toward the current waypoint.
pub fn path_to_actions(plan: &FloorPlan, start: Pose, waypoints: &[Point]) -> Result<Vec<Action>> {
    if waypoints.is_empty() {
        return Ok(vec![Action::Stop]);
    }
    let goal = waypoints[waypoints.len() - 1];
    let mut path = waypoints.to_vec();
    let mut idx = 1.min(path.len() - 1);
    let mut pose = start;
    let mut actions = Vec::new();
    let mut replans = 0;
    while actions.len() < MAX_COMPILED_ACTIONS {
        while idx + 1 < path.len() && pose.position().dist(path[idx]) <= WAYPOINT_RADIUS {
            idx += 1;
        }
        let Some(action) = decide(plan, pose, &path, idx) else {
            replans += 1;
            if replans > MAX_REPLANS {
                break;
            }
            path = shortest_path(plan, pose, goal)?;
            idx = 1.min(path.len() - 1);
            continue;
        };
        actions.push(action);
        if action == Action::Stop {
            return Ok(actions);
        }
        pose = step_action(plan, pose, action).pose;
    }
    Err(Error::CompileStall(actions.len()))
}

/// Oracle label for `pose`: the first compiled action towards `goal`.
pub fn oracle_action(plan: &FloorPlan, pose: Pose, goal: Point) -> Result<Action> {
    let path = shortest_path(plan, pose, goal)?;
    let actions = path_to_actions(plan, pose, &path)?;
    Ok(actions[0])
}

/// Closed-loop oracle: re-plans from every pose and executes the first
/// compiled action, until it emits Stop. At most `max_steps` moves and turns
/// precede the Stop.
pub fn oracle_rollout(plan: &FloorPlan, start: Pose, goal: Point, max_steps: usize) -> Result<Vec<Action>> {
    let mut pose = start;
    let mut actions = Vec::new();
    loop {
        let a = oracle_action(plan, pose, goal)?;
        actions.push(a);
        if a == Action::Stop {
            return Ok(actions);
        }
        if actions.len() > max_steps {
            return Err(Error::CompileStall(actions.len()));
        }
        pose = step_action(plan, pose, a).pose;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> FloorPlan {
        FloorPlan::open_box(Point::new(-1.0, -1.0), Point::new(5.0, 5.0), 2)
    }

    #[test]
    fn straight_ahead_decomposes_exactly() {
        let plan = room();
        let start = Pose::new(0.0, 0.0, 0.0);
        let goal = Point::new(1.5, 0.0);
        let wps = shortest_path(&plan, start, goal).unwrap();
        assert_eq!(wps.len(), 2);
        let acts = path_to_actions(&plan, start, &wps).unwrap();
        assert_eq!(
            acts,
            vec![Action::Forward(Stride::Cm75), Action::Forward(Stride::Cm75), Action::Stop]
        );
    }

    #[test]
    fn goal_behind_turns_left_four_times() {
        let plan = room();
        let start = Pose::new(2.0, 2.0, 0.0);
        let goal = Point::new(0.0, 2.0);
        let wps = shortest_path(&plan, start, goal).unwrap();
        let acts = path_to_actions(&plan, start, &wps).unwrap();
        assert_eq!(&acts[..4], &[Action::TurnLeft(Turn::Deg45); 4]);
        let mut pose = start;
        let mut last = 180.0f64;
        for a in &acts[..4] {
            pose = step_action(&plan, pose, *a).pose;
            let e = heading_error(&pose, goal).abs();
            assert!(e < last);
            last = e;
        }
    }

    #[test]
    fn start_at_goal_is_single_waypoint() {
        let plan = room();
        let p = Pose::new(1.0, 1.0, 90.0);
        assert_eq!(shortest_path(&plan, p, p.position()).unwrap(), vec![p.position()]);
        assert_eq!(geodesic_distance(&plan, p.position(), p.position()).unwrap(), 0.0);
    }

    #[test]
    fn open_room_geodesic_is_near_euclidean() {
        let plan = room();
        let d = geodesic_distance(&plan, Point::new(0.0, 0.0), Point::new(3.0, 4.0)).unwrap();
        assert!((d - 5.0).abs() <= 0.25 * SQRT_2, "{d}");
    }
}
