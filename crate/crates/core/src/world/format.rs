//! Line-oriented text serialization of floorplans.
//!
//! ```text
//! floorplan <version>
//! seed <u64>
//! config <rows> <cols> <room_min> <room_max> <door_width> <extra_door_prob> <cell_size> | config none
//! config_hash <hex>
//! cell_size <m>
//! bounds <x0> <y0> <x1> <y1>
//! wall <ax> <ay> <bx> <by> <color>
//! room <x0> <y0> <x1> <y1> <color>
//! door <ax> <ay> <bx> <by> <room_a> <room_b>
//! ```
//!
//! Floats use the shortest round-trip representation, so parse(write(p)) == p.

use std::fmt::Write as _;

use super::geometry::Point;
use super::{Door, FloorPlan, Room, Wall, WorldConfig, PALETTE};
use crate::error::{Error, Result};
use crate::hashing::short_hash;

pub const FORMAT_VERSION: u32 = 1;

fn config_line(c: &Option<WorldConfig>) -> String {
    match c {
        None => "config none".into(),
        Some(c) => format!(
            "config {} {} {} {} {} {} {}",
            c.rows, c.cols, c.room_min, c.room_max, c.door_width, c.extra_door_prob, c.cell_size
        ),
    }
}

pub fn write_floorplan(plan: &FloorPlan) -> String {
    let mut s = String::new();
    let cfg = config_line(&plan.config);
    let (lo, hi) = plan.bounds;
    writeln!(s, "floorplan {FORMAT_VERSION}").unwrap();
    writeln!(s, "seed {}", plan.seed).unwrap();
    writeln!(s, "{cfg}").unwrap();
    writeln!(s, "config_hash {}", short_hash(cfg.as_bytes())).unwrap();
    writeln!(s, "cell_size {}", plan.cell_size).unwrap();
    writeln!(s, "bounds {} {} {} {}", lo.x, lo.y, hi.x, hi.y).unwrap();
    for w in &plan.walls {
        writeln!(s, "wall {} {} {} {} {}", w.a.x, w.a.y, w.b.x, w.b.y, w.color).unwrap();
    }
    for r in &plan.rooms {
        writeln!(s, "room {} {} {} {} {}", r.min.x, r.min.y, r.max.x, r.max.y, r.color).unwrap();
    }
    for d in &plan.doors {
        writeln!(s, "door {} {} {} {} {} {}", d.a.x, d.a.y, d.b.x, d.b.y, d.rooms.0, d.rooms.1).unwrap();
    }
    s
}

fn fields<T: std::str::FromStr>(line: usize, parts: &[&str], n: usize) -> Result<Vec<T>> {
    if parts.len() != n {
        return Err(Error::Parse(format!("line {line}: expected {n} fields, got {}", parts.len())));
    }
    parts
        .iter()
        .map(|p| p.parse::<T>().map_err(|_| Error::Parse(format!("line {line}: bad number {p:?}"))))
        .collect()
}

fn color(line: usize, s: &str) -> Result<u8> {
    let c: u8 = s.parse().map_err(|_| Error::Parse(format!("line {line}: bad color {s:?}")))?;
    if c as usize >= PALETTE.len() {
        return Err(Error::Parse(format!("line {line}: color {c} outside palette")));
    }
    Ok(c)
}

pub fn parse_floorplan(text: &str) -> Result<FloorPlan> {
    let mut seed = None;
    let mut config = None;
    let mut config_seen = false;
    let mut bounds = None;
    let (mut walls, mut rooms, mut doors) = (Vec::new(), Vec::new(), Vec::new());
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == format!("floorplan {FORMAT_VERSION}") => {}
        Some((_, l)) => return Err(Error::Parse(format!("unsupported header {l:?}"))),
        None => return Err(Error::Parse("empty floorplan".into())),
    }
    for (i, line) in lines {
        let n = i + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let rest = &parts[1..];
        match parts[0] {
            "seed" => seed = Some(fields::<u64>(n, rest, 1)?[0]),
            "config" if rest == ["none"] => config_seen = true,
            "config" => {
                let v = fields::<f64>(n, rest, 7)?;
                config_seen = true;
                config = Some(WorldConfig {
                    rows: v[0] as usize,
                    cols: v[1] as usize,
                    room_min: v[2],
                    room_max: v[3],
                    door_width: v[4],
                    extra_door_prob: v[5],
                    cell_size: v[6],
                });
            }
            "config_hash" | "cell_size" => {}
            "bounds" => {
                let v = fields::<f64>(n, rest, 4)?;
                bounds = Some((Point::new(v[0], v[1]), Point::new(v[2], v[3])));
            }
            "wall" => {
                let v = fields::<f64>(n, &rest[..rest.len().min(4)], 4)?;
                fields::<u8>(n, &rest[4.min(rest.len())..], 1)?;
                walls.push(Wall {
                    a: Point::new(v[0], v[1]),
                    b: Point::new(v[2], v[3]),
                    color: color(n, rest[4])?,
                });
            }
            "room" => {
                let v = fields::<f64>(n, &rest[..rest.len().min(4)], 4)?;
                fields::<u8>(n, &rest[4.min(rest.len())..], 1)?;
                rooms.push(Room {
                    min: Point::new(v[0], v[1]),
                    max: Point::new(v[2], v[3]),
                    color: color(n, rest[4])?,
                });
            }
            "door" => {
                let v = fields::<f64>(n, &rest[..rest.len().min(4)], 4)?;
                let r = fields::<usize>(n, &rest[4.min(rest.len())..], 2)?;
                doors.push(Door {
                    a: Point::new(v[0], v[1]),
                    b: Point::new(v[2], v[3]),
                    rooms: (r[0], r[1]),
                });
            }
            other => return Err(Error::Parse(format!("line {n}: unknown record {other:?}"))),
        }
    }
    let seed = seed.ok_or_else(|| Error::Parse("missing seed".into()))?;
    if !config_seen {
        return Err(Error::Parse("missing config".into()));
    }
    let bounds = bounds.ok_or_else(|| Error::Parse("missing bounds".into()))?;
    Ok(FloorPlan::new(seed, config, bounds, walls, rooms, doors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_floorplan;

    #[test]
    fn round_trip_is_exact() {
        let plan = generate_floorplan(5, WorldConfig::grid(2, 3)).unwrap();
        let text = write_floorplan(&plan);
        let back = parse_floorplan(&text).unwrap();
        assert_eq!(back, plan);
        assert_eq!(write_floorplan(&back), text);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_floorplan("floorplan 9\n").is_err());
        assert!(parse_floorplan("floorplan 1\nseed x\n").is_err());
        assert!(parse_floorplan("floorplan 1\nseed 1\nconfig none\nbounds 0 0 1 1\nwall 0 0 1\n").is_err());
    }
}
