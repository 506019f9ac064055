use std::sync::Arc;

use super::depth::{colormap_apply, encode_depth};
use super::{Image, PanoramaKind, PanoramaSet, SensorConfig, FACE_OFFSETS_DEG};
use crate::world::{color_rgb, ray_hit, FloorPlan, Point, Pose};

const CEILING_RGB: [f64; 3] = [0.85, 0.85, 0.8];
const FLOOR_RGB: [f64; 3] = [0.45, 0.35, 0.25];

/// Per-pixel raw depth in meters, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Depth of the wall hit in column `x` (its center row).
    pub fn column_depth(&self, x: usize) -> f64 {
        self.at(x, self.height / 2)
    }
}

/// Nearest wall along the ray at `angle_deg` (absolute), with its color.
fn cast(plan: &FloorPlan, origin: Point, angle_deg: f64) -> Option<(f64, u8)> {
    let r = angle_deg.to_radians();
    let dir = Point::new(r.cos(), r.sin());
    plan.walls
        .iter()
        .filter_map(|w| ray_hit(origin, dir, w.a, w.b).map(|t| (t, w.color)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// One image column per ray angle; rows run top to bottom.
fn render_columns(
    plan: &FloorPlan,
    origin: Point,
    angles: &[f64],
    size: usize,
    cfg: &SensorConfig,
    kind: PanoramaKind,
) -> (Image, DepthMap) {
    let width = angles.len();
    let mut img = Image::new(width, size);
    let mut depth = DepthMap {
        width,
        height: size,
        data: vec![cfg.d_max; width * size],
    };
    let half = size as f64 / 2.0;
    for (x, &angle) in angles.iter().enumerate() {
        let hit = cast(plan, origin, angle);
        let (d, color) = hit.map_or((cfg.d_max, None), |(t, c)| (t.min(cfg.d_max), Some(c)));
        let slab = if d > 0.0 {
            (size as f64).min(size as f64 * plan.cell_size / d)
        } else {
            size as f64
        };
        let wall = color.map(|c| color_rgb(c).map(|v| v / (1.0 + d)));
        for y in 0..size {
            let offset = y as f64 + 0.5 - half;
            let on_wall = wall.is_some() && offset.abs() <= slab / 2.0;
            let pixel_depth = if on_wall { d } else { cfg.d_max };
            depth.data[y * width + x] = pixel_depth;
            let rgb = match kind {
                PanoramaKind::Rgb => match (on_wall, wall) {
                    (true, Some(w)) => w,
                    _ if offset < 0.0 => CEILING_RGB,
                    _ => FLOOR_RGB,
                },
                PanoramaKind::DepthPseudoRgb => {
                    colormap_apply(encode_depth(cfg.depth_encoding, pixel_depth, cfg.d_max))
                }
            };
            img.set_pixel(x, y, rgb);
        }
    }
    (img, depth)
}

/// Ray angles of a view centered on `center_deg`: the first column sits on
/// the left edge of the field of view, column `size / 2` on the center.
fn view_angles(center_deg: f64, fov: f64, size: usize) -> Vec<f64> {
    let step = fov / size as f64;
    (0..size).map(|i| center_deg + fov / 2.0 - i as f64 * step).collect()
}

/// Renderer bound to a sensor configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sensor {
    pub config: SensorConfig,
}

impl Sensor {
    pub fn new(config: SensorConfig) -> Self {
        Sensor { config }
    }

    pub fn view(&self, plan: &FloorPlan, pose: Pose) -> (Image, DepthMap) {
        let c = &self.config;
        let angles = view_angles(pose.heading_deg(), c.fov_deg, c.image_size);
        render_columns(plan, pose.position(), &angles, c.image_size, c, PanoramaKind::Rgb)
    }

    /// The monocular RGB observation.
    pub fn observe(&self, plan: &FloorPlan, pose: Pose) -> Image {
        self.view(plan, pose).0
    }

    pub fn face(&self, plan: &FloorPlan, pose: Pose, kind: PanoramaKind, face: usize) -> Image {
        let c = &self.config;
        let angles = view_angles(pose.heading_deg() + FACE_OFFSETS_DEG[face], c.fov_deg, c.image_size);
        render_columns(plan, pose.position(), &angles, c.image_size, c, kind).0
    }

    pub fn panorama(&self, plan: &FloorPlan, pose: Pose, kind: PanoramaKind) -> PanoramaSet {
        PanoramaSet {
            kind,
            faces: [0, 1, 2, 3].map(|f| Arc::new(self.face(plan, pose, kind, f))),
        }
    }

    /// 360-degree strip with the faces' angular step, starting directly
    /// behind the agent and sweeping clockwise, so the center column looks
    /// straight ahead.
    pub fn equirect(&self, plan: &FloorPlan, pose: Pose, kind: PanoramaKind) -> Image {
        let c = &self.config;
        let width = c.equirect_width();
        let step = 360.0 / width as f64;
        let angles: Vec<f64> = (0..width)
            .map(|j| pose.heading_deg() + 180.0 - j as f64 * step)
            .collect();
        render_columns(plan, pose.position(), &angles, c.image_size, c, kind).0
    }

    /// Every ray angle used by the four faces, normalized to `[0, 360)`.
    pub fn face_angles(&self, pose: Pose) -> Vec<f64> {
        let c = &self.config;
        FACE_OFFSETS_DEG
            .iter()
            .flat_map(|o| view_angles(pose.heading_deg() + o, c.fov_deg, c.image_size))
            .map(|a| a.rem_euclid(360.0))
            .collect()
    }

    pub fn equirect_angles(&self, pose: Pose) -> Vec<f64> {
        let width = self.config.equirect_width();
        let step = 360.0 / width as f64;
        (0..width)
            .map(|j| (pose.heading_deg() + 180.0 - j as f64 * step).rem_euclid(360.0))
            .collect()
    }
}

/// RGB view and raw depth with the default `d_max`.
pub fn render_view(plan: &FloorPlan, pose: Pose, fov: f64, size: usize) -> (Image, DepthMap) {
    Sensor::new(SensorConfig {
        fov_deg: fov,
        image_size: size,
        ..Default::default()
    })
    .view(plan, pose)
}

pub fn render_panorama(plan: &FloorPlan, pose: Pose, kind: PanoramaKind) -> PanoramaSet {
    Sensor::default().panorama(plan, pose, kind)
}

pub fn render_equirect_panorama(plan: &FloorPlan, pose: Pose, kind: PanoramaKind) -> Image {
    Sensor::default().equirect(plan, pose, kind)
}
