//! Column raycast rendering of monocular views and four-face panoramas, with
//! depth encodings and the pseudo-RGB colormap.

mod cache;
mod depth;
mod ppm;
mod raycast;

pub use cache::{RenderCache, RenderKey, RenderTarget};
pub use depth::{
    clamp_warnings, colormap_apply, colormap_invert, encode_depth, encode_inverse_depth,
    encode_linear_depth, encode_log_depth, DepthEncoding, COLORMAP, COLORMAP_VERSION,
};
pub use ppm::{read_ppm, write_ppm, write_panorama};
pub use raycast::{render_equirect_panorama, render_panorama, render_view, DepthMap, Sensor};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, channels interleaved. Pixel values read as
/// `byte / 255` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Parse(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let k = 3 * (y * self.width + x);
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let k = 3 * (y * self.width + x);
        for c in 0..3 {
            self.data[k + c] = to_byte(rgb[c]);
        }
    }

    pub fn value(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[3 * (y * self.width + x) + c] as f64 / 255.0
    }

    /// All pixel values in `[0, 1]`, row-major interleaved.
    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn column(&self, x: usize) -> Vec<[u8; 3]> {
        (0..self.height).map(|y| self.pixel(x, y)).collect()
    }
}

pub(crate) fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PanoramaKind {
    Rgb,
    DepthPseudoRgb,
}

impl PanoramaKind {
    pub fn name(self) -> &'static str {
        match self {
            PanoramaKind::Rgb => "rgb",
            PanoramaKind::DepthPseudoRgb => "depth",
        }
    }
}

/// Panorama faces in storage order.
pub const FACE_NAMES: [&str; 4] = ["left", "front", "right", "back"];
/// Face centers relative to the agent heading, degrees.
pub const FACE_OFFSETS_DEG: [f64; 4] = [90.0, 0.0, -90.0, 180.0];

#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaSet {
    pub kind: PanoramaKind,
    pub faces: [std::sync::Arc<Image>; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub fov_deg: f64,
    pub image_size: usize,
    pub d_max: f64,
    pub colormap_version: u32,
    pub depth_encoding: DepthEncoding,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            fov_deg: 90.0,
            image_size: 64,
            d_max: 10.0,
            colormap_version: COLORMAP_VERSION,
            depth_encoding: DepthEncoding::Log,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let faces = 360.0 / self.fov_deg;
        if !(self.fov_deg > 0.0 && faces.fract() == 0.0) {
            return Err(Error::InvalidConfig(format!("fov {} does not divide 360", self.fov_deg)));
        }
        if !(self.d_max > 0.0) {
            return Err(Error::InvalidConfig(format!("d_max {} must be positive", self.d_max)));
        }
        if self.image_size == 0 {
            return Err(Error::InvalidConfig("image_size must be positive".into()));
        }
        if self.colormap_version != COLORMAP_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unknown colormap version {}",
                self.colormap_version
            )));
        }
        Ok(())
    }

    /// Width of the 360-degree strip with the same angular step as the faces.
    pub fn equirect_width(&self) -> usize {
        ((360.0 / self.fov_deg) as usize) * self.image_size
    }

    pub fn hash(&self) -> u64 {
        crate::hashing::hash_u64(format!("{self:?}").as_bytes())
    }
}
