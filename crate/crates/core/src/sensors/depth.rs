use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub const COLORMAP_VERSION: u32 = 1;

static CLAMPED: AtomicU64 = AtomicU64::new(0);

/// Number of depth inputs clamped into `[0, d_max]` so far in this process.
pub fn clamp_warnings() -> u64 {
    CLAMPED.load(Ordering::Relaxed)
}

fn clamp(d: f64, d_max: f64) -> f64 {
    if !(0.0..=d_max).contains(&d) {
        CLAMPED.fetch_add(1, Ordering::Relaxed);
        if d.is_nan() {
            return d_max;
        }
    }
    d.clamp(0.0, d_max)
}

/// `ln(1 + d) / ln(1 + d_max)`.
pub fn encode_log_depth(d: f64, d_max: f64) -> f64 {
    let d = clamp(d, d_max);
    d.ln_1p() / d_max.ln_1p()
}

/// `d / d_max`.
pub fn encode_linear_depth(d: f64, d_max: f64) -> f64 {
    clamp(d, d_max) / d_max
}

/// Inverse depth `1 / (1 + d)`, rescaled and flipped so that it runs from 0
/// at `d = 0` to 1 at `d = d_max` like the other encodings.
pub fn encode_inverse_depth(d: f64, d_max: f64) -> f64 {
    let d = clamp(d, d_max);
    let far = 1.0 / (1.0 + d_max);
    1.0 - (1.0 / (1.0 + d) - far) / (1.0 - far)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DepthEncoding {
    Log,
    Linear,
    Inverse,
}

impl DepthEncoding {
    pub fn name(self) -> &'static str {
        match self {
            DepthEncoding::Log => "log",
            DepthEncoding::Linear => "linear",
            DepthEncoding::Inverse => "inverse",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [DepthEncoding::Log, DepthEncoding::Linear, DepthEncoding::Inverse]
            .into_iter()
            .find(|e| e.name() == s)
    }
}

pub fn encode_depth(enc: DepthEncoding, d: f64, d_max: f64) -> f64 {
    match enc {
        DepthEncoding::Log => encode_log_depth(d, d_max),
        DepthEncoding::Linear => encode_linear_depth(d, d_max),
        DepthEncoding::Inverse => encode_inverse_depth(d, d_max),
    }
}

const fn build_colormap() -> [[u8; 3]; 256] {
    let mut t = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 128 {
        t[i] = [0, (2 * i) as u8, (255 - 2 * i) as u8];
        i += 1;
    }
    while i < 256 {
        let r = 2 * (i - 128) + 1;
        t[i] = [r as u8, (255 - r) as u8, 0];
        i += 1;
    }
    t
}

/// Blue to green to red ramp. Entries are pairwise distinct.
pub const COLORMAP: [[u8; 3]; 256] = build_colormap();

/// Linear interpolation into [`COLORMAP`]; `v` is clamped to `[0, 1]`.
pub fn colormap_apply(v: f64) -> [f64; 3] {
    let x = v.clamp(0.0, 1.0) * 255.0;
    let i = (x.floor() as usize).min(254);
    let f = x - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [0, 1, 2].map(|c| ((1.0 - f) * a[c] as f64 + f * b[c] as f64) / 255.0)
}

/// Nearest table entry to `rgb`, as a value in `[0, 1]`.
pub fn colormap_invert(rgb: [f64; 3]) -> f64 {
    let (best, _) = COLORMAP
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let d: f64 = (0..3).map(|c| (e[c] as f64 / 255.0 - rgb[c]).powi(2)).sum();
            (i, d)
        })
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    best as f64 / 255.0
}
