use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use super::ppm::write_ppm;
use super::{Image, PanoramaKind, PanoramaSet, Sensor};
use crate::error::Result;
use crate::hashing::short_hash;
use crate::world::{FloorPlan, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RenderTarget {
    Observation,
    Face(PanoramaKind, u8),
    Equirect(PanoramaKind),
}

/// Content address of a render: plan, pose, sensor configuration and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RenderKey {
    pub plan: u64,
    pub pose: Pose,
    pub sensor: u64,
    pub target: RenderTarget,
}

impl RenderKey {
    pub fn name(&self) -> String {
        short_hash(format!("{self:?}").as_bytes())
    }
}

/// Shared memo of rendered images. Many readers, exclusive inserts; a hit
/// returns the very same image that was first rendered.
#[derive(Debug, Default)]
pub struct RenderCache {
    map: RwLock<HashMap<RenderKey, Arc<Image>>>,
}

impl RenderCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("render cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_render(&self, key: RenderKey, render: impl FnOnce() -> Image) -> Arc<Image> {
        if let Some(img) = self.map.read().expect("render cache poisoned").get(&key) {
            return img.clone();
        }
        let img = Arc::new(render());
        self.map
            .write()
            .expect("render cache poisoned")
            .entry(key)
            .or_insert(img)
            .clone()
    }

    pub fn observation(&self, sensor: &Sensor, plan: &FloorPlan, pose: Pose) -> Arc<Image> {
        let key = RenderKey {
            plan: plan.fingerprint(),
            pose,
            sensor: sensor.config.hash(),
            target: RenderTarget::Observation,
        };
        self.get_or_render(key, || sensor.observe(plan, pose))
    }

    pub fn panorama(&self, sensor: &Sensor, plan: &FloorPlan, pose: Pose, kind: PanoramaKind) -> PanoramaSet {
        let faces = [0u8, 1, 2, 3].map(|f| {
            let key = RenderKey {
                plan: plan.fingerprint(),
                pose,
                sensor: sensor.config.hash(),
                target: RenderTarget::Face(kind, f),
            };
            self.get_or_render(key, || sensor.face(plan, pose, kind, f as usize))
        });
        PanoramaSet { kind, faces }
    }

    /// Writes every cached image as `<key-hash>.ppm` under `dir`.
    pub fn persist(&self, dir: &Path) -> Result<usize> {
        fs::create_dir_all(dir)?;
        let map = self.map.read().expect("render cache poisoned");
        let mut entries: Vec<_> = map.iter().map(|(k, v)| (k.name(), v.clone())).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, img) in &entries {
            fs::write(dir.join(format!("{name}.ppm")), write_ppm(img))?;
        }
        Ok(entries.len())
    }
}
