use crate::error::{Error, Result};
use crate::hashing::short_hash;
use crate::model::ModelConfig;
use crate::sensors::{DepthEncoding, SensorConfig};
use crate::world::WorldConfig;

/// Which auxiliary sample kinds are assembled into the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskFlags {
    pub use_ir: bool,
    pub use_pi: bool,
    pub use_pd: bool,
    pub use_fpi: bool,
    pub use_fpd: bool,
}

impl TaskFlags {
    pub const NONE: TaskFlags = TaskFlags {
        use_ir: false,
        use_pi: false,
        use_pd: false,
        use_fpi: false,
        use_fpd: false,
    };
    pub const ALL: TaskFlags = TaskFlags {
        use_ir: true,
        use_pi: true,
        use_pd: true,
        use_fpi: true,
        use_fpd: true,
    };

    pub fn ir_only() -> Self {
        TaskFlags {
            use_ir: true,
            ..TaskFlags::NONE
        }
    }

    pub fn any_lpd(&self) -> bool {
        self.use_pi || self.use_pd || self.use_fpi || self.use_fpd
    }

    /// Short label such as `ir+pi+fpd`, or `base`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.use_ir, "ir"),
            (self.use_pi, "pi"),
            (self.use_pd, "pd"),
            (self.use_fpi, "fpi"),
            (self.use_fpd, "fpd"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            "base".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reported by the paper for its pretrained backbone.
    /// Recorded, never used.
    pub paper_lr: f64,
    pub warmup_ratio: f64,
    pub lambda: f64,
    pub seed: u64,
    pub flags: TaskFlags,
    pub dagger_fraction: f64,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            lr: 3e-4,
            paper_lr: 1e-5,
            warmup_ratio: 0.03,
            lambda: 1.0,
            seed: 0,
            flags: TaskFlags::ALL,
            dagger_fraction: 0.35,
            max_steps: None,
        }
    }
}

/// Where training and evaluation episodes come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub world: WorldConfig,
    /// Training plans use seeds `plan_seed_base..plan_seed_base + plans`.
    pub plan_seed_base: u64,
    pub plans: usize,
    pub episodes_per_plan: usize,
    pub episode_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            world: WorldConfig::grid(2, 2),
            plan_seed_base: 0,
            plans: 50,
            episodes_per_plan: 4,
            episode_seed: 0,
        }
    }
}

/// Everything a run depends on, serializable as `key=value` lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub sensor: SensorConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        RunConfig {
            train: TrainConfig::default(),
            model,
            sensor: SensorConfig {
                image_size: model.image_size,
                ..Default::default()
            },
            data: DataConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Parse(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

impl RunConfig {
    /// Toy-scale defaults: small model, matching sensor resolution.
    pub fn toy() -> Self {
        let model = ModelConfig::toy();
        RunConfig {
            model,
            sensor: SensorConfig {
                image_size: model.image_size,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sensor.validate()?;
        self.data.world.validate()?;
        if self.sensor.image_size != self.model.image_size {
            return Err(Error::InvalidConfig(format!(
                "sensor image size {} differs from model image size {}",
                self.sensor.image_size, self.model.image_size
            )));
        }
        let t = &self.train;
        if t.batch_size == 0 || !(t.lr > 0.0) || !(0.0..1.0).contains(&t.dagger_fraction) {
            return Err(Error::InvalidConfig("batch_size, lr or dagger_fraction out of range".into()));
        }
        if !(0.0..=1.0).contains(&t.warmup_ratio) || !(t.lambda >= 0.0) {
            return Err(Error::InvalidConfig("warmup_ratio or lambda out of range".into()));
        }
        if self.data.plans == 0 || self.data.episodes_per_plan == 0 {
            return Err(Error::InvalidConfig("plans and episodes_per_plan must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let t = &self.train;
        let f = &t.flags;
        let d = &self.data;
        let w = &d.world;
        let s = &self.sensor;
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        put("train.epochs", t.epochs.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.lr", t.lr.to_string());
        put("train.paper_lr", t.paper_lr.to_string());
        put("train.warmup_ratio", t.warmup_ratio.to_string());
        put("train.lambda", t.lambda.to_string());
        put("train.seed", t.seed.to_string());
        put("train.use_ir", f.use_ir.to_string());
        put("train.use_pi", f.use_pi.to_string());
        put("train.use_pd", f.use_pd.to_string());
        put("train.use_fpi", f.use_fpi.to_string());
        put("train.use_fpd", f.use_fpd.to_string());
        put("train.dagger_fraction", t.dagger_fraction.to_string());
        put("train.max_steps", t.max_steps.map_or("none".into(), |m| m.to_string()));
        put("data.rows", w.rows.to_string());
        put("data.cols", w.cols.to_string());
        put("data.room_min", w.room_min.to_string());
        put("data.room_max", w.room_max.to_string());
        put("data.door_width", w.door_width.to_string());
        put("data.extra_door_prob", w.extra_door_prob.to_string());
        put("data.cell_size", w.cell_size.to_string());
        put("data.plan_seed_base", d.plan_seed_base.to_string());
        put("data.plans", d.plans.to_string());
        put("data.episodes_per_plan", d.episodes_per_plan.to_string());
        put("data.episode_seed", d.episode_seed.to_string());
        put("sensor.fov_deg", s.fov_deg.to_string());
        put("sensor.image_size", s.image_size.to_string());
        put("sensor.d_max", s.d_max.to_string());
        put("sensor.colormap_version", s.colormap_version.to_string());
        put("sensor.depth_encoding", s.depth_encoding.name().to_string());
        out + &self.model.to_kv()
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if self.model.set(key, v)? {
            return Ok(());
        }
        let t = &mut self.train;
        let w = &mut self.data.world;
        match key {
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.paper_lr" => t.paper_lr = parse(key, v)?,
            "train.warmup_ratio" => t.warmup_ratio = parse(key, v)?,
            "train.lambda" => t.lambda = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.use_ir" => t.flags.use_ir = parse_bool(key, v)?,
            "train.use_pi" => t.flags.use_pi = parse_bool(key, v)?,
            "train.use_pd" => t.flags.use_pd = parse_bool(key, v)?,
            "train.use_fpi" => t.flags.use_fpi = parse_bool(key, v)?,
            "train.use_fpd" => t.flags.use_fpd = parse_bool(key, v)?,
            "train.dagger_fraction" => t.dagger_fraction = parse(key, v)?,
            "train.max_steps" => t.max_steps = if v == "none" { None } else { Some(parse(key, v)?) },
            "data.rows" => w.rows = parse(key, v)?,
            "data.cols" => w.cols = parse(key, v)?,
            "data.room_min" => w.room_min = parse(key, v)?,
            "data.room_max" => w.room_max = parse(key, v)?,
            "data.door_width" => w.door_width = parse(key, v)?,
            "data.extra_door_prob" => w.extra_door_prob = parse(key, v)?,
            "data.cell_size" => w.cell_size = parse(key, v)?,
            "data.plan_seed_base" => self.data.plan_seed_base = parse(key, v)?,
            "data.plans" => self.data.plans = parse(key, v)?,
            "data.episodes_per_plan" => self.data.episodes_per_plan = parse(key, v)?,
            "data.episode_seed" => self.data.episode_seed = parse(key, v)?,
            "sensor.fov_deg" => self.sensor.fov_deg = parse(key, v)?,
            "sensor.image_size" => self.sensor.image_size = parse(key, v)?,
            "sensor.d_max" => self.sensor.d_max = parse(key, v)?,
            "sensor.colormap_version" => self.sensor.colormap_version = parse(key, v)?,
            "sensor.depth_encoding" => {
                self.sensor.depth_encoding = DepthEncoding::from_name(v)
                    .ok_or_else(|| Error::Parse(format!("{key}: unknown encoding {v:?}")))?
            }
            _ => return Err(Error::Parse(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults of `self`. Blank lines and
    /// `#` comments are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.apply_kv(text)?;
        Ok(c)
    }

    pub fn hash(&self) -> String {
        short_hash(self.to_kv().as_bytes())
    }
}
