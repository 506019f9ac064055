//! Episodes, templated instructions, and the training samples built from
//! oracle rollouts: action prediction, instruction reasoning and the four
//! latent panoramic dreaming kinds, plus DAgger relabeling.

mod dagger;
mod instruction;
mod prompts;
mod vocab;

pub use dagger::{dagger_collect, oracle_targets, DaggerOutput, OraclePolicy, Policy, PolicyInput, RandomPolicy, MAX_ROLLOUT_STEPS};
pub use instruction::{generate_instruction, Instruction, TURN_AROUND_DEG, TURN_CLAUSE_DEG};
pub use prompts::{
    check_placeholders, count_placeholders, expected_placeholders, fill_prompt, prompt_for, prompt_id,
    template_text, Piece,
};
pub use vocab::{vocab, Vocab, DREAM_SLOTS, EOS_TOKEN, IMAGE_TOKEN};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensors::{Image, PanoramaKind, PanoramaSet, RenderCache, Sensor, SensorConfig};
use crate::world::{
    geodesic_distance, oracle_rollout, shortest_path, step_action, Action, FloorPlan, Point, Pose,
    AGENT_RADIUS, STOP_RADIUS,
};

pub const MIN_GEODESIC: f64 = 3.0;
pub const MAX_GEODESIC: f64 = 15.0;
pub const MAX_EPISODE_ATTEMPTS: usize = 100;
pub const HISTORY_FRAMES: usize = 8;
pub const FUTURE_ACTIONS: usize = 3;
/// Cap on closed-loop oracle actions per episode.
pub const MAX_ORACLE_STEPS: usize = 200;

/// A start pose, a goal and the closed-loop oracle's actions between them.
/// `oracle_waypoints` is the smoothed path planned from the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: usize,
    pub plan_seed: u64,
    pub start: Pose,
    pub goal: Point,
    pub oracle_waypoints: Vec<Point>,
    pub oracle_actions: Vec<Action>,
    pub instruction: Instruction,
    pub geodesic_length: f64,
}

impl Episode {
    /// Pose before each oracle action, plus the final pose. Stop leaves the
    /// pose unchanged, so the last two entries coincide.
    pub fn poses(&self, plan: &FloorPlan) -> Vec<Pose> {
        let mut pose = self.start;
        let mut out = vec![pose];
        for &a in &self.oracle_actions {
            pose = step_action(plan, pose, a).pose;
            out.push(pose);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.oracle_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oracle_actions.is_empty()
    }
}

fn sample_point(plan: &FloorPlan, room: usize, rng: &mut impl Rng) -> Point {
    let r = &plan.rooms[room];
    let m = AGENT_RADIUS + 0.1;
    Point::new(
        rng.random_range(r.min.x + m..r.max.x - m),
        rng.random_range(r.min.y + m..r.max.y - m),
    )
}

/// Samples a start pose and goal in different rooms with a geodesic length
/// in `[MIN_GEODESIC, MAX_GEODESIC]` and compiles the oracle trajectory.
pub fn make_episode(plan: &FloorPlan, rng: &mut impl Rng) -> Result<Episode> {
    if plan.rooms.len() < 2 {
        return Err(Error::RetryExhausted(0));
    }
    for _ in 0..MAX_EPISODE_ATTEMPTS {
        let a = rng.random_range(0..plan.rooms.len());
        let mut b = rng.random_range(0..plan.rooms.len() - 1);
        if b >= a {
            b += 1;
        }
        let p = sample_point(plan, a, rng);
        let goal = sample_point(plan, b, rng);
        let heading = 15.0 * rng.random_range(0..24) as f64;
        if !plan.is_free(p) || !plan.is_free(goal) {
            continue;
        }
        let Ok(geo) = geodesic_distance(plan, p, goal) else {
            continue;
        };
        if !(MIN_GEODESIC..=MAX_GEODESIC).contains(&geo) {
            continue;
        }
        let start = Pose::new(p.x, p.y, heading);
        let Ok(waypoints) = shortest_path(plan, start, goal) else {
            continue;
        };
        let Ok(actions) = oracle_rollout(plan, start, goal, MAX_ORACLE_STEPS) else {
            continue;
        };
        let end = actions
            .iter()
            .fold(start, |pose, &act| step_action(plan, pose, act).pose);
        if end.position().dist(goal) > STOP_RADIUS {
            continue;
        }
        let instruction = generate_instruction(plan, start, &waypoints);
        return Ok(Episode {
            id: 0,
            plan_seed: plan.seed,
            start,
            goal,
            oracle_waypoints: waypoints,
            oracle_actions: actions,
            instruction,
            geodesic_length: geo,
        });
    }
    Err(Error::RetryExhausted(MAX_EPISODE_ATTEMPTS))
}

/// `per_plan` episodes on every plan, ids assigned in order. Each plan draws
/// from its own stream so the set is stable under reordering of plans.
pub fn make_episodes(plans: &[FloorPlan], per_plan: usize, seed: u64) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for plan in plans {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ plan.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in 0..per_plan {
            let mut ep = make_episode(plan, &mut rng)?;
            ep.id = out.len();
            out.push(ep);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SampleKind {
    Action,
    InstructionReasoning,
    Pi,
    Pd,
    Fpi,
    Fpd,
}

impl SampleKind {
    pub const ALL: [SampleKind; 6] = [
        SampleKind::Action,
        SampleKind::InstructionReasoning,
        SampleKind::Pi,
        SampleKind::Pd,
        SampleKind::Fpi,
        SampleKind::Fpd,
    ];
    pub const LPD: [SampleKind; 4] = [SampleKind::Pi, SampleKind::Pd, SampleKind::Fpi, SampleKind::Fpd];

    pub fn name(self) -> &'static str {
        match self {
            SampleKind::Action => "action",
            SampleKind::InstructionReasoning => "ir",
            SampleKind::Pi => "pi",
            SampleKind::Pd => "pd",
            SampleKind::Fpi => "fpi",
            SampleKind::Fpd => "fpd",
        }
    }

    pub fn from_name(s: &str) -> Option<SampleKind> {
        SampleKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_lpd(self) -> bool {
        SampleKind::LPD.contains(&self)
    }

    pub fn is_future(self) -> bool {
        matches!(self, SampleKind::Fpi | SampleKind::Fpd)
    }

    pub fn panorama_kind(self) -> Option<PanoramaKind> {
        match self {
            SampleKind::Pi | SampleKind::Fpi => Some(PanoramaKind::Rgb),
            SampleKind::Pd | SampleKind::Fpd => Some(PanoramaKind::DepthPseudoRgb),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Actions(Vec<Action>),
    Instruction(Vec<usize>),
    Panorama(PanoramaSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub kind: SampleKind,
    pub plan_seed: u64,
    pub episode: usize,
    pub step: usize,
    /// Agent pose the context was observed from.
    pub pose: Pose,
    pub prompt_tokens: Vec<usize>,
    pub history: Vec<Arc<Image>>,
    /// Absent for instruction reasoning, which sees history frames only.
    pub current: Option<Arc<Image>>,
    pub target: Target,
}

impl StepSample {
    /// Images in placeholder order.
    pub fn images(&self) -> impl Iterator<Item = &Arc<Image>> {
        self.history.iter().chain(self.current.iter())
    }
}

/// Sensor plus the shared content-addressed render cache.
#[derive(Debug, Default)]
pub struct Renderer {
    pub sensor: Sensor,
    pub cache: RenderCache,
}

impl Renderer {
    pub fn new(config: SensorConfig) -> Self {
        Renderer {
            sensor: Sensor::new(config),
            cache: RenderCache::new(),
        }
    }

    pub fn observe(&self, plan: &FloorPlan, pose: Pose) -> Arc<Image> {
        self.cache.observation(&self.sensor, plan, pose)
    }

    pub fn panorama(&self, plan: &FloorPlan, pose: Pose, kind: PanoramaKind) -> PanoramaSet {
        self.cache.panorama(&self.sensor, plan, pose, kind)
    }
}

/// Indices into the frames `o_0..o_{t-1}` used as history at step `t`:
/// rounded uniform positions, deduplicated, front-padded with the first.
/// At `t = 0` only `o_0` exists and fills every slot.
pub fn history_indices(t: usize, n: usize) -> Vec<usize> {
    assert!(n >= 1);
    if t == 0 {
        return vec![0; n];
    }
    let last = t - 1;
    let mut idx: Vec<usize> = if n == 1 {
        vec![last]
    } else {
        (0..n)
            .map(|i| ((i * last) as f64 / (n - 1) as f64).round() as usize)
            .collect()
    };
    idx.dedup();
    let mut out = vec![idx[0]; n - idx.len()];
    out.extend(idx);
    out
}

/// Frame indices for instruction reasoning over a rollout of `len` frames.
pub fn reasoning_indices(len: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| i * len / n).collect()
}

/// Observation-side context for an action-style sample at step `t` of a
/// rollout whose frames so far are `frames[..=t]`.
pub fn action_context(
    frames: &[Arc<Image>],
    t: usize,
    n: usize,
    kind: SampleKind,
    instruction: &[usize],
) -> (Vec<usize>, Vec<Arc<Image>>, Arc<Image>) {
    let history = history_indices(t, n).into_iter().map(|i| frames[i].clone()).collect();
    (fill_prompt(kind, n, instruction), history, frames[t].clone())
}

fn padded(actions: &[Action], t: usize, k: usize) -> Vec<Action> {
    (t..t + k).map(|i| actions.get(i).copied().unwrap_or(Action::Stop)).collect()
}

pub fn observation_frames(plan: &FloorPlan, episode: &Episode, renderer: &Renderer) -> Vec<Arc<Image>> {
    let poses = episode.poses(plan);
    poses[..episode.len()].iter().map(|&p| renderer.observe(plan, p)).collect()
}

/// One action sample per oracle step, targets padded with Stop.
pub fn build_action_samples(
    plan: &FloorPlan,
    episode: &Episode,
    renderer: &Renderer,
    n: usize,
    k: usize,
) -> Vec<StepSample> {
    let frames = observation_frames(plan, episode, renderer);
    let poses = episode.poses(plan);
    (0..episode.len())
        .map(|t| {
            let (prompt, history, current) =
                action_context(&frames, t, n, SampleKind::Action, &episode.instruction.tokens);
            StepSample {
                kind: SampleKind::Action,
                plan_seed: episode.plan_seed,
                episode: episode.id,
                step: t,
                pose: poses[t],
                prompt_tokens: prompt,
                history,
                current: Some(current),
                target: Target::Actions(padded(&episode.oracle_actions, t, k)),
            }
        })
        .collect()
}

/// One instruction-reasoning sample spanning the whole rollout.
pub fn build_instruction_sample(plan: &FloorPlan, episode: &Episode, renderer: &Renderer, n: usize) -> StepSample {
    let frames = observation_frames(plan, episode, renderer);
    let history = reasoning_indices(frames.len(), n)
        .into_iter()
        .map(|i| frames[i].clone())
        .collect();
    StepSample {
        kind: SampleKind::InstructionReasoning,
        plan_seed: episode.plan_seed,
        episode: episode.id,
        step: 0,
        pose: episode.start,
        prompt_tokens: fill_prompt(SampleKind::InstructionReasoning, n, &[]),
        history,
        current: None,
        target: Target::Instruction(episode.instruction.tokens.clone()),
    }
}

/// Samples of the requested LPD `kinds` for every step, sharing the action
/// samples' visual context. Future targets are rendered at the pose after
/// the step's oracle action.
pub fn build_lpd_samples(
    plan: &FloorPlan,
    episode: &Episode,
    renderer: &Renderer,
    n: usize,
    kinds: &[SampleKind],
) -> Vec<StepSample> {
    let frames = observation_frames(plan, episode, renderer);
    let poses = episode.poses(plan);
    let mut out = Vec::new();
    for t in 0..episode.len() {
        for &kind in kinds {
            let Some(pano) = kind.panorama_kind() else {
                continue;
            };
            let (prompt, history, current) = action_context(&frames, t, n, kind, &episode.instruction.tokens);
            let at = if kind.is_future() { poses[t + 1] } else { poses[t] };
            out.push(StepSample {
                kind,
                plan_seed: episode.plan_seed,
                episode: episode.id,
                step: t,
                pose: poses[t],
                prompt_tokens: prompt,
                history,
                current: Some(current),
                target: Target::Panorama(renderer.panorama(plan, at, pano)),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub kind: String,
    pub plan_seed: u64,
    pub episode: usize,
    pub step: usize,
    pub prompt_id: String,
}

/// One JSON line per sample. Images live in the render cache, not here.
pub fn write_manifest(samples: &[StepSample]) -> String {
    samples
        .iter()
        .map(|s| {
            let rec = ManifestRecord {
                kind: s.kind.name().to_string(),
                plan_seed: s.plan_seed,
                episode: s.episode,
                step: s.step,
                prompt_id: prompt_id(s.kind),
            };
            serde_json::to_string(&rec).expect("manifest record serializes") + "\n"
        })
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(e.to_string())))
        .collect()
}
