//! Closed-loop rollouts on unseen plans, the navigation metric suite, and
//! ablation grids.

mod ablation;

pub use ablation::{
    ablation_run, directional_grid, paper_grid, parse_ablation_csv, render_table, AblationRow, AblationTable,
    GridRow, SeedResult, Summary,
};

use serde::{Deserialize, Serialize};

use crate::episodes::{action_context, make_episodes, Episode, Policy, PolicyInput, Renderer, SampleKind};
use crate::error::{Error, Result};
use crate::model::{Model, ModelPolicy};
use crate::training::EVAL_SEED_BASE;
use crate::world::{distance_field, generate_floorplan, step_action, Action, FloorPlan, Pose, WorldConfig};

pub const SUCCESS_RADIUS: f64 = 1.0;
pub const MAX_EVAL_STEPS: usize = 100;

/// Unseen-plan pool and rollout settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub world: WorldConfig,
    pub plan_seed_base: u64,
    pub plans: usize,
    pub episodes_per_plan: usize,
    pub episode_seed: u64,
    pub success_radius: f64,
    pub max_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            world: WorldConfig::grid(2, 2),
            plan_seed_base: EVAL_SEED_BASE,
            plans: 25,
            episodes_per_plan: 2,
            episode_seed: 1,
            success_radius: SUCCESS_RADIUS,
            max_steps: MAX_EVAL_STEPS,
        }
    }
}

impl EvalConfig {
    pub fn to_kv(&self) -> String {
        let w = &self.world;
        format!(
            "eval.rows={}\neval.cols={}\neval.plan_seed_base={}\neval.plans={}\neval.episodes_per_plan={}\n\
             eval.episode_seed={}\neval.success_radius={}\neval.max_steps={}\n",
            w.rows,
            w.cols,
            self.plan_seed_base,
            self.plans,
            self.episodes_per_plan,
            self.episode_seed,
            self.success_radius,
            self.max_steps
        )
    }

    /// Applies one `eval.*` setting; returns false for keys it does not own.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Parse(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "eval.rows" => self.world.rows = num(key, v)?,
            "eval.cols" => self.world.cols = num(key, v)?,
            "eval.plan_seed_base" => self.plan_seed_base = num(key, v)?,
            "eval.plans" => self.plans = num(key, v)?,
            "eval.episodes_per_plan" => self.episodes_per_plan = num(key, v)?,
            "eval.episode_seed" => self.episode_seed = num(key, v)?,
            "eval.success_radius" => self.success_radius = num(key, v)?,
            "eval.max_steps" => self.max_steps = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Fails if any training seed is in the evaluation pool or any evaluation
/// seed is below it.
pub fn check_seed_pools(train: &[u64], eval: &[u64]) -> Result<()> {
    if let Some(&s) = train.iter().find(|&&s| s >= EVAL_SEED_BASE) {
        return Err(Error::SeedPoolOverlap(s));
    }
    if let Some(&s) = eval.iter().find(|&&s| s < EVAL_SEED_BASE) {
        return Err(Error::SeedPoolOverlap(s));
    }
    Ok(())
}

/// Evaluation plans and episodes.
pub fn eval_episodes(cfg: &EvalConfig) -> Result<(Vec<FloorPlan>, Vec<Episode>)> {
    let plans = (0..cfg.plans as u64)
        .map(|i| generate_floorplan(cfg.plan_seed_base + i, cfg.world))
        .collect::<Result<Vec<_>>>()?;
    check_seed_pools(&[], &plans.iter().map(|p| p.seed).collect::<Vec<_>>())?;
    let episodes = make_episodes(&plans, cfg.episodes_per_plan, cfg.episode_seed)?;
    Ok((plans, episodes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub episode: usize,
    pub plan_seed: u64,
    /// Pose before each executed action, then the final pose.
    pub poses: Vec<Pose>,
    pub actions: Vec<Action>,
    /// Geodesic distance to the goal at each pose.
    pub distances: Vec<f64>,
    pub stop_called: bool,
    pub steps_used: usize,
    pub final_distance: f64,
    /// Shortest-path length of the episode.
    pub geodesic_length: f64,
    /// Non-action tokens the policy emitted (replaced by Stop).
    pub non_action: usize,
}

impl RolloutLog {
    /// Executed translation: sum of distances between consecutive positions.
    pub fn path_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| w[0].position().dist(w[1].position()))
            .sum()
    }

    pub fn is_consistent(&self) -> bool {
        self.poses.len() == self.actions.len() + 1
            && self.distances.len() == self.poses.len()
            && self.steps_used == self.actions.len()
            && self.distances.last() == Some(&self.final_distance)
            && self.stop_called == (self.actions.last() == Some(&Action::Stop))
    }
}

/// Rolls `policy` out on `episode`: observe, build the action context from
/// the frames seen so far, execute only the first of the returned actions,
/// and repeat until Stop or `max_steps`.
pub fn run_episode(
    policy: &mut dyn Policy,
    plan: &FloorPlan,
    episode: &Episode,
    renderer: &Renderer,
    n: usize,
    k: usize,
    max_steps: usize,
) -> Result<RolloutLog> {
    let field = distance_field(plan, episode.goal)?;
    let mut pose = episode.start;
    let mut log = RolloutLog {
        episode: episode.id,
        plan_seed: plan.seed,
        poses: vec![pose],
        actions: Vec::new(),
        distances: vec![field.at(plan, pose.position())?],
        stop_called: false,
        steps_used: 0,
        final_distance: 0.0,
        geodesic_length: episode.geodesic_length,
        non_action: 0,
    };
    let mut frames = Vec::new();
    for t in 0..max_steps {
        frames.push(renderer.observe(plan, pose));
        let (prompt, history, current) = action_context(&frames, t, n, SampleKind::Action, &episode.instruction.tokens);
        let input = PolicyInput {
            plan,
            pose,
            goal: episode.goal,
            step: t,
            prompt_tokens: &prompt,
            history: &history,
            current: &current,
        };
        let a = policy.act(&input, k)?.first().copied().unwrap_or(Action::Stop);
        log.actions.push(a);
        pose = step_action(plan, pose, a).pose;
        log.poses.push(pose);
        log.distances.push(field.at(plan, pose.position())?);
        if a == Action::Stop {
            log.stop_called = true;
            break;
        }
    }
    log.steps_used = log.actions.len();
    log.final_distance = *log.distances.last().expect("start distance");
    Ok(log)
}

/// Runs a trained model greedily over `episodes`.
pub fn evaluate_model(
    model: &Model,
    plans: &[FloorPlan],
    episodes: &[Episode],
    renderer: &Renderer,
    max_steps: usize,
) -> Result<Vec<RolloutLog>> {
    let mut policy = ModelPolicy::new(model);
    let mut logs = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let plan = plans
            .iter()
            .find(|p| p.seed == ep.plan_seed)
            .ok_or_else(|| Error::Parse(format!("no plan {} for episode {}", ep.plan_seed, ep.id)))?;
        policy.reset();
        let before = policy.non_action;
        let mut log = run_episode(
            &mut policy,
            plan,
            ep,
            renderer,
            model.config.n_history,
            model.config.k_actions,
            max_steps,
        )?;
        log.non_action = policy.non_action - before;
        logs.push(log);
    }
    Ok(logs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ne: f64,
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
    pub episodes: usize,
}

impl MetricsReport {
    pub fn is_ordered(&self) -> bool {
        self.spl <= self.sr && self.sr <= self.osr
    }
}

/// NE, SR, OSR and SPL over `logs`, folded in episode-id order.
pub fn compute_metrics(logs: &[RolloutLog], success_radius: f64) -> Result<MetricsReport> {
    if logs.is_empty() {
        return Err(Error::EmptyLogs);
    }
    let mut order: Vec<&RolloutLog> = logs.iter().collect();
    order.sort_by_key(|l| l.episode);
    let (mut ne, mut sr, mut osr, mut spl) = (0.0, 0.0, 0.0, 0.0);
    for l in &order {
        ne += l.final_distance;
        let success = l.stop_called && l.final_distance <= success_radius;
        if success {
            sr += 1.0;
            let p = l.path_length();
            spl += l.geodesic_length / p.max(l.geodesic_length);
        }
        if l.distances.iter().any(|&d| d <= success_radius) {
            osr += 1.0;
        }
    }
    let n = order.len() as f64;
    Ok(MetricsReport {
        ne: ne / n,
        sr: sr / n,
        osr: osr / n,
        spl: spl / n,
        episodes: order.len(),
    })
}

/// Replays a fixed action list, then stops.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    actions: Vec<Action>,
    next: usize,
}

impl ReplayPolicy {
    pub fn new(actions: Vec<Action>) -> Self {
        ReplayPolicy { actions, next: 0 }
    }
}

impl Policy for ReplayPolicy {
    fn act(&mut self, _input: &PolicyInput, k: usize) -> Result<Vec<Action>> {
        let out = (self.next..self.next + k)
            .map(|i| self.actions.get(i).copied().unwrap_or(Action::Stop))
            .collect();
        self.next += 1;
        Ok(out)
    }
}
