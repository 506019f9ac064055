use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{action_context, Episode, Renderer, SampleKind, StepSample, Target};
use crate::error::Result;
use crate::sensors::Image;
use crate::world::{oracle_action, step_action, Action, FloorPlan, Point, Pose};

pub const MAX_ROLLOUT_STEPS: usize = 100;

/// What a policy sees at one step. `plan`, `pose` and `goal` are privileged
/// state, available to scripted policies only.
pub struct PolicyInput<'a> {
    pub plan: &'a FloorPlan,
    pub pose: Pose,
    pub goal: Point,
    pub step: usize,
    pub prompt_tokens: &'a [usize],
    pub history: &'a [Arc<Image>],
    pub current: &'a Arc<Image>,
}

pub trait Policy {
    /// The next `k` actions; callers execute only the first.
    fn act(&mut self, input: &PolicyInput, k: usize) -> Result<Vec<Action>>;
}

/// The closed-loop oracle's next `k` actions from `pose`, padded with Stop.
pub fn oracle_targets(plan: &FloorPlan, pose: Pose, goal: Point, k: usize) -> Result<Vec<Action>> {
    let mut pose = pose;
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let a = oracle_action(plan, pose, goal)?;
        out.push(a);
        if a == Action::Stop {
            break;
        }
        pose = step_action(plan, pose, a).pose;
    }
    out.resize(k, Action::Stop);
    Ok(out)
}

/// Follows the oracle from the current pose.
#[derive(Debug, Default, Clone, Copy)]
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn act(&mut self, input: &PolicyInput, k: usize) -> Result<Vec<Action>> {
        oracle_targets(input.plan, input.pose, input.goal, k)
    }
}

/// Uniform random actions from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _input: &PolicyInput, k: usize) -> Result<Vec<Action>> {
        Ok((0..k).map(|_| Action::ALL[self.rng.random_range(0..Action::COUNT)]).collect())
    }
}

#[derive(Debug, Default)]
pub struct DaggerOutput {
    pub samples: Vec<StepSample>,
    /// Visited states whose oracle label could not be computed.
    pub skipped: usize,
}

/// Rolls `policy` out from each episode's start and labels every visited
/// state with the oracle's next `k` actions from that state. Rollouts end on
/// Stop or after [`MAX_ROLLOUT_STEPS`]; collection ends at `budget` samples.
pub fn dagger_collect(
    policy: &mut dyn Policy,
    plans: &[FloorPlan],
    episodes: &[Episode],
    renderer: &Renderer,
    n: usize,
    k: usize,
    budget: usize,
) -> Result<DaggerOutput> {
    let mut out = DaggerOutput::default();
    for ep in episodes {
        if out.samples.len() >= budget {
            break;
        }
        let Some(plan) = plans.iter().find(|p| p.seed == ep.plan_seed) else {
            continue;
        };
        let mut pose = ep.start;
        let mut frames = Vec::new();
        for t in 0..MAX_ROLLOUT_STEPS {
            if out.samples.len() >= budget {
                break;
            }
            frames.push(renderer.observe(plan, pose));
            let (prompt, history, current) =
                action_context(&frames, t, n, SampleKind::Action, &ep.instruction.tokens);
            match oracle_targets(plan, pose, ep.goal, k) {
                Ok(labels) => out.samples.push(StepSample {
                    kind: SampleKind::Action,
                    plan_seed: ep.plan_seed,
                    episode: ep.id,
                    step: t,
                    pose,
                    prompt_tokens: prompt.clone(),
                    history: history.clone(),
                    current: Some(current.clone()),
                    target: Target::Actions(labels),
                }),
                Err(_) => out.skipped += 1,
            }
            let input = PolicyInput {
                plan,
                pose,
                goal: ep.goal,
                step: t,
                prompt_tokens: &prompt,
                history: &history,
                current: &current,
            };
            let action = policy.act(&input, k)?.first().copied().unwrap_or(Action::Stop);
            if action == Action::Stop {
                break;
            }
            pose = step_action(plan, pose, action).pose;
        }
    }
    Ok(out)
}
