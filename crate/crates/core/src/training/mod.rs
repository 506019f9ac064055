//! Multi-task co-training: dataset assembly with ablation flags, mixed-kind
//! batches, Adam with warm-up, a DAgger phase after the first epoch, and the
//! run manifest plus checkpoints.

mod config;

pub use crate::episodes::prompt_for;
pub use config::{DataConfig, RunConfig, TaskFlags, TrainConfig};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nncore::optim::adam_step;
use nncore::{AdamConfig, AdamState, Grads, NnError, WarmupSchedule};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episodes::{
    build_action_samples, build_instruction_sample, build_lpd_samples, dagger_collect, make_episodes, Episode,
    Renderer, SampleKind, StepSample,
};
use crate::error::{Error, Result};
use crate::model::{LossReport, Model, ModelPolicy};
use crate::world::{generate_floorplan, FloorPlan};

/// Plans with seeds at or above this value are reserved for evaluation.
pub const EVAL_SEED_BASE: u64 = 10_000;

/// Training plans and their episodes, built from a [`DataConfig`].
pub fn build_episodes(data: &DataConfig) -> Result<(Vec<FloorPlan>, Vec<Episode>)> {
    let plans = (0..data.plans as u64)
        .map(|i| generate_floorplan(data.plan_seed_base + i, data.world))
        .collect::<Result<Vec<_>>>()?;
    let episodes = make_episodes(&plans, data.episodes_per_plan, data.episode_seed)?;
    Ok((plans, episodes))
}

fn plan_for<'a>(plans: &'a [FloorPlan], ep: &Episode) -> Result<&'a FloorPlan> {
    plans
        .iter()
        .find(|p| p.seed == ep.plan_seed)
        .ok_or_else(|| Error::Parse(format!("episode {} refers to missing plan {}", ep.id, ep.plan_seed)))
}

/// Enabled LPD kinds, in [`SampleKind::LPD`] order.
pub fn lpd_kinds(flags: &TaskFlags) -> Vec<SampleKind> {
    let on = [flags.use_pi, flags.use_pd, flags.use_fpi, flags.use_fpd];
    SampleKind::LPD.into_iter().zip(on).filter(|(_, b)| *b).map(|(k, _)| k).collect()
}

/// Samples per kind, in [`SampleKind::ALL`] order.
pub fn kind_counts(samples: &[StepSample]) -> [usize; 6] {
    let mut c = [0; 6];
    for s in samples {
        c[SampleKind::ALL.iter().position(|&k| k == s.kind).expect("listed")] += 1;
    }
    c
}

/// Action samples for every oracle step, one instruction-reasoning sample
/// per episode when enabled, and one sample per step for each enabled LPD
/// kind; shuffled under `config.seed`. Disabled kinds are never built.
pub fn assemble_dataset(
    plans: &[FloorPlan],
    episodes: &[Episode],
    renderer: &Renderer,
    config: &TrainConfig,
    n: usize,
    k: usize,
) -> Result<Vec<StepSample>> {
    let kinds = lpd_kinds(&config.flags);
    let mut out = Vec::new();
    for ep in episodes {
        let plan = plan_for(plans, ep)?;
        out.extend(build_action_samples(plan, ep, renderer, n, k));
        if config.flags.use_ir {
            out.push(build_instruction_sample(plan, ep, renderer, n));
        }
        if !kinds.is_empty() {
            out.extend(build_lpd_samples(plan, ep, renderer, n, &kinds));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub act: f64,
    pub ins: f64,
    pub fea: [f64; 4],
    pub lambda: f64,
    pub total: f64,
    pub counts: [usize; 6],
}

impl StepLog {
    fn new(step: usize, epoch: usize, lr: f64, r: &LossReport) -> Self {
        StepLog {
            step,
            epoch,
            lr,
            act: r.act,
            ins: r.ins,
            fea: r.fea,
            lambda: r.lambda,
            total: r.total,
            counts: r.counts,
        }
    }

    /// `act + ins + lambda * sum(fea)`.
    pub fn component_sum(&self) -> f64 {
        self.act + self.ins + self.lambda * self.fea.iter().sum::<f64>()
    }
}

/// Append-only record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: String,
    /// Dataset samples per kind after each change, in [`SampleKind::ALL`]
    /// order. The first entry is the assembled dataset.
    pub dataset_counts: Vec<[usize; 6]>,
    pub dagger_added: Vec<usize>,
    pub dagger_skipped: usize,
    pub steps: Vec<StepLog>,
    pub checkpoints: Vec<String>,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        RunManifest {
            config_hash: config.hash(),
            config: config.to_kv(),
            dataset_counts: Vec::new(),
            dagger_added: Vec::new(),
            dagger_skipped: 0,
            steps: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    pub fn dataset_len(&self) -> usize {
        self.dataset_counts.last().map_or(0, |c| c.iter().sum())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// `step,kind,value` rows: every component and the total of every step.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,kind,value\n");
        for l in &self.steps {
            let _ = writeln!(s, "{},act,{}", l.step, l.act);
            let _ = writeln!(s, "{},ins,{}", l.step, l.ins);
            for (name, v) in ["pi", "pd", "fpi", "fpd"].iter().zip(l.fea) {
                let _ = writeln!(s, "{},{name},{v}", l.step);
            }
            let _ = writeln!(s, "{},total,{}", l.step, l.total);
        }
        s
    }
}

/// Everything `train` needs besides the model.
pub struct TrainData<'a> {
    pub plans: &'a [FloorPlan],
    pub episodes: &'a [Episode],
    pub renderer: &'a Renderer,
    pub samples: Vec<StepSample>,
}

/// Checkpoint path `<root>/<hash>/epoch<k>.ckpt`.
pub fn checkpoint_path(root: &Path, hash: &str, epoch: usize) -> PathBuf {
    root.join(hash).join(format!("epoch{epoch}.ckpt"))
}

fn batches(len: usize, b: usize) -> usize {
    len.div_ceil(b)
}

/// Co-trains `model` on `data.samples`. After the first epoch the current
/// policy is rolled out on the training episodes and visited states are
/// relabeled by the oracle until DAgger samples make up `dagger_fraction`
/// of the action samples. When `out` is given, a checkpoint, the manifest
/// and the loss CSV are written under `out/<hash>/`.
pub fn train(config: &RunConfig, data: &mut TrainData, model: &mut Model, out: Option<&Path>) -> Result<RunManifest> {
    config.validate()?;
    if data.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let t = &config.train;
    let (n, k) = (model.config.n_history, model.config.k_actions);
    let mut manifest = RunManifest::new(config);
    manifest.dataset_counts.push(kind_counts(&data.samples));

    let actions = manifest.dataset_counts[0][0];
    let use_dagger = t.dagger_fraction > 0.0 && t.epochs > 1;
    let budget = if use_dagger {
        (t.dagger_fraction / (1.0 - t.dagger_fraction) * actions as f64).round() as usize
    } else {
        0
    };
    let planned = batches(data.samples.len(), t.batch_size)
        + (t.epochs.saturating_sub(1)) * batches(data.samples.len() + budget, t.batch_size);
    let total_steps = t.max_steps.map_or(planned, |m| m.min(planned));
    let schedule = WarmupSchedule::new(t.lr, t.warmup_ratio, total_steps as u64);
    let adam = AdamConfig {
        lr: t.lr,
        ..Default::default()
    };
    let mut opt = AdamState::new(&model.params);
    let mut grads = Grads::new(&model.params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(t.seed ^ 0x5eed_0f0e);
    let mut step = 0;
    let run_dir = out.map(|o| o.join(&manifest.config_hash));

    let mut last: Option<LossReport> = None;
    for epoch in 0..t.epochs {
        let mut capped = false;
        let mut order: Vec<usize> = (0..data.samples.len()).collect();
        if epoch > 0 {
            order.shuffle(&mut order_rng);
        }
        for chunk in order.chunks(t.batch_size) {
            if t.max_steps.is_some_and(|m| step >= m) {
                capped = true;
                break;
            }
            let batch: Vec<&StepSample> = chunk.iter().map(|&i| &data.samples[i]).collect();
            let (mut tape, loss, report) = model.batch_loss(&batch, t.lambda)?;
            if !report.total.is_finite() {
                return Err(Error::NonFiniteGradient {
                    batch: step,
                    param: "loss".into(),
                });
            }
            tape.backward(loss)?;
            grads.zero();
            tape.param_grads(&mut grads);
            let lr = schedule.lr_at(step as u64 + 1);
            adam_step(&mut model.params, &grads, &mut opt, &adam, lr).map_err(|e| match e {
                NnError::NonFiniteGradient(param) => Error::NonFiniteGradient { batch: step, param },
                e => e.into(),
            })?;
            manifest.steps.push(StepLog::new(step, epoch, lr, &report));
            last = Some(report);
            step += 1;
        }
        if let Some(dir) = &run_dir {
            let path = checkpoint_path(out.expect("run dir implies out"), &manifest.config_hash, epoch + 1);
            model.save(&path, Some(&opt))?;
            manifest.checkpoints.push(path.display().to_string());
            std::fs::write(dir.join("model_card.txt"), model.card(t.seed, last.as_ref()))?;
        }
        if capped {
            break;
        }
        if epoch == 0 && use_dagger {
            let mut policy = ModelPolicy::new(model);
            let collected = dagger_collect(&mut policy, data.plans, data.episodes, data.renderer, n, k, budget)?;
            manifest.dagger_added.push(collected.samples.len());
            manifest.dagger_skipped += collected.skipped;
            data.samples.extend(collected.samples);
            manifest.dataset_counts.push(kind_counts(&data.samples));
        }
    }
    if let Some(dir) = &run_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), manifest.to_json())?;
        std::fs::write(dir.join("losses.csv"), manifest.loss_csv())?;
        std::fs::write(dir.join("config.txt"), config.to_kv())?;
    }
    Ok(manifest)
}

/// Builds episodes and the dataset from `config`, then trains a fresh model
/// seeded by `config.train.seed`.
pub fn train_from_config(config: &RunConfig, out: Option<&Path>) -> Result<(Model, RunManifest)> {
    config.validate()?;
    let (plans, episodes) = build_episodes(&config.data)?;
    if let Some(p) = plans.iter().find(|p| p.seed >= EVAL_SEED_BASE) {
        return Err(Error::SeedPoolOverlap(p.seed));
    }
    let renderer = Renderer::new(config.sensor);
    let mut model = Model::new(config.model, config.train.seed)?;
    let samples = assemble_dataset(
        &plans,
        &episodes,
        &renderer,
        &config.train,
        config.model.n_history,
        config.model.k_actions,
    )?;
    let mut data = TrainData {
        plans: &plans,
        episodes: &episodes,
        renderer: &renderer,
        samples,
    };
    let manifest = train(config, &mut data, &mut model, out)?;
    Ok((model, manifest))
}
