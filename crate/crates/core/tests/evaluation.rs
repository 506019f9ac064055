use monodream::episodes::*;
use monodream::evaluation::*;
use monodream::model::{Model, ModelConfig};
use monodream::sensors::SensorConfig;
use monodream::training::{RunConfig, TaskFlags};
use monodream::world::*;
use monodream::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn renderer() -> Renderer {
    Renderer::new(SensorConfig {
        image_size: 32,
        ..Default::default()
    })
}

fn episode(seed: u64) -> (FloorPlan, Episode) {
    let p = generate_floorplan(seed, WorldConfig::grid(2, 2)).unwrap();
    let ep = make_episode(&p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (p, ep)
}

struct StopPolicy;

impl Policy for StopPolicy {
    fn act(&mut self, _: &PolicyInput, k: usize) -> monodream::Result<Vec<Action>> {
        Ok(vec![Action::Stop; k])
    }
}

/// Counts decodes and always proposes a full horizon of left turns.
struct CountingPolicy {
    calls: usize,
}

impl Policy for CountingPolicy {
    fn act(&mut self, input: &PolicyInput, k: usize) -> monodream::Result<Vec<Action>> {
        assert_eq!(input.step, self.calls);
        self.calls += 1;
        Ok(vec![Action::TurnLeft(Turn::Deg15); k])
    }
}

#[test]
fn oracle_replay_reproduces_the_oracle_trace() {
    let r = renderer();
    for seed in 0..5 {
        let (p, ep) = episode(seed);
        let log = run_episode(&mut ReplayPolicy::new(ep.oracle_actions.clone()), &p, &ep, &r, 8, 3, 100).unwrap();
        assert!(log.is_consistent());
        assert_eq!(log.actions, ep.oracle_actions);
        assert_eq!(log.poses, ep.poses(&p));
        assert!(log.stop_called);
        assert!(log.final_distance <= SUCCESS_RADIUS);
        let m = compute_metrics(&[log], SUCCESS_RADIUS).unwrap();
        assert_eq!((m.sr, m.osr), (1.0, 1.0));
        assert!(m.spl > 0.8 && m.spl <= 1.0);
    }
}

#[test]
fn immediate_stop_scores_the_start_distance() {
    let (p, ep) = episode(3);
    let log = run_episode(&mut StopPolicy, &p, &ep, &renderer(), 8, 3, 100).unwrap();
    assert_eq!(log.steps_used, 1);
    assert!(log.stop_called);
    let geo = geodesic_distance(&p, ep.start.position(), ep.goal).unwrap();
    let m = compute_metrics(&[log], SUCCESS_RADIUS).unwrap();
    assert_eq!(m.ne, geo);
    assert_eq!((m.sr, m.osr, m.spl), (0.0, 0.0, 0.0));
}

#[test]
fn one_action_executed_per_decode_and_step_cap() {
    let (p, ep) = episode(4);
    let r = renderer();
    for max in [1, 7, 30] {
        let mut pol = CountingPolicy { calls: 0 };
        let log = run_episode(&mut pol, &p, &ep, &r, 8, 3, max).unwrap();
        assert!(log.is_consistent());
        assert_eq!(log.steps_used, max);
        assert_eq!(pol.calls, max);
        assert!(!log.stop_called);
        assert_eq!(log.path_length(), 0.0);
    }
    let log = run_episode(&mut RandomPolicy::new(1), &p, &ep, &r, 8, 3, 100).unwrap();
    assert!(log.steps_used <= 100 && log.is_consistent());
}

/// `meters` one-meter moves along +x, then Stop in place.
fn straight_log(id: usize, l: f64, meters: usize, final_distance: f64) -> RolloutLog {
    let mut poses: Vec<Pose> = (0..=meters).map(|i| Pose::new(i as f64, 0.0, 0.0)).collect();
    poses.push(poses[meters]);
    let mut distances = vec![5.0; meters + 1];
    distances.push(final_distance);
    let mut actions = vec![Action::Forward(Stride::Cm75); meters];
    actions.push(Action::Stop);
    RolloutLog {
        episode: id,
        plan_seed: 0,
        poses,
        actions,
        distances,
        stop_called: true,
        steps_used: meters + 1,
        final_distance,
        geodesic_length: l,
        non_action: 0,
    }
}

#[test]
fn spl_closed_forms() {
    let log = straight_log(0, 4.0, 5, 0.5);
    assert!(log.is_consistent());
    assert_eq!(log.path_length(), 5.0);
    let m = compute_metrics(&[log], SUCCESS_RADIUS).unwrap();
    assert_eq!(m.spl, 0.8);
    assert_eq!((m.sr, m.osr), (1.0, 1.0));

    let exact = straight_log(1, 5.0, 5, 0.0);
    let m = compute_metrics(&[exact], SUCCESS_RADIUS).unwrap();
    assert_eq!((m.spl, m.sr, m.osr), (1.0, 1.0, 1.0));
    assert!(m.ne <= SUCCESS_RADIUS);

    assert!(matches!(compute_metrics(&[], 1.0), Err(Error::EmptyLogs)));
}

fn synthetic_logs(seed: u64, count: usize) -> Vec<RolloutLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let steps = rng.random_range(1..40usize);
            let mut poses = vec![Pose::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0), 0.0)];
            let mut actions = Vec::new();
            for s in 0..steps {
                let last = *poses.last().unwrap();
                let a = if s + 1 == steps && rng.random_bool(0.7) {
                    Action::Stop
                } else {
                    Action::ALL[rng.random_range(0..9)]
                };
                let moved = match a {
                    Action::Forward(st) => {
                        let th = last.heading_rad();
                        Pose::new(last.x() + st.meters() * th.cos(), last.y() + st.meters() * th.sin(), last.heading_deg())
                    }
                    _ => last.rotated(a.turn_quarters()),
                };
                actions.push(a);
                poses.push(moved);
            }
            let distances: Vec<f64> = (0..=steps).map(|_| rng.random_range(0.0..6.0)).collect();
            RolloutLog {
                episode: count - i,
                plan_seed: 10_000,
                stop_called: actions.last() == Some(&Action::Stop),
                steps_used: steps,
                final_distance: *distances.last().unwrap(),
                geodesic_length: rng.random_range(3.0..15.0),
                poses,
                actions,
                distances,
                non_action: 0,
            }
        })
        .collect()
}

/// Second evaluator, written from the metric definitions alone.
fn reference_metrics(logs: &[RolloutLog], radius: f64) -> (f64, f64, f64, f64) {
    let mut idx: Vec<usize> = (0..logs.len()).collect();
    idx.sort_by(|&a, &b| logs[a].episode.cmp(&logs[b].episode));
    let n = logs.len() as f64;
    let mut totals = [0.0f64; 4];
    for &i in &idx {
        let l = &logs[i];
        let mut p = 0.0;
        for j in 1..l.poses.len() {
            let (a, b) = (l.poses[j - 1], l.poses[j]);
            p += ((b.x() - a.x()).powi(2) + (b.y() - a.y()).powi(2)).sqrt();
        }
        let s = if l.stop_called && l.distances[l.distances.len() - 1] <= radius { 1.0 } else { 0.0 };
        let o = if l.distances.iter().cloned().fold(f64::INFINITY, f64::min) <= radius { 1.0 } else { 0.0 };
        totals[0] += l.distances[l.distances.len() - 1];
        totals[1] += s;
        totals[2] += o;
        totals[3] += if s == 1.0 { l.geodesic_length / if p > l.geodesic_length { p } else { l.geodesic_length } } else { 0.0 };
    }
    (totals[0] / n, totals[1] / n, totals[2] / n, totals[3] / n)
}

#[test]
fn metrics_match_the_reference_evaluator() {
    let logs = synthetic_logs(7, 100);
    assert!(logs.iter().all(RolloutLog::is_consistent));
    for radius in [0.5, 1.0, 2.0] {
        let m = compute_metrics(&logs, radius).unwrap();
        let (ne, sr, osr, spl) = reference_metrics(&logs, radius);
        assert_eq!((m.ne, m.sr, m.osr, m.spl), (ne, sr, osr, spl));
        assert_eq!(m.episodes, 100);
        assert!(m.is_ordered());
        assert!(m.sr > 0.0 && m.osr < 1.0, "fixture should exercise both outcomes");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn metric_ordering_and_radius_monotonicity(seed in any::<u64>(), count in 1usize..30, r in 0.1f64..3.0, dr in 0.0f64..2.0) {
        let logs = synthetic_logs(seed, count);
        let a = compute_metrics(&logs, r).unwrap();
        let b = compute_metrics(&logs, r + dr).unwrap();
        for m in [a, b] {
            prop_assert!(m.is_ordered());
            prop_assert!(m.ne >= 0.0);
            for x in [m.sr, m.osr, m.spl] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
        prop_assert!(b.sr >= a.sr && b.osr >= a.osr);
    }
}

#[test]
fn seed_pools_must_be_disjoint() {
    assert!(check_seed_pools(&[0, 9_999], &[10_000, 20_000]).is_ok());
    assert!(matches!(check_seed_pools(&[10_000], &[10_001]), Err(Error::SeedPoolOverlap(10_000))));
    assert!(matches!(check_seed_pools(&[1], &[5]), Err(Error::SeedPoolOverlap(5))));
    let bad = EvalConfig {
        plan_seed_base: 3,
        ..Default::default()
    };
    assert!(matches!(eval_episodes(&bad), Err(Error::SeedPoolOverlap(3))));
}

#[test]
fn model_rollouts_are_bounded_and_deterministic() {
    let cfg = EvalConfig {
        plans: 2,
        episodes_per_plan: 1,
        max_steps: 12,
        ..Default::default()
    };
    let (plans, eps) = eval_episodes(&cfg).unwrap();
    let model = Model::new(ModelConfig::toy(), 3).unwrap();
    let r = renderer();
    let a = evaluate_model(&model, &plans, &eps, &r, cfg.max_steps).unwrap();
    let b = evaluate_model(&model, &plans, &eps, &r, cfg.max_steps).unwrap();
    assert_eq!(a, b);
    for l in &a {
        assert!(l.is_consistent());
        assert!(l.steps_used <= 12);
    }
}

fn tiny_base() -> RunConfig {
    let mut c = RunConfig::toy();
    c.data.plans = 2;
    c.data.episodes_per_plan = 1;
    c.train.epochs = 1;
    c.train.batch_size = 4;
    c.train.max_steps = Some(2);
    c
}

fn tiny_eval() -> EvalConfig {
    EvalConfig {
        plans: 1,
        episodes_per_plan: 2,
        max_steps: 4,
        ..Default::default()
    }
}

#[test]
fn ablation_bookkeeping() {
    let grid = vec![
        GridRow::new("baseline", TaskFlags::NONE),
        GridRow::new("+IR", TaskFlags::ir_only()),
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let table = ablation_run(&tiny_base(), &grid, &[0, 1, 2], &tiny_eval(), Some(dir.path()), &mut |l| {
        lines.push(l.to_string())
    })
    .unwrap();
    assert_eq!(lines.len(), 6);
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].row.label, "baseline");
    assert_eq!(table.rows[1].row.label, "+IR");
    for r in &table.rows {
        assert_eq!(r.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
        let srs: Vec<f64> = r.seeds.iter().map(|s| s.metrics.unwrap().sr).collect();
        let s = r.summary().unwrap();
        assert_eq!(s.mean.sr, (srs[0] + srs[1] + srs[2]) / 3.0);
        assert_eq!(s.min.sr, srs.iter().cloned().fold(f64::INFINITY, f64::min));
        assert_eq!(s.max.sr, srs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(parse_ablation_csv(&csv).unwrap(), table);
    let text = render_table(&table);
    let header = text.lines().next().unwrap();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(cols, ["Row", "IR", "PI", "PD", "FPI", "FPD", "Depth", "NE", "OSR", "SR", "SPL", "Seeds"]);
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(3).unwrap().starts_with("+IR "));
    assert!(dir.path().join("ablation.txt").exists());
}

#[test]
fn failing_cells_do_not_abort_the_grid() {
    let mut base = tiny_base();
    // prompts do not fit, so every training run fails
    base.model.max_seq = 40;
    let grid = directional_grid();
    let table = ablation_run(&base, &grid[..2], &[0], &tiny_eval(), None, &mut |_| {}).unwrap();
    assert_eq!(table.rows.len(), 2);
    for r in &table.rows {
        assert!(r.seeds[0].metrics.is_none());
        assert!(r.seeds[0].error.as_ref().unwrap().contains("exceeds"));
        assert!(r.summary().is_none());
    }
    let back = parse_ablation_csv(&table.to_csv()).unwrap();
    assert_eq!(back.rows.len(), 2);
    assert!(render_table(&back).contains("failed"));
    assert!(ablation_run(&base, &[], &[0], &tiny_eval(), None, &mut |_| {}).is_err());
}

#[test]
fn grids_have_the_expected_rows() {
    let labels: Vec<String> = paper_grid().into_iter().map(|r| r.label).collect();
    assert_eq!(&labels[..3], ["baseline", "+IR", "+IR+LPD"]);
    assert_eq!(labels.len(), 9);
    let d = directional_grid();
    assert_eq!(d[0].flags(), TaskFlags::NONE);
    assert_eq!(d[2].flags(), TaskFlags::ALL);
}
