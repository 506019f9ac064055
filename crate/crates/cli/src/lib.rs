//! Command dispatch for the `monodream` binary.
//!
//! Settings resolve in this order, later winning: toy defaults, the
//! `--config` file, `MONODREAM_SEED`, `--set key=value`, dedicated flags.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use monodream::episodes::{write_manifest, Renderer};
use monodream::evaluation::{
    ablation_run, check_seed_pools, compute_metrics, directional_grid, eval_episodes, evaluate_model, paper_grid,
    parse_ablation_csv, render_table, EvalConfig, GridRow,
};
use monodream::model::Model;
use monodream::sensors::{write_panorama, write_ppm, PanoramaKind, Sensor};
use monodream::training::{assemble_dataset, build_episodes, kind_counts, train_from_config, RunConfig};
use monodream::world::{generate_floorplan, parse_floorplan, write_floorplan, Pose, WorldConfig};
use serde::Serialize;

pub const SEED_ENV: &str = "MONODREAM_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "monodream", about = "Desk-scale monocular vision-language navigation", version)]
pub struct Cli {
    /// Worker cap. Commands currently run on one thread.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a floorplan and write it as text.
    GenWorld(GenWorldArgs),
    /// Build episodes and the training sample manifest.
    BuildData(RunArgs),
    /// Train a model; writes checkpoints under <out>/<config hash>/.
    Train(RunArgs),
    /// Evaluate a trained run on the unseen-plan pool.
    Eval(EvalArgs),
    /// Train and evaluate an ablation grid over several seeds.
    Ablate(AblateArgs),
    /// Render a view or panorama as PPM files.
    Render(RenderArgs),
    /// Finite-difference check of every differentiable op.
    GradCheck(GradCheckArgs),
    /// Render an ablation CSV as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenWorldArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Room grid as ROWSxCOLS.
    #[arg(long, default_value = "2x2")]
    pub rooms: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by commands that build a [`RunConfig`]. Each maps to one
/// config key.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// train.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// train.epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// train.batch_size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// train.lr
    #[arg(long)]
    pub lr: Option<f64>,
    /// train.lambda
    #[arg(long)]
    pub lambda: Option<f64>,
    /// train.max_steps
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// train.dagger_fraction
    #[arg(long)]
    pub dagger_fraction: Option<f64>,
    /// train.use_ir=false
    #[arg(long)]
    pub no_ir: bool,
    /// train.use_pi=false
    #[arg(long)]
    pub no_pi: bool,
    /// train.use_pd=false
    #[arg(long)]
    pub no_pd: bool,
    /// train.use_fpi=false
    #[arg(long)]
    pub no_fpi: bool,
    /// train.use_fpd=false
    #[arg(long)]
    pub no_fpd: bool,
    /// data.plans
    #[arg(long)]
    pub plans: Option<usize>,
    /// data.episodes_per_plan
    #[arg(long)]
    pub episodes_per_plan: Option<usize>,
    /// data.rows and data.cols, as ROWSxCOLS
    #[arg(long)]
    pub rooms: Option<String>,
    /// sensor.image_size and model.image_size
    #[arg(long)]
    pub image_size: Option<usize>,
    /// sensor.depth_encoding
    #[arg(long)]
    pub depth_encoding: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct EvalFlags {
    /// eval.plans
    #[arg(long)]
    pub eval_plans: Option<usize>,
    /// eval.episodes_per_plan
    #[arg(long)]
    pub eval_episodes_per_plan: Option<usize>,
    /// eval.max_steps
    #[arg(long)]
    pub eval_max_steps: Option<usize>,
    /// eval.success_radius
    #[arg(long)]
    pub success_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory holding config.txt and epoch checkpoints.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint to load; defaults to the last epoch in the run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// key=value file with eval.* settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// `directional` or `paper`.
    #[arg(long, default_value = "directional")]
    pub grid: String,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// x,y,heading_degrees
    #[arg(long)]
    pub pose: String,
    /// Four cubemap faces instead of one view.
    #[arg(long)]
    pub pano: bool,
    /// Pseudo-RGB depth instead of color.
    #[arg(long)]
    pub depth: bool,
    /// Also write the equirectangular strip.
    #[arg(long)]
    pub equirect: bool,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory containing ablation.csv.
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(monodream::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<monodream::Error> for CliError {
    fn from(e: monodream::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// What every command records next to its outputs.
#[derive(Debug, Serialize)]
struct CommandManifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    config_hash: Option<String>,
    config: Option<String>,
    outputs: Vec<String>,
}

fn write_command_manifest(
    path: &Path,
    command: &str,
    argv: &[String],
    config: Option<String>,
    outputs: &[PathBuf],
) -> CliResult<()> {
    let m = CommandManifest {
        command,
        argv: argv.to_vec(),
        config_hash: config.as_ref().map(|c| monodream::hashing::short_hash(c.as_bytes())),
        config,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&m).expect("serializes"))?;
    Ok(())
}

fn parse_rooms(s: &str) -> CliResult<(usize, usize)> {
    let (r, c) = s
        .split_once('x')
        .ok_or_else(|| usage(format!("--rooms expects ROWSxCOLS, got {s:?}")))?;
    let n = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| usage(format!("--rooms expects ROWSxCOLS, got {s:?}")))
    };
    Ok((n(r)?, n(c)?))
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn read_config_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))
}

/// Splits a key=value text into run keys and `eval.*` keys.
fn split_eval_keys(text: &str) -> (String, Vec<(String, String)>) {
    let mut run = String::new();
    let mut eval = Vec::new();
    for line in text.lines() {
        match line.trim().split_once('=') {
            Some((k, v)) if k.trim().starts_with("eval.") => eval.push((k.trim().to_string(), v.trim().to_string())),
            _ => {
                run.push_str(line);
                run.push('\n');
            }
        }
    }
    (run, eval)
}

/// Resolves the run and evaluation configs from defaults, file, env and
/// flags.
pub fn resolve_config(args: &ConfigArgs, eval_flags: Option<&EvalFlags>) -> CliResult<(RunConfig, EvalConfig)> {
    let mut c = RunConfig::toy();
    let mut e = EvalConfig::default();
    let apply = |c: &mut RunConfig, e: &mut EvalConfig, text: &str| -> CliResult<()> {
        let (run, eval) = split_eval_keys(text);
        c.apply_kv(&run).map_err(|err| usage(err.to_string()))?;
        for (k, v) in eval {
            if !e.set(&k, &v).map_err(|err| usage(err.to_string()))? {
                return Err(usage(format!("unknown config key {k:?}")));
            }
        }
        Ok(())
    };
    if let Some(p) = &args.config {
        apply(&mut c, &mut e, &read_config_file(p)?)?;
    }
    if let Some(s) = env_seed()? {
        c.train.seed = s;
    }
    for kv in &args.set {
        if !kv.contains('=') {
            return Err(usage(format!("--set expects KEY=VALUE, got {kv:?}")));
        }
        apply(&mut c, &mut e, kv)?;
    }
    let t = &mut c.train;
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.lambda {
        t.lambda = v;
    }
    if let Some(v) = args.max_steps {
        t.max_steps = Some(v);
    }
    if let Some(v) = args.dagger_fraction {
        t.dagger_fraction = v;
    }
    let f = &mut t.flags;
    f.use_ir &= !args.no_ir;
    f.use_pi &= !args.no_pi;
    f.use_pd &= !args.no_pd;
    f.use_fpi &= !args.no_fpi;
    f.use_fpd &= !args.no_fpd;
    if let Some(v) = args.plans {
        c.data.plans = v;
    }
    if let Some(v) = args.episodes_per_plan {
        c.data.episodes_per_plan = v;
    }
    if let Some(r) = &args.rooms {
        let (rows, cols) = parse_rooms(r)?;
        c.data.world.rows = rows;
        c.data.world.cols = cols;
        e.world.rows = rows;
        e.world.cols = cols;
    }
    if let Some(s) = args.image_size {
        c.sensor.image_size = s;
        c.model.image_size = s;
    }
    if let Some(d) = &args.depth_encoding {
        c.set("sensor.depth_encoding", d).map_err(|err| usage(err.to_string()))?;
    }
    if let Some(ev) = eval_flags {
        if let Some(v) = ev.eval_plans {
            e.plans = v;
        }
        if let Some(v) = ev.eval_episodes_per_plan {
            e.episodes_per_plan = v;
        }
        if let Some(v) = ev.eval_max_steps {
            e.max_steps = v;
        }
        if let Some(v) = ev.success_radius {
            e.success_radius = v;
        }
    }
    // Evaluation plans share the training room geometry; only the grid
    // size may differ.
    e.world = WorldConfig {
        rows: e.world.rows,
        cols: e.world.cols,
        ..c.data.world
    };
    c.validate().map_err(|err| usage(err.to_string()))?;
    e.world.validate().map_err(|err| usage(err.to_string()))?;
    Ok((c, e))
}

fn gen_world(a: &GenWorldArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let (rows, cols) = parse_rooms(&a.rooms)?;
    let seed = match (a.seed, env_seed()?) {
        (Some(s), _) => s,
        (None, Some(s)) => s,
        (None, None) => 0,
    };
    let plan = generate_floorplan(seed, WorldConfig::grid(rows, cols))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&a.out, write_floorplan(&plan))?;
    let mut manifest = a.out.clone().into_os_string();
    manifest.push(".manifest.json");
    let config = format!("seed={seed}\nrooms={rows}x{cols}\n");
    write_command_manifest(Path::new(&manifest), "gen-world", argv, Some(config), std::slice::from_ref(&a.out))?;
    writeln!(
        out,
        "plan seed {seed}: {} rooms, {} doors, fingerprint {:016x}",
        plan.rooms.len(),
        plan.doors.len(),
        plan.fingerprint()
    )?;
    Ok(())
}

fn build_data(a: &RunArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let (c, _) = resolve_config(&a.config, None)?;
    let (plans, episodes) = build_episodes(&c.data)?;
    let renderer = Renderer::new(c.sensor);
    let samples = assemble_dataset(&plans, &episodes, &renderer, &c.train, c.model.n_history, c.model.k_actions)?;
    std::fs::create_dir_all(&a.out)?;
    let ep_path = a.out.join("episodes.jsonl");
    let lines: Vec<String> = episodes
        .iter()
        .map(|e| serde_json::to_string(e).expect("serializes"))
        .collect();
    std::fs::write(&ep_path, lines.join("\n") + "\n")?;
    let sample_path = a.out.join("samples.jsonl");
    std::fs::write(&sample_path, write_manifest(&samples))?;
    let cfg_path = a.out.join("config.txt");
    std::fs::write(&cfg_path, c.to_kv())?;
    let counts = kind_counts(&samples);
    let counts_path = a.out.join("counts.txt");
    let names = ["action", "ir", "pi", "pd", "fpi", "fpd"];
    let text: String = names.iter().zip(counts).map(|(n, c)| format!("{n}={c}\n")).collect();
    std::fs::write(&counts_path, &text)?;
    write_command_manifest(
        &a.out.join("manifest.json"),
        "build-data",
        argv,
        Some(c.to_kv()),
        &[ep_path, sample_path, cfg_path, counts_path],
    )?;
    writeln!(out, "{} episodes, {} samples", episodes.len(), samples.len())?;
    write!(out, "{text}")?;
    Ok(())
}

fn train_cmd(a: &RunArgs, out: &mut dyn Write) -> CliResult<()> {
    let (c, _) = resolve_config(&a.config, None)?;
    let (_, manifest) = train_from_config(&c, Some(&a.out))?;
    let last = manifest.steps.last();
    writeln!(
        out,
        "run {} ({} steps, {} samples)",
        a.out.join(&manifest.config_hash).display(),
        manifest.steps.len(),
        manifest.dataset_len()
    )?;
    if let Some(l) = last {
        writeln!(out, "final loss {:.4} (act {:.4}, ins {:.4})", l.total, l.act, l.ins)?;
    }
    Ok(())
}

fn last_checkpoint(run: &Path) -> CliResult<PathBuf> {
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(run)? {
        let p = entry?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(k) = name
            .strip_prefix("epoch")
            .and_then(|r| r.strip_suffix(".ckpt"))
            .and_then(|k| k.parse::<usize>().ok())
        {
            if best.as_ref().is_none_or(|(b, _)| k > *b) {
                best = Some((k, p));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| monodream::Error::MissingRun(run.display().to_string()).into())
}

fn eval_cmd(a: &EvalArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let cfg_path = a.run.join("config.txt");
    if !cfg_path.exists() {
        return Err(monodream::Error::MissingRun(a.run.display().to_string()).into());
    }
    let c = RunConfig::from_kv(&std::fs::read_to_string(&cfg_path)?)?;
    let mut e = EvalConfig::default();
    e.world = c.data.world;
    if let Some(p) = &a.config {
        let (_, keys) = split_eval_keys(&read_config_file(p)?);
        for (k, v) in keys {
            if !e.set(&k, &v).map_err(|err| usage(err.to_string()))? {
                return Err(usage(format!("unknown eval key {k:?}")));
            }
        }
    }
    let f = &a.eval;
    if let Some(v) = f.eval_plans {
        e.plans = v;
    }
    if let Some(v) = f.eval_episodes_per_plan {
        e.episodes_per_plan = v;
    }
    if let Some(v) = f.eval_max_steps {
        e.max_steps = v;
    }
    if let Some(v) = f.success_radius {
        e.success_radius = v;
    }
    let ckpt = match &a.checkpoint {
        Some(p) => p.clone(),
        None => last_checkpoint(&a.run)?,
    };
    let (model, _) = Model::load(c.model, &ckpt)?;
    let train_seeds: Vec<u64> = (0..c.data.plans as u64).map(|i| c.data.plan_seed_base + i).collect();
    let (plans, episodes) = eval_episodes(&e)?;
    check_seed_pools(&train_seeds, &plans.iter().map(|p| p.seed).collect::<Vec<_>>())?;
    let renderer = Renderer::new(c.sensor);
    let logs = evaluate_model(&model, &plans, &episodes, &renderer, e.max_steps)?;
    let m = compute_metrics(&logs, e.success_radius)?;
    let dir = a.out.clone().unwrap_or_else(|| a.run.clone());
    std::fs::create_dir_all(&dir)?;
    let metrics_path = dir.join("metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&m).expect("serializes"))?;
    let logs_path = dir.join("rollouts.jsonl");
    let lines: Vec<String> = logs.iter().map(|l| serde_json::to_string(l).expect("serializes")).collect();
    std::fs::write(&logs_path, lines.join("\n") + "\n")?;
    write_command_manifest(
        &dir.join("eval_manifest.json"),
        "eval",
        argv,
        Some(format!("{}checkpoint={}\n{}", c.to_kv(), ckpt.display(), e.to_kv())),
        &[metrics_path, logs_path],
    )?;
    writeln!(
        out,
        "{} episodes: NE {:.3} OSR {:.3} SR {:.3} SPL {:.3}",
        m.episodes, m.ne, m.osr, m.sr, m.spl
    )?;
    Ok(())
}

fn ablate_cmd(a: &AblateArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let (c, e) = resolve_config(&a.config, Some(&a.eval))?;
    let grid: Vec<GridRow> = match a.grid.as_str() {
        "directional" => directional_grid(),
        "paper" => paper_grid(),
        g => return Err(usage(format!("unknown grid {g:?}; expected directional or paper"))),
    };
    let seeds = a
        .seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("--seeds expects comma-separated integers, got {:?}", a.seeds)))?;
    let mut progress = |l: &str| {
        let _ = writeln!(out, "{l}");
    };
    let table = ablation_run(&c, &grid, &seeds, &e, Some(&a.out), &mut progress)?;
    write_command_manifest(
        &a.out.join("manifest.json"),
        "ablate",
        argv,
        Some(format!("{}{}grid={}\nseeds={}\n", c.to_kv(), e.to_kv(), a.grid, a.seeds)),
        &[a.out.join("ablation.csv"), a.out.join("ablation.txt")],
    )?;
    write!(out, "{}", render_table(&table))?;
    Ok(())
}

fn parse_pose(s: &str) -> CliResult<Pose> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--pose expects x,y,heading, got {s:?}")))?;
    match v.as_slice() {
        [x, y, h] => Ok(Pose::new(*x, *y, *h)),
        _ => Err(usage(format!("--pose expects x,y,heading, got {s:?}"))),
    }
}

fn render_cmd(a: &RenderArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.plan)
        .map_err(|e| usage(format!("cannot read plan {}: {e}", a.plan.display())))?;
    let plan = parse_floorplan(&text)?;
    let pose = parse_pose(&a.pose)?;
    let cfg = monodream::sensors::SensorConfig {
        image_size: a.image_size,
        ..Default::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let sensor = Sensor::new(cfg);
    let kind = if a.depth {
        PanoramaKind::DepthPseudoRgb
    } else {
        PanoramaKind::Rgb
    };
    std::fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    let mut lines = vec![format!(
        "pose {} {} {} plan {:016x}",
        pose.x(),
        pose.y(),
        pose.heading_deg(),
        plan.fingerprint()
    )];
    if a.pano {
        let (paths, line) = write_panorama(&sensor.panorama(&plan, pose, kind), &a.out, kind.name())?;
        outputs.extend(paths);
        lines.push(line);
    } else {
        let img = if a.depth {
            sensor.face(&plan, pose, kind, 1)
        } else {
            sensor.observe(&plan, pose)
        };
        let path = a.out.join(format!("view_{}.ppm", kind.name()));
        std::fs::write(&path, write_ppm(&img))?;
        lines.push(format!("view {}", path.file_name().unwrap().to_string_lossy()));
        outputs.push(path);
    }
    if a.equirect {
        let path = a.out.join(format!("equirect_{}.ppm", kind.name()));
        std::fs::write(&path, write_ppm(&sensor.equirect(&plan, pose, kind)))?;
        outputs.push(path);
    }
    let list = a.out.join("manifest.txt");
    std::fs::write(&list, lines.join("\n") + "\n")?;
    outputs.push(list);
    write_command_manifest(
        &a.out.join("manifest.json"),
        "render",
        argv,
        Some(format!("pose={}\nimage_size={}\n", a.pose, a.image_size)),
        &outputs,
    )?;
    writeln!(out, "wrote {} files to {}", outputs.len(), a.out.display())?;
    Ok(())
}

/// Per-op report; true when every op is under the tolerance.
fn grad_check(a: &GradCheckArgs, out: &mut dyn Write) -> CliResult<bool> {
    const TOL: f64 = 1e-4;
    let reports = nncore::gradcheck::check_all(a.seed).map_err(|e| CliError::Runtime(e.into()))?;
    let mut ok = true;
    for r in &reports {
        let pass = r.max_rel_error < TOL;
        ok &= pass;
        writeln!(
            out,
            "{:<16} shapes {:>3}  max rel err {:.3e}  {}",
            r.op,
            r.shapes_checked,
            r.max_rel_error,
            if pass { "ok" } else { "FAIL" }
        )?;
    }
    Ok(ok)
}

fn report_cmd(a: &ReportArgs, out: &mut dyn Write) -> CliResult<()> {
    let path = a.run.join("ablation.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| CliError::Runtime(monodream::Error::MissingRun(a.run.display().to_string())))?;
    let table = parse_ablation_csv(&text)?;
    if table.rows.is_empty() {
        return Err(usage(format!("{} holds an empty grid", path.display())));
    }
    write!(out, "{}", render_table(&table))?;
    Ok(())
}

fn run(cli: &Cli, argv: &[String], out: &mut dyn Write) -> CliResult<i32> {
    if cli.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    match &cli.command {
        Command::GenWorld(a) => gen_world(a, argv, out)?,
        Command::BuildData(a) => build_data(a, argv, out)?,
        Command::Train(a) => train_cmd(a, out)?,
        Command::Eval(a) => eval_cmd(a, argv, out)?,
        Command::Ablate(a) => ablate_cmd(a, argv, out)?,
        Command::Render(a) => render_cmd(a, argv, out)?,
        Command::GradCheck(a) => {
            if !grad_check(a, out)? {
                return Ok(EXIT_FAILURE);
            }
        }
        Command::Report(a) => report_cmd(a, out)?,
    }
    Ok(EXIT_OK)
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code: 0 on success, 1 on usage errors, 2 on runtime failures.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, &argv, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Runtime(_) => EXIT_FAILURE,
            }
        }
    }
}
