use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_seed_pools, compute_metrics, eval_episodes, evaluate_model, EvalConfig, MetricsReport};
use crate::episodes::Renderer;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sensors::{DepthEncoding, SensorConfig};
use crate::training::{assemble_dataset, build_episodes, train, RunConfig, TaskFlags, TrainData};

/// One configuration of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub ir: bool,
    pub pi: bool,
    pub pd: bool,
    pub fpi: bool,
    pub fpd: bool,
    /// Overrides the base depth encoding when set.
    pub depth: Option<DepthEncoding>,
}

impl GridRow {
    pub fn new(label: &str, flags: TaskFlags) -> Self {
        GridRow {
            label: label.into(),
            ir: flags.use_ir,
            pi: flags.use_pi,
            pd: flags.use_pd,
            fpi: flags.use_fpi,
            fpd: flags.use_fpd,
            depth: None,
        }
    }

    pub fn with_depth(mut self, enc: DepthEncoding) -> Self {
        self.depth = Some(enc);
        self
    }

    pub fn flags(&self) -> TaskFlags {
        TaskFlags {
            use_ir: self.ir,
            use_pi: self.pi,
            use_pd: self.pd,
            use_fpi: self.fpi,
            use_fpd: self.fpd,
        }
    }

    fn apply(&self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = *base;
        c.train.flags = self.flags();
        c.train.seed = seed;
        if let Some(e) = self.depth {
            c.sensor.depth_encoding = e;
        }
        c
    }
}

/// Baseline, +IR, +IR+LPD.
pub fn directional_grid() -> Vec<GridRow> {
    vec![
        GridRow::new("baseline", TaskFlags::NONE),
        GridRow::new("+IR", TaskFlags::ir_only()),
        GridRow::new("+IR+LPD", TaskFlags::ALL),
    ]
}

/// The directional rows, single-kind LPD rows on top of IR, and depth
/// encoding variants of the full objective.
pub fn paper_grid() -> Vec<GridRow> {
    let ir = TaskFlags::ir_only();
    let mut rows = directional_grid();
    rows.push(GridRow::new("+IR+PI", TaskFlags { use_pi: true, ..ir }));
    rows.push(GridRow::new("+IR+PD", TaskFlags { use_pd: true, ..ir }));
    rows.push(GridRow::new("+IR+FPI", TaskFlags { use_fpi: true, ..ir }));
    rows.push(GridRow::new("+IR+FPD", TaskFlags { use_fpd: true, ..ir }));
    rows.push(GridRow::new("+IR+LPD linear depth", TaskFlags::ALL).with_depth(DepthEncoding::Linear));
    rows.push(GridRow::new("+IR+LPD inverse depth", TaskFlags::ALL).with_depth(DepthEncoding::Inverse));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

/// Mean, min and max of each metric over the successful seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: MetricsReport,
    pub min: MetricsReport,
    pub max: MetricsReport,
    pub seeds: usize,
}

impl Summary {
    pub fn of(reports: &[MetricsReport]) -> Option<Summary> {
        let first = *reports.first()?;
        let n = reports.len() as f64;
        let fold = |f: &dyn Fn(f64, f64) -> f64, init: MetricsReport| {
            reports.iter().skip(1).fold(init, |a, r| MetricsReport {
                ne: f(a.ne, r.ne),
                sr: f(a.sr, r.sr),
                osr: f(a.osr, r.osr),
                spl: f(a.spl, r.spl),
                episodes: a.episodes,
            })
        };
        let sum = fold(&|a, b| a + b, first);
        Some(Summary {
            mean: MetricsReport {
                ne: sum.ne / n,
                sr: sum.sr / n,
                osr: sum.osr / n,
                spl: sum.spl / n,
                episodes: first.episodes,
            },
            min: fold(&f64::min, first),
            max: fold(&f64::max, first),
            seeds: reports.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: GridRow,
    pub seeds: Vec<SeedResult>,
}

impl AblationRow {
    pub fn summary(&self) -> Option<Summary> {
        let ok: Vec<MetricsReport> = self.seeds.iter().filter_map(|s| s.metrics).collect();
        Summary::of(&ok)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

const CSV_HEADER: &str = "label,ir,pi,pd,fpi,fpd,depth,seed,status,ne,osr,sr,spl,episodes";

fn yes(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

impl AblationTable {
    /// One line per (row, seed) in grid order.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let g = &r.row;
            for sr in &r.seeds {
                let _ = write!(
                    s,
                    "{},{},{},{},{},{},{},{},",
                    g.label.replace(',', ";"),
                    yes(g.ir),
                    yes(g.pi),
                    yes(g.pd),
                    yes(g.fpi),
                    yes(g.fpd),
                    g.depth.map_or("default", |e| e.name()),
                    sr.seed
                );
                match (&sr.metrics, &sr.error) {
                    (Some(m), _) => {
                        let _ = writeln!(s, "ok,{},{},{},{},{}", m.ne, m.osr, m.sr, m.spl, m.episodes);
                    }
                    (None, e) => {
                        let msg = e.as_deref().unwrap_or("failed").replace([',', '\n'], " ");
                        let _ = writeln!(s, "failed: {msg},,,,,");
                    }
                }
            }
        }
        s
    }
}

/// Inverse of [`AblationTable::to_csv`]. Consecutive lines with the same
/// label form one row.
pub fn parse_ablation_csv(text: &str) -> Result<AblationTable> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Parse("ablation csv: bad header".into()));
    }
    let mut table = AblationTable::default();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("ablation csv line {}: {line:?}", n + 2));
        if f.len() != 14 {
            return Err(bad());
        }
        let flag = |s: &str| match s {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(bad()),
        };
        let row = GridRow {
            label: f[0].to_string(),
            ir: flag(f[1])?,
            pi: flag(f[2])?,
            pd: flag(f[3])?,
            fpi: flag(f[4])?,
            fpd: flag(f[5])?,
            depth: match f[6] {
                "default" => None,
                s => Some(DepthEncoding::from_name(s).ok_or_else(bad)?),
            },
        };
        let seed = f[7].parse().map_err(|_| bad())?;
        let result = if f[8] == "ok" {
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            SeedResult {
                seed,
                metrics: Some(MetricsReport {
                    ne: num(f[9])?,
                    osr: num(f[10])?,
                    sr: num(f[11])?,
                    spl: num(f[12])?,
                    episodes: f[13].parse().map_err(|_| bad())?,
                }),
                error: None,
            }
        } else {
            SeedResult {
                seed,
                metrics: None,
                error: Some(f[8].trim_start_matches("failed: ").to_string()),
            }
        };
        match table.rows.last_mut() {
            Some(last) if last.row == row => last.seeds.push(result),
            _ => table.rows.push(AblationRow {
                row,
                seeds: vec![result],
            }),
        }
    }
    Ok(table)
}

/// Aligned text table: flag check marks, then NE, OSR, SR, SPL as the mean
/// over seeds with [min, max]. Rates are shown in percent.
pub fn render_table(table: &AblationTable) -> String {
    let mut lines: Vec<Vec<String>> = vec![[
        "Row", "IR", "PI", "PD", "FPI", "FPD", "Depth", "NE", "OSR", "SR", "SPL", "Seeds",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()];
    let mark = |b: bool| if b { "\u{2713}" } else { "" }.to_string();
    for r in &table.rows {
        let g = &r.row;
        let mut cells = vec![
            g.label.clone(),
            mark(g.ir),
            mark(g.pi),
            mark(g.pd),
            mark(g.fpi),
            mark(g.fpd),
            g.depth.map_or("default", |e| e.name()).to_string(),
        ];
        match r.summary() {
            Some(s) => {
                cells.push(format!("{:.2} [{:.2}, {:.2}]", s.mean.ne, s.min.ne, s.max.ne));
                let rates = |m: &MetricsReport| [m.osr, m.sr, m.spl];
                for i in 0..3 {
                    cells.push(format!(
                        "{:.1} [{:.1}, {:.1}]",
                        100.0 * rates(&s.mean)[i],
                        100.0 * rates(&s.min)[i],
                        100.0 * rates(&s.max)[i]
                    ));
                }
            }
            None => cells.extend(std::iter::repeat_n("failed".to_string(), 4)),
        }
        let ok = r.seeds.iter().filter(|s| s.metrics.is_some()).count();
        cells.push(format!("{ok}/{}", r.seeds.len()));
        lines.push(cells);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, l) in lines.iter().enumerate() {
        let row: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(row.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

fn run_cell(
    cfg: &RunConfig,
    train_set: &(Vec<crate::world::FloorPlan>, Vec<crate::episodes::Episode>),
    eval_set: &(Vec<crate::world::FloorPlan>, Vec<crate::episodes::Episode>),
    renderer: &Renderer,
    eval: &EvalConfig,
    out: Option<&Path>,
) -> Result<MetricsReport> {
    let samples = assemble_dataset(
        &train_set.0,
        &train_set.1,
        renderer,
        &cfg.train,
        cfg.model.n_history,
        cfg.model.k_actions,
    )?;
    let mut model = Model::new(cfg.model, cfg.train.seed)?;
    let mut data = TrainData {
        plans: &train_set.0,
        episodes: &train_set.1,
        renderer,
        samples,
    };
    let manifest = train(cfg, &mut data, &mut model, out)?;
    let logs = evaluate_model(&model, &eval_set.0, &eval_set.1, renderer, eval.max_steps)?;
    let metrics = compute_metrics(&logs, eval.success_radius)?;
    if let Some(o) = out {
        let dir = o.join(&manifest.config_hash);
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics).expect("serializes"))?;
        let logs_json: Vec<String> = logs
            .iter()
            .map(|l| serde_json::to_string(l).expect("serializes"))
            .collect();
        std::fs::write(dir.join("rollouts.jsonl"), logs_json.join("\n") + "\n")?;
    }
    Ok(metrics)
}

/// Trains every grid row under every seed and scores each run on the fixed
/// evaluation pool. A failing cell is recorded and the grid continues.
/// `progress` receives one line per finished cell.
pub fn ablation_run(
    base: &RunConfig,
    grid: &[GridRow],
    seeds: &[u64],
    eval: &EvalConfig,
    out: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<AblationTable> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation grid and seed list must be nonempty".into()));
    }
    base.validate()?;
    let train_set = build_episodes(&base.data)?;
    let eval_set = eval_episodes(eval)?;
    check_seed_pools(
        &train_set.0.iter().map(|p| p.seed).collect::<Vec<_>>(),
        &eval_set.0.iter().map(|p| p.seed).collect::<Vec<_>>(),
    )?;
    let mut renderers: Vec<(SensorConfig, Renderer)> = Vec::new();
    let mut table = AblationTable::default();
    for row in grid {
        let mut results = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = row.apply(base, seed);
            if !renderers.iter().any(|(s, _)| *s == cfg.sensor) {
                renderers.push((cfg.sensor, Renderer::new(cfg.sensor)));
            }
            let renderer = &renderers.iter().find(|(s, _)| *s == cfg.sensor).expect("inserted").1;
            let result = run_cell(&cfg, &train_set, &eval_set, renderer, eval, out);
            let line = match &result {
                Ok(m) => format!(
                    "{} seed {seed}: NE {:.2} OSR {:.3} SR {:.3} SPL {:.3}",
                    row.label, m.ne, m.osr, m.sr, m.spl
                ),
                Err(e) => format!("{} seed {seed}: failed: {e}", row.label),
            };
            progress(&line);
            results.push(match result {
                Ok(m) => SeedResult {
                    seed,
                    metrics: Some(m),
                    error: None,
                },
                Err(e) => SeedResult {
                    seed,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            });
        }
        table.rows.push(AblationRow {
            row: row.clone(),
            seeds: results,
        });
    }
    if let Some(o) = out {
        std::fs::create_dir_all(o)?;
        std::fs::write(o.join("ablation.csv"), table.to_csv())?;
        std::fs::write(o.join("ablation.txt"), render_table(&table))?;
    }
    Ok(table)
}
