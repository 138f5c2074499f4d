//! Benchmark orchestration and relative-cost tables.
//!
//! Raw accumulated costs are normalized per (environment, cost) row so the
//! best method reads 1.00 and everything else is a multiple of it; per-method
//! totals are the column sums over rows. Protection sums can be negative
//! (blocking is rewarded), so rows whose minimum is not safely positive use
//! an offset normalization that keeps the same invariants.

use crate::env::{generate_environment, EnvSpec, Environment, GenerationError};
use crate::sim::{run_trial_indexed, trial_seed, Method, SimConfig, SimError, TrialLog};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which accumulated true cost a table row reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrueCost {
    Protection,
    Obstacle,
    Violation,
}

impl TrueCost {
    pub const ALL: [TrueCost; 3] = [TrueCost::Protection, TrueCost::Obstacle, TrueCost::Violation];

    pub fn label(&self) -> &'static str {
        match self {
            TrueCost::Protection => "P",
            TrueCost::Obstacle => "O",
            TrueCost::Violation => "V",
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Sum of one true cost over every recorded step of a trial.
pub fn accumulate_true_cost(log: &TrialLog, which: TrueCost) -> f64 {
    log.records
        .iter()
        .map(|r| match which {
            TrueCost::Protection => r.protection,
            TrueCost::Obstacle => r.obstacle,
            TrueCost::Violation => r.violation,
        })
        .sum()
}

/// A normalized cost table: one row per (environment, cost), one column per
/// method, plus the per-method total row.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeCostTable {
    pub row_labels: Vec<String>,
    pub methods: Vec<Method>,
    pub rows: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
    /// Aborted trials excluded from the averages.
    pub excluded_trials: usize,
}

/// Normalize a raw row so its minimum becomes exactly 1.00. Positive rows
/// divide by the minimum; rows whose minimum is zero or negative shift
/// instead (1 + raw − min), which preserves the ≥ 1.00 and tie invariants.
pub fn normalize_row(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 1e-9 {
        raw.iter().map(|&x| x / min).collect()
    } else {
        raw.iter().map(|&x| 1.0 + (x - min)).collect()
    }
}

/// Build a table from raw (un-normalized) rows.
pub fn relative_table(
    row_labels: Vec<String>,
    methods: Vec<Method>,
    raw_rows: &[Vec<f64>],
    excluded_trials: usize,
) -> RelativeCostTable {
    let rows: Vec<Vec<f64>> = raw_rows.iter().map(|r| normalize_row(r)).collect();
    let totals = (0..methods.len())
        .map(|c| rows.iter().map(|r| r[c]).sum())
        .collect();
    RelativeCostTable {
        row_labels,
        methods,
        rows,
        totals,
        excluded_trials,
    }
}

/// Full sweep specification: which environments to generate and how to run
/// each trial. The per-trial seed and method override the base sim config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub env_seeds: Vec<u64>,
    pub trials_per_env: u32,
    pub methods: Vec<Method>,
    pub env: EnvSpec,
    pub sim: SimConfig,
}

/// Sensing radius used by the benchmark: covers the whole default arena
/// (diagonal ≈ 3.8 m), matching the benchmark premise that every entity
/// position is known. Single trials keep the local 1.0 m default.
pub const BENCH_SENSING_RADIUS: f64 = 4.0;

impl Default for BenchConfig {
    fn default() -> Self {
        let mut sim = SimConfig::default();
        sim.costs.sensing_radius = BENCH_SENSING_RADIUS;
        BenchConfig {
            env_seeds: vec![0, 1, 2, 3],
            trials_per_env: 5,
            methods: Method::ALL.to_vec(),
            env: EnvSpec::default(),
            sim,
        }
    }
}

/// Everything a benchmark sweep produces.
#[derive(Debug)]
pub struct BenchOutcome {
    pub environments: Vec<Environment>,
    /// All trial logs in deterministic (environment, method, trial) order.
    pub logs: Vec<TrialLog>,
    /// Protection-only table (one row per environment).
    pub protection_table: RelativeCostTable,
    /// Multi-cost table (P/O/V rows per environment).
    pub multi_table: RelativeCostTable,
}

/// Run the full sweep: every (environment, method, trial) combination, in
/// parallel across trials but collected in deterministic order.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchOutcome, BenchError> {
    let environments: Vec<Environment> = config
        .env_seeds
        .iter()
        .map(|&seed| generate_environment(seed, &config.env))
        .collect::<Result<_, _>>()?;

    let mut jobs = Vec::new();
    for (env_index, env) in environments.iter().enumerate() {
        for &method in &config.methods {
            for trial in 0..config.trials_per_env {
                jobs.push((env_index, method, trial, env));
            }
        }
    }
    let logs: Vec<TrialLog> = jobs
        .par_iter()
        .map(|&(_, method, trial, env)| {
            let sim = SimConfig {
                method,
                seed: trial_seed(env.seed, method, trial),
                ..config.sim.clone()
            };
            run_trial_indexed(env, sim, trial)
        })
        .collect::<Result<_, _>>()?;

    // Mean accumulated cost per (environment, method, cost) over the
    // non-aborted trials.
    let mean = |env_seed: u64, method: Method, which: TrueCost| -> f64 {
        let values: Vec<f64> = logs
            .iter()
            .filter(|l| l.env_seed == env_seed && l.method == method && !l.aborted)
            .map(|l| accumulate_true_cost(l, which))
            .collect();
        if values.is_empty() {
            f64::INFINITY
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    };
    let excluded = logs.iter().filter(|l| l.aborted).count();

    let mut protection_labels = Vec::new();
    let mut protection_rows = Vec::new();
    let mut multi_labels = Vec::new();
    let mut multi_rows = Vec::new();
    for env in &environments {
        protection_labels.push(format!("env {} P", env.seed));
        protection_rows.push(
            config
                .methods
                .iter()
                .map(|&m| mean(env.seed, m, TrueCost::Protection))
                .collect::<Vec<f64>>(),
        );
        for which in TrueCost::ALL {
            multi_labels.push(format!("env {} {}", env.seed, which.label()));
            multi_rows.push(
                config
                    .methods
                    .iter()
                    .map(|&m| mean(env.seed, m, which))
                    .collect::<Vec<f64>>(),
            );
        }
    }

    Ok(BenchOutcome {
        protection_table: relative_table(
            protection_labels,
            config.methods.clone(),
            &protection_rows,
            excluded,
        ),
        multi_table: relative_table(multi_labels, config.methods.clone(), &multi_rows, excluded),
        environments,
        logs,
    })
}

// ---------------------------------------------------------------------------
// Report rendering.

impl RelativeCostTable {
    /// CSV with one row per table row plus the totals row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for m in &self.methods {
            out.push(',');
            out.push_str(m.name());
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.rows) {
            out.push_str(label);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out.push_str("total");
        for t in &self.totals {
            out.push_str(&format!(",{t}"));
        }
        out.push('\n');
        out
    }

    /// Aligned plain-text table in the style of the benchmark summaries.
    pub fn to_text(&self) -> String {
        let label_width = self
            .row_labels
            .iter()
            .map(|l| l.len())
            .chain(["total".len()])
            .max()
            .unwrap_or(5)
            .max(4);
        let mut out = format!("{:<label_width$}", "row");
        for m in &self.methods {
            out.push_str(&format!(" {:>8}", m.name()));
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.rows) {
            out.push_str(&format!("{label:<label_width$}"));
            for v in row {
                out.push_str(&format!(" {v:>8.2}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<label_width$}", "total"));
        for t in &self.totals {
            out.push_str(&format!(" {t:>8.2}"));
        }
        out.push('\n');
        if self.excluded_trials > 0 {
            out.push_str(&format!(
                "({} aborted trial(s) excluded)\n",
                self.excluded_trials
            ));
        }
        out
    }

    /// The table rendered as a standalone SVG (monospace text rows).
    pub fn to_svg(&self) -> String {
        let text = self.to_text();
        let lines: Vec<&str> = text.lines().collect();
        let line_height = 18;
        let width = lines.iter().map(|l| l.len()).max().unwrap_or(10) * 9 + 20;
        let height = (lines.len() + 1) * line_height + 10;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
             viewBox=\"0 0 {width} {height}\">\n\
             <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
        );
        for (i, line) in lines.iter().enumerate() {
            let y = (i + 1) * line_height;
            let escaped = line.replace('&', "&amp;").replace('<', "&lt;");
            svg.push_str(&format!(
                "<text x=\"10\" y=\"{y}\" font-family=\"monospace\" font-size=\"14\" \
                 xml:space=\"preserve\">{escaped}</text>\n"
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Agent traces over the arena for one trial, echoing the qualitative
/// trajectory figures: obstacles gray, threats red, payload path blue,
/// agents in distinct colors.
pub fn trajectory_svg(env: &Environment, log: &TrialLog) -> String {
    const SCALE: f64 = 220.0;
    const PAD: f64 = 20.0;
    let width = env.width * SCALE + 2.0 * PAD;
    let height = env.height * SCALE + 2.0 * PAD;
    let px = |x: f64| PAD + x * SCALE;
    // Flip y so the svg reads like the arena (origin bottom-left).
    let py = |y: f64| PAD + (env.height - y) * SCALE;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n\
         <rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" \
         stroke=\"black\"/>\n",
        env.width * SCALE,
        env.height * SCALE
    );

    use crate::entity::EntityKind;
    for e in &env.entities {
        let (color, r) = match e.kind {
            EntityKind::Obstacle => ("#888888", e.radius * SCALE),
            EntityKind::Threat => ("#cc2222", e.radius * SCALE),
            _ => continue,
        };
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"{:.1}\" fill=\"{color}\"/>\n",
            px(e.position.x),
            py(e.position.y),
            r
        ));
    }

    let palette = ["#1f77b4", "#2ca02c", "#9467bd", "#e377c2", "#8c564b", "#17becf"];
    let entity_count = env.entities.len();
    let agent_rows: Vec<usize> = env
        .entities
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EntityKind::Agent)
        .map(|(i, _)| i)
        .collect();
    let payload_row = env
        .entities
        .iter()
        .position(|e| e.kind == EntityKind::Payload);

    let polyline = |row: usize, color: &str, width: f64| -> String {
        let points: Vec<String> = log
            .records
            .iter()
            .filter(|r| r.positions.len() == entity_count)
            .map(|r| format!("{:.1},{:.1}", px(r.positions[row].x), py(r.positions[row].y)))
            .collect();
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"/>\n",
            points.join(" ")
        )
    };
    if let Some(row) = payload_row {
        svg.push_str(&polyline(row, "#333399", 2.5));
    }
    for (k, &row) in agent_rows.iter().enumerate() {
        svg.push_str(&polyline(row, palette[k % palette.len()], 1.2));
    }
    svg.push_str("</svg>\n");
    svg
}
