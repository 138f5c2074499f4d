//! Command-line front end: environment generation, single trials, the full
//! benchmark sweep, report rendering, and the weight-identifiability
//! diagnostic.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use formation_forge::costs::{basis_gradient, SceneView};
use formation_forge::env::EnvSpec;
use formation_forge::eval::{
    relative_table, run_benchmark, trajectory_svg, BenchConfig, RelativeCostTable, TrueCost,
};
use formation_forge::sim::{
    run_trial_indexed, trial_seed, Method, SimConfig, TrialLog, TrialSummary,
};
use formation_forge::surrogate::dependence_diagnostic;
use formation_forge::{generate_environment, Environment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "formation-forge",
    about = "Formation planning and control benchmark for multi-robot payload escort",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random environment and write it as JSON.
    GenEnv {
        /// Seed of the generation draws.
        #[arg(long)]
        seed: u64,
        /// Output path of the environment JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional environment-spec JSON overriding the default field sizes
        /// and entity counts.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one trial and write its CSV logs and JSON summary.
    Run {
        /// Environment JSON produced by gen-env.
        #[arg(long)]
        env: PathBuf,
        /// One of FP_AW, FP, FS, AF.
        #[arg(long)]
        method: String,
        /// Trial index; the trial seed derives from it and the environment.
        #[arg(long, default_value_t = 0)]
        trial: u32,
        /// Directory the log files are written into.
        #[arg(long)]
        out: PathBuf,
        /// Optional sim-config JSON overriding the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write a trajectory SVG of the trial.
        #[arg(long)]
        svg: bool,
    },
    /// Run the full sweep (environments × methods × trials) and write the
    /// relative-cost tables plus per-trial logs.
    Bench {
        /// Optional benchmark-config JSON overriding the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory the tables and per-trial logs are written into.
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write a trajectory SVG per trial.
        #[arg(long)]
        svg: bool,
    },
    /// Rebuild the relative-cost tables from trial summaries on disk.
    Report {
        /// Directory searched (recursively) for *_summary.json files.
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Txt)]
        format: ReportFormat,
    },
    /// Check whether the basis gradients keep the weights identifiable in an
    /// environment (smallest-singular-value sweep).
    Diagnose {
        /// Environment JSON produced by gen-env.
        #[arg(long)]
        env: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Csv,
    Txt,
    Svg,
}

fn main() -> Result<()> {
    // FORMATION_FORGE_THREADS caps trial parallelism; results are identical
    // at any thread count, so this only trades wall time for CPU.
    if let Ok(threads) = std::env::var("FORMATION_FORGE_THREADS") {
        let threads: usize = threads
            .parse()
            .context("FORMATION_FORGE_THREADS must be a positive integer")?;
        if threads == 0 {
            bail!("FORMATION_FORGE_THREADS must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("failed to configure the thread pool")?;
    }

    match Cli::parse().command {
        Command::GenEnv { seed, out, config } => gen_env(seed, &out, config.as_deref()),
        Command::Run {
            env,
            method,
            trial,
            out,
            config,
            svg,
        } => run(&env, &method, trial, &out, config.as_deref(), svg),
        Command::Bench {
            config,
            out_dir,
            svg,
        } => bench(config.as_deref(), &out_dir, svg),
        Command::Report { logs, format } => report(&logs, format),
        Command::Diagnose { env } => diagnose(&env),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("failed to read {what} from {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid {what} in {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("failed to create {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("failed to write {}", path.display()))
}

fn gen_env(seed: u64, out: &Path, config: Option<&Path>) -> Result<()> {
    let spec: EnvSpec = match config {
        Some(path) => read_json(path, "environment spec")?,
        None => EnvSpec::default(),
    };
    let env = generate_environment(seed, &spec)?;
    write_file(out, &serde_json::to_string_pretty(&env)?)?;
    println!(
        "wrote environment seed {} ({} entities, {} waypoints) to {}",
        seed,
        env.entities.len(),
        env.waypoints.len(),
        out.display()
    );
    Ok(())
}

/// Write every log artifact of one trial into `dir`, returning the summary
/// path.
fn write_trial_files(dir: &Path, env: &Environment, log: &TrialLog, svg: bool) -> Result<PathBuf> {
    let prefix = format!("{}_trial{}", log.method.name(), log.trial_index);
    if let Some(weights) = log.weights_csv() {
        write_file(&dir.join(format!("{prefix}_weights.csv")), &weights)?;
    }
    write_file(&dir.join(format!("{prefix}_plan.csv")), &log.plan_csv())?;
    write_file(&dir.join(format!("{prefix}_commands.csv")), &log.commands_csv())?;
    if svg {
        write_file(
            &dir.join(format!("{prefix}_trajectory.svg")),
            &trajectory_svg(env, log),
        )?;
    }
    let summary_path = dir.join(format!("{prefix}_summary.json"));
    write_file(&summary_path, &serde_json::to_string_pretty(&log.summary())?)?;
    Ok(summary_path)
}

fn run(
    env_path: &Path,
    method: &str,
    trial: u32,
    out: &Path,
    config: Option<&Path>,
    svg: bool,
) -> Result<()> {
    let env: Environment = read_json(env_path, "environment")?;
    let method: Method = method.parse().map_err(anyhow::Error::msg)?;
    let mut sim: SimConfig = match config {
        Some(path) => read_json(path, "sim config")?,
        None => SimConfig::default(),
    };
    sim.method = method;
    sim.seed = trial_seed(env.seed, method, trial);
    let log = run_trial_indexed(&env, sim, trial)?;
    write_trial_files(out, &env, &log, svg)?;
    println!(
        "{} trial {}: {} steps{}, accumulated P={:.3} O={:.3} V={:.0}",
        method.name(),
        trial,
        log.records.len(),
        if log.aborted { " (aborted)" } else { "" },
        log.final_costs.protection,
        log.final_costs.obstacle,
        log.final_costs.violation,
    );
    Ok(())
}

fn bench(config: Option<&Path>, out_dir: &Path, svg: bool) -> Result<()> {
    let config: BenchConfig = match config {
        Some(path) => read_json(path, "benchmark config")?,
        None => BenchConfig::default(),
    };
    let outcome = run_benchmark(&config)?;

    for env in &outcome.environments {
        write_file(
            &out_dir.join(format!("env{}.json", env.seed)),
            &serde_json::to_string_pretty(env)?,
        )?;
    }
    for log in &outcome.logs {
        let env = outcome
            .environments
            .iter()
            .find(|e| e.seed == log.env_seed)
            .expect("benchmark logs reference generated environments");
        write_trial_files(&out_dir.join(format!("env{}", log.env_seed)), env, log, svg)?;
    }
    write_file(
        &out_dir.join("table_protection.csv"),
        &outcome.protection_table.to_csv(),
    )?;
    write_file(
        &out_dir.join("table_protection.txt"),
        &outcome.protection_table.to_text(),
    )?;
    write_file(&out_dir.join("table_multi.csv"), &outcome.multi_table.to_csv())?;
    write_file(&out_dir.join("table_multi.txt"), &outcome.multi_table.to_text())?;

    println!("relative protection cost:\n{}", outcome.protection_table.to_text());
    println!("relative multi-cost:\n{}", outcome.multi_table.to_text());
    println!("wrote benchmark outputs to {}", out_dir.display());
    Ok(())
}

/// Rebuild both tables from the trial summaries found under `logs`.
fn collect_tables(logs: &Path) -> Result<(RelativeCostTable, RelativeCostTable)> {
    let mut summaries: Vec<TrialSummary> = Vec::new();
    let mut stack = vec![logs.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)
            .with_context(|| format!("failed to list {}", dir.display()))?
        {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with("_summary.json"))
            {
                summaries.push(read_json(&path, "trial summary")?);
            }
        }
    }
    if summaries.is_empty() {
        bail!("no *_summary.json files under {}", logs.display());
    }

    let mut env_seeds: Vec<u64> = summaries.iter().map(|s| s.env_seed).collect();
    env_seeds.sort_unstable();
    env_seeds.dedup();
    let methods: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| summaries.iter().any(|s| s.method == *m))
        .collect();
    let excluded = summaries.iter().filter(|s| s.aborted).count();

    let mean = |seed: u64, method: Method, which: TrueCost| -> f64 {
        let values: Vec<f64> = summaries
            .iter()
            .filter(|s| s.env_seed == seed && s.method == method && !s.aborted)
            .map(|s| match which {
                TrueCost::Protection => s.final_costs.protection,
                TrueCost::Obstacle => s.final_costs.obstacle,
                TrueCost::Violation => s.final_costs.violation,
            })
            .collect();
        if values.is_empty() {
            f64::INFINITY
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    };

    let mut protection_labels = Vec::new();
    let mut protection_rows = Vec::new();
    let mut multi_labels = Vec::new();
    let mut multi_rows = Vec::new();
    for &seed in &env_seeds {
        protection_labels.push(format!("env {seed} P"));
        protection_rows.push(
            methods
                .iter()
                .map(|&m| mean(seed, m, TrueCost::Protection))
                .collect::<Vec<f64>>(),
        );
        for which in TrueCost::ALL {
            multi_labels.push(format!("env {seed} {}", which.label()));
            multi_rows.push(
                methods
                    .iter()
                    .map(|&m| mean(seed, m, which))
                    .collect::<Vec<f64>>(),
            );
        }
    }
    Ok((
        relative_table(protection_labels, methods.clone(), &protection_rows, excluded),
        relative_table(multi_labels, methods, &multi_rows, excluded),
    ))
}

fn report(logs: &Path, format: ReportFormat) -> Result<()> {
    let (protection, multi) = collect_tables(logs)?;
    match format {
        ReportFormat::Csv => {
            print!("{}", protection.to_csv());
            println!();
            print!("{}", multi.to_csv());
        }
        ReportFormat::Txt => {
            println!("relative protection cost:");
            print!("{}", protection.to_text());
            println!();
            println!("relative multi-cost:");
            print!("{}", multi.to_text());
        }
        ReportFormat::Svg => {
            print!("{}", multi.to_svg());
        }
    }
    Ok(())
}

fn diagnose(env_path: &Path) -> Result<()> {
    let env: Environment = read_json(env_path, "environment")?;
    let (scene, agents) = SceneView::from_entities(&env.entities);
    let costs = formation_forge::costs::CostConfig::default();

    let initial = dependence_diagnostic(&basis_gradient(&agents, &scene, &costs));
    println!(
        "initial configuration: sigma_min = {:.6} ({})",
        initial.sigma_min,
        if initial.independent {
            "weights identifiable"
        } else {
            "weights NOT identifiable"
        }
    );
    if let Some(note) = initial.note {
        println!("  note: {note}");
    }

    // Sweep random agent configurations over the arena to see how robust
    // identifiability is away from the initial placement.
    let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
    let mut sigmas = Vec::new();
    let mut dependent = 0usize;
    for _ in 0..100 {
        let sample: Vec<_> = agents
            .iter()
            .map(|_| {
                formation_forge::Vec2::new(
                    rng.random_range(0.0..env.width),
                    rng.random_range(0.0..env.height),
                )
            })
            .collect();
        let report = dependence_diagnostic(&basis_gradient(&sample, &scene, &costs));
        if !report.independent {
            dependent += 1;
        }
        sigmas.push(report.sigma_min);
    }
    sigmas.sort_by(|a, b| a.total_cmp(b));
    println!(
        "random sweep (100 configurations): sigma_min min = {:.6}, median = {:.6}, max = {:.6}",
        sigmas[0],
        sigmas[50],
        sigmas[99]
    );
    println!("dependent configurations: {dependent}/100");
    Ok(())
}
