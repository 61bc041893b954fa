use clap::{Parser, Subcommand};
use fedcache::placement::{self, PlacementError};
use fedcache::sim::{self, Preset, RawConfig, SimConfig, SimError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fedcache",
    about = "Mobility-aware federated caching simulator for dense small-cell networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics under the output directory.
    Simulate {
        /// Flat key-value TOML config file.
        #[arg(long)]
        config: PathBuf,
        /// Run seed; overrides the config file.
        #[arg(long)]
        seed: u64,
        /// Output directory for metrics.csv, psi.csv, greedy_iterations.csv
        /// and placement.csv.
        #[arg(long)]
        out: PathBuf,
        /// Placement policy override: frpl|egreedy|random|local|fullinfo|oracle.
        #[arg(long)]
        policy: Option<String>,
        /// Scale preset supplying defaults for unset config keys.
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Run several configs over a shared seed set and rank the policies.
    Compare {
        /// Config files; all must share the same trace.
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        /// Comma-separated seed list applied to every config.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Solve a plain-text placement instance directly.
    Placement {
        /// Instance file (see the README for the format).
        #[arg(long)]
        instance: PathBuf,
        /// greedy or oracle.
        #[arg(long)]
        solver: String,
    },
}

fn simulate(
    config: PathBuf,
    seed: u64,
    out: PathBuf,
    policy: Option<String>,
    preset: &str,
) -> Result<(), SimError> {
    let preset = Preset::parse(preset)?;
    let mut raw = RawConfig::from_file(&config)?;
    raw.seed = Some(seed);
    raw.out_dir = Some(out.display().to_string());
    if let Some(p) = policy {
        raw.policy = Some(p);
    }
    let config = SimConfig::resolve(&raw, preset)?;
    let artifacts = sim::run(&config)?;
    sim::write_artifacts(&config.out_dir, &artifacts)?;
    let last = artifacts.metrics.last();
    println!(
        "policy {} over {} periods, files {}, final cumulative density {:.3}",
        config.policy.name(),
        artifacts.metrics.len(),
        artifacts.file_count,
        last.map(|r| r.cum_lambda).unwrap_or(0.0),
    );
    println!("wrote {}", config.out_dir.join("metrics.csv").display());
    Ok(())
}

fn compare(configs: Vec<PathBuf>, seeds: Vec<u64>, out: PathBuf, preset: &str) -> Result<(), SimError> {
    let preset = Preset::parse(preset)?;
    let resolved: Vec<SimConfig> = configs
        .iter()
        .map(|path| {
            let mut raw = RawConfig::from_file(path)?;
            raw.seed.get_or_insert(0);
            SimConfig::resolve(&raw, preset)
        })
        .collect::<Result<_, _>>()?;
    let outcome = sim::compare(&resolved, &seeds)?;
    sim::write_comparison(&out, &outcome)?;
    println!("policy ranking by mean cache efficiency (warm-up excluded):");
    for s in &outcome.summary {
        println!(
            "  {:<9} ce {:.4}  final cum density {:.3}  mean cost {:.1}",
            s.policy, s.mean_ce, s.final_cum_lambda, s.mean_cost
        );
    }
    println!("wrote {}", out.join("summary.csv").display());
    Ok(())
}

fn solve_instance(instance: PathBuf, solver: &str) -> Result<(), PlacementError> {
    let problem = placement::read_instance(&instance)?;
    let result = match solver {
        "greedy" => placement::greedy_place(&problem)?,
        "oracle" => placement::exhaustive_place(&problem)?,
        other => {
            return Err(PlacementError::Invalid(format!(
                "unknown solver {other:?}; expected greedy|oracle"
            )))
        }
    };
    println!("solver {}", result.policy);
    println!("cost {}", result.cost);
    println!("iterations {}", result.iterations);
    for k in 0..result.cache.sbs_count() {
        let files: Vec<String> = result
            .cache
            .files_at(k)
            .iter()
            .map(|f| (f + 1).to_string())
            .collect();
        println!("sbs {k}: {}", files.join(" "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            policy,
            preset,
        } => match simulate(config, seed, out, policy, &preset) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Compare {
            configs,
            seeds,
            out,
            preset,
        } => match compare(configs, seeds, out, &preset) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Placement { instance, solver } => match solve_instance(instance, &solver) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                match e {
                    PlacementError::Io(_) | PlacementError::Parse { .. } => 3,
                    _ => 2,
                }
            }
        },
    };
    ExitCode::from(code as u8)
}
