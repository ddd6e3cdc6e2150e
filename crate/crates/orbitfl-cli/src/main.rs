//! Command-line front end: generate contact traces, fit the utility
//! regressor, run and sweep experiments, and summarize metrics.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, malformed or
//! invalid configs, missing inputs), 2 for failures while executing.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Deserialize;

use orbitfl::orbits::{connectivity_stats, save_contact_trace};
use orbitfl::schedulers::{fit_from_config, save_samples_csv, UtilityFitConfig};
use orbitfl::sim::{
    curve_to_csv, save_metrics, sweep, Metrics, SimConfig, SweepPoint, TraceGenConfig,
};

#[derive(Parser)]
#[command(name = "orbitfl", version, about = "Satellite federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a connectivity trace from an orbital configuration.
    GenTrace {
        /// TOML config describing constellation, stations, and sampling.
        #[arg(long)]
        config: PathBuf,
        /// Output trace CSV; stats sidecars are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain on a source task and fit the utility regressor.
    FitUtility {
        #[arg(long)]
        config: PathBuf,
        /// Output regressor artifact (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also export the generated utility samples as CSV.
        #[arg(long)]
        samples_csv: Option<PathBuf>,
    },
    /// Run one experiment and write metrics JSON plus a curve CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scheduler/seed grid sharing one trace.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Summarize a directory of metrics files into a comparison table.
    Report {
        #[arg(long)]
        metrics_dir: PathBuf,
        /// Scheme the speedup column is measured against.
        #[arg(long, default_value = "fedspace")]
        baseline: String,
        /// Where to write the summary and histogram CSVs (defaults to the
        /// metrics directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Usage errors exit 1, runtime errors exit 2.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn exit(self) -> ExitCode {
        match self {
            CliError::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
            CliError::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_gen_trace(config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg: TraceGenConfig = load_toml(config)?;
    cfg.validate().map_err(usage)?;
    let (trace, _) = cfg.build().map_err(runtime)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_out_dir(parent)?;
    }
    save_contact_trace(&trace, out).map_err(runtime)?;

    let stats = connectivity_stats(&trace);
    let mut counts = String::from("time_index,connected\n");
    for (i, c) in stats.per_index_counts.iter().enumerate() {
        counts.push_str(&format!("{i},{c}\n"));
    }
    let mut visits = String::from("satellite_id,visits\n");
    for (k, v) in stats.per_satellite_visits.iter().enumerate() {
        visits.push_str(&format!("{k},{v}\n"));
    }
    let stem = out.with_extension("");
    let counts_path = PathBuf::from(format!("{}.counts.csv", stem.display()));
    let visits_path = PathBuf::from(format!("{}.visits.csv", stem.display()));
    std::fs::write(&counts_path, counts).map_err(runtime)?;
    std::fs::write(&visits_path, visits).map_err(runtime)?;

    let max_c = stats.per_index_counts.iter().max().copied().unwrap_or(0);
    let min_c = stats.per_index_counts.iter().min().copied().unwrap_or(0);
    let max_n = stats.per_satellite_visits.iter().max().copied().unwrap_or(0);
    let min_n = stats.per_satellite_visits.iter().min().copied().unwrap_or(0);
    println!(
        "wrote {} ({} indices, {} satellites); |C_i| in [{min_c},{max_c}], visits in [{min_n},{max_n}]",
        out.display(),
        trace.horizon(),
        trace.num_satellites()
    );
    println!("stats sidecars: {} and {}", counts_path.display(), visits_path.display());
    Ok(())
}

fn cmd_fit_utility(
    config: &Path,
    out: &Path,
    samples_csv: Option<&Path>,
) -> Result<(), CliError> {
    let cfg: UtilityFitConfig = load_toml(config)?;
    let fitted = fit_from_config(&cfg).map_err(runtime)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_out_dir(parent)?;
    }
    fitted.regressor.save(out).map_err(runtime)?;
    if let Some(path) = samples_csv {
        save_samples_csv(&fitted.samples, cfg.s_max, path).map_err(runtime)?;
    }
    let reg = &fitted.regressor;
    println!(
        "fitted on {} samples for {} clients (s_max {})",
        reg.samples_used(),
        reg.num_clients(),
        reg.s_max()
    );
    println!(
        "holdout mse {:.6} vs target variance {:.6} ({})",
        reg.holdout_mse(),
        reg.holdout_target_variance(),
        if reg.holdout_mse() < reg.holdout_target_variance() {
            "beats the mean predictor"
        } else {
            "does NOT beat the mean predictor; consider more samples"
        }
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn write_run_outputs(metrics: &Metrics, out_dir: &Path) -> Result<(), CliError> {
    let base = format!("{}_seed{}", metrics.scheduler, metrics.seed);
    let metrics_path = out_dir.join(format!("metrics_{base}.json"));
    let curve_path = out_dir.join(format!("curve_{base}.csv"));
    save_metrics(metrics, &metrics_path).map_err(runtime)?;
    std::fs::write(&curve_path, curve_to_csv(metrics)).map_err(runtime)?;
    let reached = match metrics.time_to_target_days {
        Some(d) => format!("target {:.3} reached after {d:.2} days", metrics.target_accuracy),
        None => format!("target {:.3} not reached", metrics.target_accuracy),
    };
    println!(
        "{}: rounds {}, final accuracy {:.4}, {}; wrote {}",
        base,
        metrics.rounds_completed,
        metrics.final_accuracy,
        reached,
        metrics_path.display()
    );
    Ok(())
}

/// The fedspace scheduler cannot run without a fitted regressor; surface that
/// as a usage error before anything executes.
fn check_regressor_configured(scheduler: &orbitfl::sim::SchedulerConfig) -> Result<(), CliError> {
    if let orbitfl::sim::SchedulerConfig::Fedspace { regressor: None, .. } = scheduler {
        return Err(usage(
            "scheduler `fedspace` needs a regressor artifact: run \
             `orbitfl fit-utility` and set `scheduler.regressor` to its output path",
        ));
    }
    Ok(())
}

fn cmd_run(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: SimConfig = load_toml(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(usage)?;
    check_regressor_configured(&cfg.scheduler)?;
    ensure_out_dir(out_dir)?;
    let metrics = orbitfl::sim::run(&cfg).map_err(runtime)?;
    write_run_outputs(&metrics, out_dir)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    run: SimConfig,
    sweep: SweepSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    seeds: Vec<u64>,
    points: Vec<orbitfl::sim::SchedulerConfig>,
}

fn cmd_sweep(config: &Path, out_dir: &Path) -> Result<(), CliError> {
    let cfg: SweepFile = load_toml(config)?;
    cfg.run.validate().map_err(usage)?;
    if cfg.sweep.seeds.is_empty() || cfg.sweep.points.is_empty() {
        return Err(usage("sweep needs at least one seed and one point"));
    }
    ensure_out_dir(out_dir)?;
    for point in &cfg.sweep.points {
        check_regressor_configured(point)?;
    }
    let points: Vec<SweepPoint> = cfg
        .sweep
        .points
        .iter()
        .map(|s| SweepPoint { label: s.label(), scheduler: s.clone() })
        .collect();
    let results = sweep(&cfg.run, &points, &cfg.sweep.seeds).map_err(runtime)?;
    for metrics in &results {
        write_run_outputs(metrics, out_dir)?;
    }
    Ok(())
}

fn cmd_report(metrics_dir: &Path, baseline: &str, out_dir: Option<&Path>) -> Result<(), CliError> {
    let out_dir = out_dir.unwrap_or(metrics_dir);
    ensure_out_dir(out_dir)?;
    let summary = report::build(metrics_dir, baseline).map_err(runtime)?;
    if summary.rows.is_empty() {
        return Err(usage(format!("no metrics files found under {}", metrics_dir.display())));
    }
    print!("{}", summary.table);
    report::write_files(&summary, out_dir).map_err(runtime)?;
    println!("wrote {}", out_dir.join("report_summary.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::GenTrace { config, out } => cmd_gen_trace(config, out),
        Command::FitUtility { config, out, samples_csv } => {
            cmd_fit_utility(config, out, samples_csv.as_deref())
        }
        Command::Run { config, out_dir, seed } => cmd_run(config, out_dir, *seed),
        Command::Sweep { config, out_dir } => cmd_sweep(config, out_dir),
        Command::Report { metrics_dir, baseline, out_dir } => {
            cmd_report(metrics_dir, baseline, out_dir.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.exit(),
    }
}
