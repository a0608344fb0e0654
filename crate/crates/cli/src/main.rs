//! `lagflow`: run scenario files, convergence studies and list the bundled
//! scenarios.
//!
//! Exit status: 0 when every enabled check passes, 1 when a check fails,
//! 2 on configuration or I/O errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lagflow::scenario::{self, RunReport, ScenarioConfig, ScenarioError, Verdict};

#[derive(Parser)]
#[command(name = "lagflow", version, about = "Stochastic Lagrangian Monte Carlo scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check of a scenario and write the report and CSV data.
    Run {
        config: PathBuf,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `realizations` (and the default of `field_realizations`).
        #[arg(long)]
        realizations: Option<usize>,
        /// Worker threads; 0 uses one per core.
        #[arg(long, env = "LAGFLOW_THREADS", default_value_t = 0)]
        threads: usize,
        /// Store the report (without timing) as the scenario's golden report.
        #[arg(long)]
        bless: bool,
    },
    /// Determinant-consistency error against dt, halving `levels - 1` times.
    Converge {
        config: PathBuf,
        #[arg(long)]
        levels: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "LAGFLOW_THREADS", default_value_t = 0)]
        threads: usize,
    },
    /// List the bundled scenarios.
    ListScenarios {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn with_threads<T>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, ScenarioError>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ScenarioError::Precondition(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn print_report(report: &RunReport) {
    for c in &report.checks {
        let verdict = match c.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        println!("{verdict} {}: {}", c.check.name(), c.detail);
    }
    println!(
        "{}: {} (config {}, seed {})",
        report.scenario,
        if report.passed { "all checks passed" } else { "checks failed" },
        report.config_hash,
        report.seed
    );
}

fn run(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    realizations: Option<usize>,
    threads: usize,
    bless: bool,
) -> Result<bool, ScenarioError> {
    let mut config = ScenarioConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(r) = realizations {
        config.realizations = r;
    }
    config.validate()?;
    let report = with_threads(threads, || scenario::run(&config, out))??;
    print_report(&report);
    if bless {
        let dir = config_path.parent().unwrap_or(Path::new("."));
        let path = scenario::golden_path(dir, &config.name);
        let io = |source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(path.parent().unwrap()).map_err(io)?;
        std::fs::write(&path, report.without_timing().to_toml()).map_err(io)?;
        println!("blessed {}", path.display());
    }
    Ok(report.passed)
}

fn converge(config_path: &Path, levels: usize, out: Option<&Path>, threads: usize) -> Result<(), ScenarioError> {
    let config = ScenarioConfig::load(config_path)?;
    let table = with_threads(threads, || scenario::convergence_study(&config, levels))??;
    let s = &table.study;
    println!("{:>12} {:>14} {:>14}", "dt", "rms_sde", "rms_lambda");
    for k in 0..s.dts.len() {
        println!("{:>12.3e} {:>14.6e} {:>14.6e}", s.dts[k], s.rms_sde[k], s.rms_lambda[k]);
    }
    let show = |o: Option<f64>| o.map(|v| format!("{v:.3}")).unwrap_or_else(|| "exact".into());
    println!("fitted order: sde {}, lambda {}", show(table.order_sde), show(table.order_lambda));
    if let Some(path) = out {
        let io = |source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        table.write_csv(std::io::BufWriter::new(file)).map_err(io)?;
    }
    Ok(())
}

fn list(dir: Option<PathBuf>) -> Result<(), ScenarioError> {
    let dir = dir.unwrap_or_else(scenario::scenarios_dir);
    for (name, config) in scenario::bundled_scenarios(&dir)? {
        let checks: Vec<&str> = config.enabled_checks().iter().map(|c| c.name()).collect();
        println!("{name:<16} {}D  {}", config.dimension, checks.join(", "));
        if !config.description.is_empty() {
            println!("{:<16} {}", "", config.description);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            realizations,
            threads,
            bless,
        } => run(&config, &out, seed, realizations, threads, bless).map(|passed| if passed { 0 } else { 1 }),
        Command::Converge {
            config,
            levels,
            out,
            threads,
        } => converge(&config, levels, out.as_deref(), threads).map(|_| 0),
        Command::ListScenarios { dir } => list(dir).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
