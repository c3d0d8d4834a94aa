//! Scenario runner CLI.
//!
//! Exit codes: 0 success, 2 configuration/scenario error, 3 runtime error,
//! 4 expected-ordering failure in a comparison.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use fieldest::config::ConfigFile;
use fieldest::error::Error;
use fieldest::estimators::Algorithm;
use fieldest::field::GridSpec;
use fieldest::logs;
use fieldest::metrics::{self, RunDigest};
use fieldest::sim;

#[derive(Parser)]
#[command(name = "fieldest", about = "Distributed scalar-field estimation simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario config and print the resolved effective config.
    Validate { config: PathBuf },
    /// Run one scenario and write its logs.
    Run {
        config: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: `run_out` next to the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the per-tick agent phase (results are
        /// identical for any value).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the config's (algorithm, p, sigma) sweep grid and compare rows.
    Sweep {
        config: PathBuf,
        /// Output directory (default: `sweep_out` next to the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the metrics report from a run directory's logs.
    Metrics { dir: PathBuf },
    /// Render a reconstruction grid from a run directory's final estimate.
    Reconstruct {
        dir: PathBuf,
        /// Nodes per axis of the output grid.
        #[arg(long, default_value_t = 200)]
        resolution: usize,
    },
}

fn main() -> ExitCode {
    // die quietly when downstream consumers (head, less) close the pipe
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_class() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = ConfigFile::load(&config)?;
            cfg.to_scenario()?;
            print!("{}", cfg.resolved_toml()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => {
            let mut cfg = ConfigFile::load(&config)?;
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            if let Some(t) = threads {
                cfg.sim.threads = t;
            }
            let scenario = cfg.to_scenario()?;
            let out_dir = out.unwrap_or_else(|| sibling_dir(&config, "run_out"));
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(
                out_dir.join(logs::RESOLVED_CONFIG_FILE),
                cfg.resolved_toml()?,
            )?;
            let record = sim::run_scenario(&scenario, Some(&out_dir))?;
            let t = record
                .achieved_t
                .map(|t| format!("{t:.3}"))
                .unwrap_or_else(|| "not achieved".into());
            let err = record
                .max_param_error
                .map(|e| format!("{e:.6}"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "run complete: algorithm={} T={} max_param_error={} integral_error={:.6} runtime={:.2}s out={}",
                record.algorithm.id(),
                t,
                err,
                record.integral_error,
                record.runtime_seconds,
                out_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, out } => {
            let cfg = ConfigFile::load(&config)?;
            let template = cfg.to_scenario()?;
            let algorithms: Vec<Algorithm> = cfg
                .sweep
                .algorithms
                .iter()
                .map(|s| Algorithm::from_id(s))
                .collect::<Result<_, _>>()?;
            let out_dir = out.unwrap_or_else(|| sibling_dir(&config, "sweep_out"));
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(
                out_dir.join(logs::RESOLVED_CONFIG_FILE),
                cfg.resolved_toml()?,
            )?;
            let rows = sim::sweep(
                &template,
                &algorithms,
                &cfg.sweep.p_values,
                &cfg.sweep.sigmas,
                Some(&out_dir),
            )?;
            let mut ordering_ok = true;
            for row in &rows {
                let t = row
                    .achieved_t
                    .map(|t| format!("{t:.3}"))
                    .unwrap_or_else(|| "-".into());
                let ie = row
                    .integral_error
                    .map(|e| format!("{e:.6}"))
                    .unwrap_or_else(|| "-".into());
                match &row.error {
                    None => println!(
                        "{} p={} sigma={}: T={} integral_error={}",
                        row.algorithm.id(),
                        row.p,
                        row.sigma,
                        t,
                        ie
                    ),
                    Some(e) => println!(
                        "{} p={} sigma={}: FAILED ({e})",
                        row.algorithm.id(),
                        row.p,
                        row.sigma
                    ),
                }
            }
            // compare algorithms within each (p, sigma) group
            for &p in &cfg.sweep.p_values {
                for &sigma in &cfg.sweep.sigmas {
                    let digests: Vec<RunDigest> = rows
                        .iter()
                        .filter(|r| r.p == p && r.sigma == sigma && r.error.is_none())
                        .map(|r| RunDigest {
                            algorithm: r.algorithm,
                            p: r.p,
                            sigma: r.sigma,
                            seed: template.seed,
                            max_component_error: r.max_component_error,
                            integral_error: r.integral_error.unwrap_or(f64::NAN),
                        })
                        .collect();
                    if digests.len() >= 2 {
                        let report = metrics::compare_report(&digests)?;
                        println!("p={p} sigma={sigma}:");
                        print!("{}", report.render());
                        ordering_ok &= report.ordering_ok;
                    }
                }
            }
            println!("sweep summary written to {}", out_dir.display());
            if ordering_ok {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(4))
            }
        }
        Command::Metrics { dir } => {
            let report = metrics::recompute(&dir)?;
            println!("algorithm: {}", report.algorithm.id());
            match report.achieved_t {
                Some(t) => println!("achieved_t: {t:.3}"),
                None => println!("achieved_t: not achieved"),
            }
            println!("integral_error: {:.9}", report.integral_error);
            match report.max_param_error {
                Some(e) => println!("max_param_error: {e:.9}"),
                None => println!("max_param_error: n/a (truth unknown)"),
            }
            for (i, e) in report.per_agent_final_err.iter().enumerate() {
                println!("agent {i} final_err: {e:.9}");
            }
            for b in &report.bounds {
                println!(
                    "agent {} bound: radius {:.6} error {:.6} [{}]",
                    b.agent,
                    b.radius,
                    b.final_error,
                    if b.satisfied { "ok" } else { "VIOLATED" }
                );
            }
            if let Some((t, e)) = report.avg_err_trace.last() {
                println!("avg_err at t={t:.3}: {e:.9}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Reconstruct { dir, resolution } => {
            let report = metrics::recompute(&dir)?;
            let cfg = ConfigFile::load(&dir.join(logs::RESOLVED_CONFIG_FILE))?;
            let scn = cfg.to_scenario()?;
            let prep = sim::prepare(&scn)?;
            let grid = GridSpec::new(resolution, resolution, *scn.field.domain())?;
            let values =
                fieldest::field::reconstruct(&prep.estimator_basis, &report.assembled_estimate, &grid)?;
            let path = dir.join(format!("reconstruction_{resolution}.grid"));
            let f = std::fs::File::create(&path)?;
            fieldest::field::write_grid(std::io::BufWriter::new(f), &grid, &values)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn sibling_dir(config: &std::path::Path, name: &str) -> PathBuf {
    config
        .parent()
        .map(|p| p.join(name))
        .unwrap_or_else(|| PathBuf::from(name))
}
