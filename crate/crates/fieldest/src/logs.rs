//! Plain-text run artifacts: streaming CSV logs, the partition export, the
//! sweep summary, and the end-of-run summary. Formatting is fixed so that
//! identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::partition::PartitionGraph;
use crate::sim::{RunRecord, SweepRow};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const ERROR_SUMMARY_FILE: &str = "error_summary.csv";
pub const PARTITION_FILE: &str = "partition.csv";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.grid";
pub const RUN_SUMMARY_FILE: &str = "run_summary.toml";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// Open log streams for one run.
pub struct RunWriters {
    trajectory: BufWriter<File>,
    estimates: BufWriter<File>,
    errors: BufWriter<File>,
}

impl RunWriters {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut trajectory = BufWriter::new(File::create(dir.join(TRAJECTORY_FILE))?);
        let mut estimates = BufWriter::new(File::create(dir.join(ESTIMATES_FILE))?);
        let mut errors = BufWriter::new(File::create(dir.join(ERROR_SUMMARY_FILE))?);
        writeln!(trajectory, "t,agent_id,x,y,target_index")?;
        writeln!(estimates, "t,agent_id,param_index_global,a_hat")?;
        writeln!(errors, "t,agent_id,err_norm,V,consensus_disagreement,min_eig_block")?;
        Ok(RunWriters {
            trajectory,
            estimates,
            errors,
        })
    }

    pub fn trajectory_row(&mut self, t: f64, agent: usize, x: f64, y: f64, target: i64) -> Result<()> {
        writeln!(self.trajectory, "{t},{agent},{x},{y},{target}")?;
        Ok(())
    }

    pub fn estimate_row(&mut self, t: f64, agent: usize, index: usize, value: f64) -> Result<()> {
        writeln!(self.estimates, "{t},{agent},{index},{value}")?;
        Ok(())
    }

    pub fn error_row(
        &mut self,
        t: f64,
        agent: usize,
        err_norm: f64,
        v: f64,
        disagreement: f64,
        min_eig: f64,
    ) -> Result<()> {
        writeln!(self.errors, "{t},{agent},{err_norm},{v},{disagreement},{min_eig}")?;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let RunWriters {
            mut trajectory,
            mut estimates,
            mut errors,
        } = self;
        trajectory.flush()?;
        estimates.flush()?;
        errors.flush()?;
        Ok(())
    }
}

/// Cell polygons as `(agent_id, vertex_index, x, y)` rows for plotting.
pub fn write_partition_csv(dir: &Path, graph: &PartitionGraph) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(PARTITION_FILE))?);
    writeln!(w, "agent_id,vertex_index,x,y")?;
    for (i, cell) in graph.cells.iter().enumerate() {
        for (k, v) in cell.vertices().iter().enumerate() {
            writeln!(w, "{i},{k},{},{}", v.x, v.y)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_summary(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(SWEEP_SUMMARY_FILE))?);
    writeln!(w, "algorithm,p,sigma,T_seconds,integral_error,max_param_error")?;
    for r in rows {
        let t = r.achieved_t.map(|v| v.to_string()).unwrap_or_else(|| "NaN".into());
        let ie = r
            .integral_error
            .map(|v| v.to_string())
            .unwrap_or_else(|| "NaN".into());
        let mx = r
            .max_param_error
            .map(|v| v.to_string())
            .unwrap_or_else(|| "NaN".into());
        writeln!(w, "{},{},{},{},{},{}", r.algorithm.id(), r.p, r.sigma, t, ie, mx)?;
    }
    w.flush()?;
    Ok(())
}

/// End-of-run facts: excitation times, final metrics, bound checks, and the
/// partition actually used. Wall-clock time is deliberately left out so the
/// whole output directory is reproducible byte-for-byte.
pub fn write_run_summary(dir: &Path, record: &RunRecord) -> Result<()> {
    let mut s = String::new();
    s.push_str("[summary]\n");
    s.push_str(&format!("algorithm = \"{}\"\n", record.algorithm.id()));
    s.push_str(&format!("p = {}\n", record.p));
    s.push_str(&format!("sigma = {}\n", toml_f64(record.sigma)));
    s.push_str(&format!("seed = {}\n", record.seed));
    s.push_str(&format!("n_agents = {}\n", record.n_agents));
    s.push_str(&format!("dt = {}\n", toml_f64(record.dt)));
    s.push_str(&format!("final_time = {}\n", toml_f64(record.final_time)));
    match record.achieved_t {
        Some(t) => s.push_str(&format!("achieved_t = {}\n", toml_f64(t))),
        None => s.push_str("achieved_t = nan\n"),
    }
    s.push_str(&format!("integral_error = {}\n", toml_f64(record.integral_error)));
    match record.max_param_error {
        Some(v) => s.push_str(&format!("max_param_error = {}\n", toml_f64(v))),
        None => s.push_str("max_param_error = nan\n"),
    }
    match record.max_component_error {
        Some(v) => s.push_str(&format!("max_component_error = {}\n", toml_f64(v))),
        None => s.push_str("max_component_error = nan\n"),
    }
    s.push_str(&format!(
        "consensus_disagreement = {}\n",
        toml_f64(record.consensus_disagreement)
    ));
    s.push_str(&format!("truth_available = {}\n", record.truth_available));
    s.push_str(&format!("lloyd_converged = {}\n", record.lloyd_converged));
    s.push_str(&format!("clamped_centres = {}\n", record.clamped_centres));
    s.push_str(&format!("empty_block_agents = {:?}\n", record.empty_block_agents));

    s.push_str("\n[agents]\n");
    let achieved: Vec<String> = record
        .per_agent_achieved
        .iter()
        .map(|t| t.map(toml_f64).unwrap_or_else(|| "nan".into()))
        .collect();
    s.push_str(&format!("achieved_t = [{}]\n", achieved.join(", ")));
    let errs: Vec<String> = record.final_per_agent_err.iter().map(|e| toml_f64(*e)).collect();
    s.push_str(&format!("final_err = [{}]\n", errs.join(", ")));
    let blocks: Vec<String> = record
        .blocks
        .iter()
        .map(|b| format!("{:?}", b))
        .collect();
    s.push_str(&format!("blocks = [{}]\n", blocks.join(", ")));
    let pos: Vec<String> = record
        .partition_positions
        .iter()
        .map(|p| format!("[{}, {}]", toml_f64(p.x), toml_f64(p.y)))
        .collect();
    s.push_str(&format!("partition_positions = [{}]\n", pos.join(", ")));

    if !record.bounds.is_empty() {
        s.push_str("\n[bounds]\n");
        let agents: Vec<String> = record.bounds.iter().map(|b| b.agent.to_string()).collect();
        s.push_str(&format!("agent = [{}]\n", agents.join(", ")));
        let radii: Vec<String> = record.bounds.iter().map(|b| toml_f64(b.radius)).collect();
        s.push_str(&format!("radius = [{}]\n", radii.join(", ")));
        let ferr: Vec<String> = record.bounds.iter().map(|b| toml_f64(b.final_error)).collect();
        s.push_str(&format!("final_error = [{}]\n", ferr.join(", ")));
        let sat: Vec<String> = record.bounds.iter().map(|b| b.satisfied.to_string()).collect();
        s.push_str(&format!("satisfied = [{}]\n", sat.join(", ")));
        let eta: Vec<String> = record.bounds.iter().map(|b| toml_f64(b.eta)).collect();
        s.push_str(&format!("eta = [{}]\n", eta.join(", ")));
        let delta: Vec<String> = record.bounds.iter().map(|b| toml_f64(b.delta)).collect();
        s.push_str(&format!("delta = [{}]\n", delta.join(", ")));
    }

    std::fs::write(dir.join(RUN_SUMMARY_FILE), s)?;
    Ok(())
}

/// TOML-compatible float text: always carries a decimal point or exponent so
/// it parses back as a float.
fn toml_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") {
        s
    } else {
        format!("{s}.0")
    }
}

/// A parsed estimates log: rows `(t, agent, global index, value)`.
pub fn read_estimates(dir: &Path) -> Result<Vec<(f64, usize, usize, f64)>> {
    let path = dir.join(ESTIMATES_FILE);
    let reader = BufReader::new(
        File::open(&path).map_err(|e| Error::Logs(format!("{}: {e}", path.display())))?,
    );
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Logs(format!("estimates row {lineno}: bad field count")));
        }
        rows.push((
            parse_f64(f[0], lineno)?,
            parse_usize(f[1], lineno)?,
            parse_usize(f[2], lineno)?,
            parse_f64(f[3], lineno)?,
        ));
    }
    Ok(rows)
}

/// A parsed error-summary log: rows
/// `(t, agent, err_norm, V, disagreement, min_eig)`.
pub fn read_error_summary(dir: &Path) -> Result<Vec<(f64, usize, f64, f64, f64, f64)>> {
    let path = dir.join(ERROR_SUMMARY_FILE);
    let reader = BufReader::new(
        File::open(&path).map_err(|e| Error::Logs(format!("{}: {e}", path.display())))?,
    );
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Logs(format!("error-summary row {lineno}: bad field count")));
        }
        rows.push((
            parse_f64(f[0], lineno)?,
            parse_usize(f[1], lineno)?,
            parse_f64(f[2], lineno)?,
            parse_f64(f[3], lineno)?,
            parse_f64(f[4], lineno)?,
            parse_f64(f[5], lineno)?,
        ));
    }
    Ok(rows)
}

fn parse_f64(s: &str, lineno: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Logs(format!("row {lineno}: bad float `{s}`")))
}

fn parse_usize(s: &str, lineno: usize) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Logs(format!("row {lineno}: bad index `{s}`")))
}
