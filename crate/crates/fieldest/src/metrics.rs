//! Post-hoc metric computation: rebuilding a report from a run's logs and
//! comparing runs of different algorithms on the same scenario.

use nalgebra::DVector;
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::estimators::Algorithm;
use crate::field;
use crate::logs;
use crate::sim::{self, RunRecord};

/// Metrics recomputed from a run directory's logs.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub algorithm: Algorithm,
    pub per_agent_final_err: Vec<f64>,
    /// `(t, mean over agents of the error norm)`; empty without truth.
    pub avg_err_trace: Vec<(f64, f64)>,
    pub integral_error: f64,
    pub achieved_t: Option<f64>,
    pub max_param_error: Option<f64>,
    pub final_estimates: Vec<(usize, DVector<f64>)>,
    pub assembled_estimate: DVector<f64>,
    /// Ultimate-bound radii and satisfaction per agent, as emitted by the
    /// run (empty when no bound applies).
    pub bounds: Vec<BoundSummary>,
}

/// One emitted bound line: `(agent, radius, final error, satisfied)`.
#[derive(Debug, Clone)]
pub struct BoundSummary {
    pub agent: usize,
    pub radius: f64,
    pub final_error: f64,
    pub satisfied: bool,
}

/// Recomputes the report for a run directory from `estimates.csv`,
/// `error_summary.csv`, and the resolved configuration stored next to them.
pub fn recompute(dir: &Path) -> Result<MetricsReport> {
    let cfg_path = dir.join(logs::RESOLVED_CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path)
        .map_err(|e| Error::Logs(format!("{}: {e}", cfg_path.display())))?;
    let cfg = ConfigFile::parse(&text)?;
    let scn = cfg.to_scenario()?;
    let prep = sim::prepare(&scn)?;
    let p = prep.estimator_basis.len();

    let est_rows = logs::read_estimates(dir)?;
    if est_rows.is_empty() {
        return Err(Error::Logs("estimates log is empty".into()));
    }
    let t_final = est_rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    // final estimate per agent, keyed by global parameter index
    let mut finals: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for &(t, agent, idx, val) in &est_rows {
        if t == t_final {
            finals.entry(agent).or_default().insert(idx, val);
        }
    }

    let mut final_estimates = Vec::new();
    for (agent, vals) in &finals {
        let block = &prep.estimated[*agent];
        let mut v = DVector::zeros(block.len());
        for (slot, g) in block.iter().enumerate() {
            v[slot] = *vals.get(g).ok_or_else(|| {
                Error::Logs(format!("agent {agent}: estimate for parameter {g} missing"))
            })?;
        }
        final_estimates.push((*agent, v));
    }

    // assemble the network estimate the same way the engine does
    let mut assembled = DVector::zeros(p);
    match scn.algorithm {
        Algorithm::Single => assembled.copy_from(&final_estimates[0].1),
        Algorithm::S1 => {
            for (_, v) in &final_estimates {
                assembled += v;
            }
            assembled /= final_estimates.len() as f64;
        }
        Algorithm::S2 | Algorithm::S3 => {
            for (agent, v) in &final_estimates {
                for (slot, &g) in prep.estimated[*agent].iter().enumerate() {
                    assembled[g] = v[slot];
                }
            }
        }
    }

    let per_agent_final_err: Vec<f64> = match &prep.truth {
        Some(truth) => final_estimates
            .iter()
            .map(|(agent, v)| (v - &truth[*agent]).norm())
            .collect(),
        None => vec![f64::NAN; final_estimates.len()],
    };
    let max_param_error = prep
        .truth
        .is_some()
        .then(|| per_agent_final_err.iter().cloned().fold(0.0, f64::max));

    let err_rows = logs::read_error_summary(dir)?;
    let mut by_time: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<(u64, f64)> = Vec::new();
    for &(t, _, err, _, _, _) in &err_rows {
        let key = t.to_bits();
        if !by_time.contains_key(&key) {
            order.push((key, t));
        }
        by_time.entry(key).or_default().push(err);
    }
    let avg_err_trace: Vec<(f64, f64)> = if prep.truth.is_some() {
        order
            .iter()
            .map(|(key, t)| {
                let errs = &by_time[key];
                (*t, errs.iter().sum::<f64>() / errs.len() as f64)
            })
            .collect()
    } else {
        Vec::new()
    };

    // the achieved time and bound radii are facts of the run itself, read
    // back from the emitted summary
    let summary_text = read_summary(dir)?;
    let achieved_t = summary_achieved(&summary_text)?;
    let bounds = summary_bounds(&summary_text)?;

    let integral_error = field::integral_error(
        &scn.field,
        &prep.estimator_basis,
        &assembled,
        scn.grid_resolution,
    )?;

    Ok(MetricsReport {
        algorithm: scn.algorithm,
        per_agent_final_err,
        avg_err_trace,
        integral_error,
        achieved_t,
        max_param_error,
        final_estimates,
        assembled_estimate: assembled,
        bounds,
    })
}

fn read_summary(dir: &Path) -> Result<String> {
    let path = dir.join(logs::RUN_SUMMARY_FILE);
    std::fs::read_to_string(&path).map_err(|e| Error::Logs(format!("{}: {e}", path.display())))
}

fn summary_achieved(text: &str) -> Result<Option<f64>> {
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("achieved_t = ") {
            if rest.trim() == "nan" {
                return Ok(None);
            }
            return rest
                .trim()
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Logs(format!("bad achieved_t `{rest}`")));
        }
    }
    Ok(None)
}

fn summary_bounds(text: &str) -> Result<Vec<BoundSummary>> {
    let array = |key: &str| -> Option<Vec<String>> {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = [")))
            .map(|rest| {
                rest.trim_end_matches(']')
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
    };
    let (Some(agents), Some(radii), Some(errs), Some(sats)) = (
        array("agent"),
        array("radius"),
        array("final_error"),
        array("satisfied"),
    ) else {
        return Ok(Vec::new());
    };
    if agents.len() != radii.len() || agents.len() != errs.len() || agents.len() != sats.len() {
        return Err(Error::Logs("bound arrays have mismatched lengths".into()));
    }
    let mut out = Vec::with_capacity(agents.len());
    for i in 0..agents.len() {
        out.push(BoundSummary {
            agent: agents[i]
                .parse()
                .map_err(|_| Error::Logs(format!("bad bound agent `{}`", agents[i])))?,
            radius: radii[i]
                .parse()
                .map_err(|_| Error::Logs(format!("bad bound radius `{}`", radii[i])))?,
            final_error: errs[i]
                .parse()
                .map_err(|_| Error::Logs(format!("bad bound error `{}`", errs[i])))?,
            satisfied: sats[i]
                .parse()
                .map_err(|_| Error::Logs(format!("bad bound flag `{}`", sats[i])))?,
        });
    }
    Ok(out)
}

/// Headline numbers of one run, the unit of comparison across algorithms.
#[derive(Debug, Clone)]
pub struct RunDigest {
    pub algorithm: Algorithm,
    pub p: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Largest single-parameter error ("maximum parameter estimation
    /// error"); the comparison metric when the truth is known.
    pub max_component_error: Option<f64>,
    pub integral_error: f64,
}

impl RunDigest {
    pub fn from_record(record: &RunRecord) -> Self {
        RunDigest {
            algorithm: record.algorithm,
            p: record.p,
            sigma: record.sigma,
            seed: record.seed,
            max_component_error: record.max_component_error,
            integral_error: record.integral_error,
        }
    }
}

/// One pairwise comparison line of a [`CompareReport`].
#[derive(Debug, Clone)]
pub struct ComparePair {
    pub better: Algorithm,
    pub worse: Algorithm,
    pub better_value: f64,
    pub worse_value: f64,
    pub holds: bool,
}

/// Pairwise algorithm comparison on a shared scenario, with a pass/fail per
/// expected-ordering pair. The expected quality ordering (best to worst) is
/// full-vector, cross-estimation, decentralized partial-vector.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub metric: &'static str,
    pub pairs: Vec<ComparePair>,
    pub ordering_ok: bool,
    pub all_ties: bool,
}

fn rank(a: Algorithm) -> usize {
    match a {
        Algorithm::Single | Algorithm::S1 => 0,
        Algorithm::S3 => 1,
        Algorithm::S2 => 2,
    }
}

pub fn compare_report(digests: &[RunDigest]) -> Result<CompareReport> {
    if digests.len() < 2 {
        return Err(Error::invalid("need at least two runs to compare"));
    }
    let first = &digests[0];
    for d in digests.iter().skip(1) {
        if d.p != first.p || d.sigma != first.sigma || d.seed != first.seed {
            return Err(Error::invalid(format!(
                "runs are not comparable: ({}, p={}, sigma={}, seed={}) vs ({}, p={}, sigma={}, seed={})",
                first.algorithm.id(), first.p, first.sigma, first.seed,
                d.algorithm.id(), d.p, d.sigma, d.seed,
            )));
        }
    }
    let use_param_error = digests.iter().all(|d| d.max_component_error.is_some());
    let metric = if use_param_error {
        "max_param_error"
    } else {
        "integral_error"
    };
    let value = |d: &RunDigest| -> f64 {
        if use_param_error {
            d.max_component_error.expect("checked above")
        } else {
            d.integral_error
        }
    };

    let mut sorted: Vec<&RunDigest> = digests.iter().collect();
    sorted.sort_by_key(|d| rank(d.algorithm));
    let mut pairs = Vec::new();
    let mut ordering_ok = true;
    let mut all_ties = true;
    for i in 0..sorted.len() {
        for j in (i + 1)..sorted.len() {
            let (a, b) = (sorted[i], sorted[j]);
            if rank(a.algorithm) == rank(b.algorithm) {
                continue;
            }
            let (va, vb) = (value(a), value(b));
            let holds = va <= vb;
            ordering_ok &= holds;
            all_ties &= va == vb;
            pairs.push(ComparePair {
                better: a.algorithm,
                worse: b.algorithm,
                better_value: va,
                worse_value: vb,
                holds,
            });
        }
    }
    Ok(CompareReport {
        metric,
        pairs,
        ordering_ok,
        all_ties,
    })
}

impl CompareReport {
    /// Human-readable pairwise lines, one per comparison.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&format!(
                "{} {} {:.6} vs {} {:.6}  [{}]\n",
                self.metric,
                p.better.id(),
                p.better_value,
                p.worse.id(),
                p.worse_value,
                if p.holds { "ok" } else { "VIOLATED" },
            ));
        }
        out.push_str(&format!(
            "expected ordering: {}\n",
            if self.all_ties {
                "all ties"
            } else if self.ordering_ok {
                "holds"
            } else {
                "VIOLATED"
            }
        ));
        out
    }
}
