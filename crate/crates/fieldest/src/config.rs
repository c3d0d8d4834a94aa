//! Scenario configuration files: flat TOML with sections, every key
//! defaulted, unknown keys rejected (they are almost always typos in gain
//! names). `load` parses and resolves a file into a validated
//! [`SimScenario`]; `resolved_toml` prints the effective configuration with
//! all defaults filled in.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimators::Algorithm;
use crate::field::{AnalyticFormula, FieldModel};
use crate::geometry::{Point, Rect};
use crate::rbf::KernelBasis;
use crate::sim::{
    BasisSource, GammaSpec, PartitionSeeding, PositionSpec, SimScenario, StopRule, TourMode,
    UnknownCentres,
};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub field: FieldSection,
    pub basis: BasisSection,
    pub agents: AgentsSection,
    pub algorithm: AlgorithmSection,
    pub motion: MotionSection,
    pub excitation: ExcitationSection,
    pub unknown_centres: UnknownCentresSection,
    pub sim: SimSection,
    pub output: OutputSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    /// "exact" (kernel combination with known coefficients) or "analytic".
    pub kind: String,
    /// Analytic formula id: "gaussian-bumps" or "uniform".
    pub formula: String,
    /// Kernel centres of an exact field, `[[x, y], ...]`.
    pub centres: Vec<[f64; 2]>,
    /// Common kernel width of an exact field (standard deviation).
    pub sigma: f64,
    /// Per-kernel widths; overrides `sigma` when nonempty.
    pub sigmas: Vec<f64>,
    /// True coefficients of an exact field.
    pub coefficients: Vec<f64>,
    /// Declared parameter bound for analytic fields (exact fields derive it
    /// from the coefficients).
    pub a_max: f64,
    /// Domain box `[x0, y0, x1, y1]`.
    pub domain: [f64; 4],
    /// Standard deviation of additive measurement noise (0 = noise-free,
    /// matching the convergence analysis).
    pub noise_sigma: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            kind: "exact".into(),
            formula: "gaussian-bumps".into(),
            centres: Vec::new(),
            sigma: 0.1,
            sigmas: Vec::new(),
            coefficients: Vec::new(),
            a_max: 3.0,
            domain: [0.0, 0.0, 1.0, 1.0],
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    /// "field" (estimate in the field's own basis) or "grid".
    pub source: String,
    /// Kernel count of a grid basis; must be a perfect square.
    pub p: usize,
    /// Common width of a grid basis.
    pub sigma: f64,
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection {
            source: "field".into(),
            p: 100,
            sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsSection {
    pub count: usize,
    /// "random" or explicit `[[x, y], ...]`.
    pub positions: PositionsValue,
    /// "initial" or "lloyd" (uniform-coverage pre-run seeds the partition).
    pub partition: String,
    pub lloyd_max_iters: usize,
}

impl Default for AgentsSection {
    fn default() -> Self {
        AgentsSection {
            count: 4,
            positions: PositionsValue::Named("random".into()),
            partition: "initial".into(),
            lloyd_max_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PositionsValue {
    Named(String),
    Explicit(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmSection {
    /// "single", "s1", "s2", or "s3".
    pub kind: String,
    /// Scalar adaptation gain (Gamma = gamma * I).
    pub gamma: f64,
    /// Optional per-parameter diagonal; overrides `gamma` when nonempty.
    pub gamma_diag: Vec<f64>,
    /// Consensus gain (full-vector network law).
    pub zeta: f64,
    /// Weight on every partition-adjacency edge.
    pub edge_weight: f64,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        AlgorithmSection {
            kind: "s1".into(),
            gamma: 1.0,
            gamma_diag: Vec::new(),
            zeta: 1.0,
            edge_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionSection {
    /// Proportional tracking gain.
    pub gain: f64,
    /// Waypoint reach radius in the exact-centres tour mode.
    pub reach_radius: f64,
    /// "exact" or "neighbourhood".
    pub tour: String,
    /// Dominance level for the neighbourhood tour mode.
    pub epsilon: f64,
}

impl Default for MotionSection {
    fn default() -> Self {
        MotionSection {
            gain: 5.0,
            reach_radius: 0.01,
            tour: "exact".into(),
            epsilon: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationSection {
    /// Minimum eigenvalue at which block excitation counts as achieved.
    pub threshold: f64,
    /// Ticks between eigenvalue checks.
    pub check_interval: usize,
    /// Abort an excitation-gated run if nothing is achieved by this time.
    pub timeout: f64,
    /// Freeze the partial-vector filters at each agent's excitation time
    /// (the switching used in the stability proofs). With the default
    /// (continued integration) the filters keep improving and the estimates
    /// reach their steady-state accuracy; the ultimate bounds hold either
    /// way.
    pub freeze_filters: bool,
}

impl Default for ExcitationSection {
    fn default() -> Self {
        ExcitationSection {
            threshold: 1e-4,
            check_interval: 10,
            timeout: 60.0,
            freeze_filters: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnknownCentresSection {
    pub enabled: bool,
    /// Centre accuracy: each centre is displaced by a random offset of norm
    /// at most this value.
    pub epsilon_c: f64,
    /// Perturbation seed; 0 means "use sim.seed".
    pub seed: u64,
}

impl Default for UnknownCentresSection {
    fn default() -> Self {
        UnknownCentresSection {
            enabled: false,
            epsilon_c: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    /// Fixed run length, used when `run_after_excitation` is 0.
    pub duration: f64,
    /// When positive, run until excitation is achieved plus this long.
    pub run_after_excitation: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt: 1e-3,
            duration: 16.5,
            run_after_excitation: 0.0,
            seed: 42,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Node count per axis of the reconstruction grid and the integration
    /// resolution of the error metric.
    pub grid_resolution: usize,
    /// Ticks between trajectory/error log rows.
    pub log_interval: usize,
    /// Ticks between estimate log rows.
    pub estimate_log_interval: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            grid_resolution: 200,
            log_interval: 10,
            estimate_log_interval: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub algorithms: Vec<String>,
    pub p_values: Vec<usize>,
    pub sigmas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            algorithms: vec!["s1".into(), "s2".into(), "s3".into()],
            p_values: vec![100],
            sigmas: vec![0.05],
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The effective configuration with every default filled in.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolves the file into a validated scenario.
    pub fn to_scenario(&self) -> Result<SimScenario> {
        let domain = Rect::new(
            self.field.domain[0],
            self.field.domain[1],
            self.field.domain[2],
            self.field.domain[3],
        );
        if domain.width() <= 0.0 || domain.height() <= 0.0 {
            return Err(Error::Config("field.domain must have positive extent".into()));
        }

        let field = match self.field.kind.as_str() {
            "exact" => {
                if self.field.centres.is_empty() {
                    return Err(Error::Config(
                        "field.kind = \"exact\" needs field.centres".into(),
                    ));
                }
                let centres: Vec<Vec<f64>> =
                    self.field.centres.iter().map(|c| c.to_vec()).collect();
                let widths = if self.field.sigmas.is_empty() {
                    vec![self.field.sigma; centres.len()]
                } else {
                    self.field.sigmas.clone()
                };
                let basis = KernelBasis::new(centres, widths)
                    .map_err(|e| Error::Config(format!("field basis: {e}")))?;
                FieldModel::exact(basis, self.field.coefficients.clone(), domain)
                    .map_err(|e| Error::Config(format!("field: {e}")))?
            }
            "analytic" => {
                let formula = AnalyticFormula::from_id(&self.field.formula)?;
                FieldModel::analytic(formula, domain, self.field.a_max)
                    .map_err(|e| Error::Config(format!("field: {e}")))?
            }
            other => {
                return Err(Error::Config(format!(
                    "field.kind must be \"exact\" or \"analytic\", got `{other}`"
                )))
            }
        };

        let basis_source = match self.basis.source.as_str() {
            "field" => BasisSource::Field,
            "grid" => {
                let side = (self.basis.p as f64).sqrt().round() as usize;
                if side * side != self.basis.p {
                    return Err(Error::Config(format!(
                        "basis.p = {} is not a perfect square",
                        self.basis.p
                    )));
                }
                BasisSource::Grid {
                    side,
                    sigma: self.basis.sigma,
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "basis.source must be \"field\" or \"grid\", got `{other}`"
                )))
            }
        };

        let positions = match &self.agents.positions {
            PositionsValue::Named(name) if name == "random" => PositionSpec::Random,
            PositionsValue::Named(other) => {
                return Err(Error::Config(format!(
                    "agents.positions must be \"random\" or a list of points, got `{other}`"
                )))
            }
            PositionsValue::Explicit(pts) => {
                PositionSpec::Fixed(pts.iter().map(|p| Point::new(p[0], p[1])).collect())
            }
        };

        let partition_seeding = match self.agents.partition.as_str() {
            "initial" => PartitionSeeding::InitialPositions,
            "lloyd" => PartitionSeeding::LloydUniform {
                max_iters: self.agents.lloyd_max_iters,
            },
            other => {
                return Err(Error::Config(format!(
                    "agents.partition must be \"initial\" or \"lloyd\", got `{other}`"
                )))
            }
        };

        let tour_mode = match self.motion.tour.as_str() {
            "exact" => TourMode::ExactCentres {
                reach_radius: self.motion.reach_radius,
            },
            "neighbourhood" => TourMode::Neighbourhood {
                epsilon: self.motion.epsilon,
            },
            other => {
                return Err(Error::Config(format!(
                    "motion.tour must be \"exact\" or \"neighbourhood\", got `{other}`"
                )))
            }
        };

        let gamma = if self.algorithm.gamma_diag.is_empty() {
            GammaSpec::Scalar(self.algorithm.gamma)
        } else {
            GammaSpec::Diagonal(self.algorithm.gamma_diag.clone())
        };

        if self.field.noise_sigma < 0.0 {
            return Err(Error::Config("field.noise_sigma must be nonnegative".into()));
        }

        let stop = if self.sim.run_after_excitation > 0.0 {
            StopRule::AfterExcitation(self.sim.run_after_excitation)
        } else {
            StopRule::FixedDuration(self.sim.duration)
        };

        let unknown_centres = self.unknown_centres.enabled.then(|| UnknownCentres {
            epsilon_c: self.unknown_centres.epsilon_c,
            seed: if self.unknown_centres.seed == 0 {
                self.sim.seed
            } else {
                self.unknown_centres.seed
            },
        });

        let scenario = SimScenario {
            field,
            basis_source,
            n_agents: self.agents.count,
            algorithm: Algorithm::from_id(&self.algorithm.kind)?,
            control_gain: self.motion.gain,
            gamma,
            zeta: self.algorithm.zeta,
            edge_weight: self.algorithm.edge_weight,
            tour_mode,
            eta_threshold: self.excitation.threshold,
            check_interval: self.excitation.check_interval,
            excitation_timeout: self.excitation.timeout,
            freeze_filters: self.excitation.freeze_filters,
            unknown_centres,
            dt: self.sim.dt,
            stop,
            seed: self.sim.seed,
            positions,
            partition_seeding,
            noise_sigma: self.field.noise_sigma,
            threads: self.sim.threads.max(1),
            log_interval: self.output.log_interval,
            estimate_log_interval: self.output.estimate_log_interval,
            grid_resolution: self.output.grid_resolution,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// The reference four-agent scenario over the eight-kernel field.
    pub fn reference_example() -> Self {
        let (_, coeffs) = crate::rbf::reference_basis();
        let mut cfg = ConfigFile::default();
        cfg.field.centres = vec![
            [0.20, 0.25],
            [0.35, 0.26],
            [0.60, 0.18],
            [0.85, 0.30],
            [0.70, 0.75],
            [0.75, 0.90],
            [0.15, 0.75],
            [0.35, 0.60],
        ];
        cfg.field.coefficients = coeffs;
        cfg
    }
}
