//! The adaptive estimation laws.
//!
//! Every agent carries filter states `Lambda` (integral of kernel outer
//! products) and `lambda` (integral of kernel-weighted measurements) plus
//! its parameter estimate, and integrates
//!
//! ```text
//! Lambda'  = s K K^T
//! lambda'  = s K (phi - compensation)
//! a_hat'   = -Gamma (Lambda a_hat - lambda) - Gamma zeta sum_j l_ij (a_hat - a_hat_j)
//! ```
//!
//! where the consensus term exists only for the full-vector network law and
//! the compensation only for the cross-estimation law. The switching signal
//! `s` freezes the partial-vector filters once block excitation is achieved.
//! Neighbour quantities are read from an immutable previous-tick snapshot,
//! so per-tick agent updates are order-independent.

use nalgebra::{DMatrix, DVector};
use std::ops::AddAssign;

use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::geometry::Point;
use crate::rbf::KernelBasis;

/// Which estimation law a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// One sensor estimating the full parameter vector.
    Single,
    /// Full-vector estimates on every sensor, Laplacian consensus coupling.
    S1,
    /// Decentralized partial-vector estimates, no communication.
    S2,
    /// Partial-vector estimates plus directed-consensus cross-estimates that
    /// compensate foreign-kernel contributions.
    S3,
}

impl Algorithm {
    pub fn estimates_full_vector(&self) -> bool {
        matches!(self, Algorithm::Single | Algorithm::S1)
    }

    pub fn uses_switching(&self) -> bool {
        matches!(self, Algorithm::S2 | Algorithm::S3)
    }

    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::Single => "single",
            Algorithm::S1 => "s1",
            Algorithm::S2 => "s2",
            Algorithm::S3 => "s3",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "single" => Ok(Algorithm::Single),
            "s1" => Ok(Algorithm::S1),
            "s2" => Ok(Algorithm::S2),
            "s3" => Ok(Algorithm::S3),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Filter and estimate states of one agent. `m` is the estimated dimension:
/// the full parameter count for `Single`/`S1`, the own-block size for
/// `S2`/`S3`. `cross[slot]` holds the estimate of another agent's block for
/// the cross-estimation law.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub lambda_mat: DMatrix<f64>,
    pub lambda_vec: DVector<f64>,
    pub a_hat: DVector<f64>,
    pub cross: Vec<DVector<f64>>,
    pub s_active: bool,
    pub frozen_at: Option<f64>,
}

impl EstimatorState {
    pub fn new(m: usize, cross_dims: &[usize]) -> Self {
        EstimatorState {
            lambda_mat: DMatrix::zeros(m, m),
            lambda_vec: DVector::zeros(m),
            a_hat: DVector::zeros(m),
            cross: cross_dims.iter().map(|&d| DVector::zeros(d)).collect(),
            s_active: true,
            frozen_at: None,
        }
    }
}

/// Joint per-agent integration state: position plus estimator states. The
/// RK4 stepper treats this as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub position: Point,
    pub est: EstimatorState,
}

impl AgentState {
    pub fn zeros_like(other: &Self) -> Self {
        AgentState {
            position: Point::zeros(),
            est: EstimatorState {
                lambda_mat: DMatrix::zeros(
                    other.est.lambda_mat.nrows(),
                    other.est.lambda_mat.ncols(),
                ),
                lambda_vec: DVector::zeros(other.est.lambda_vec.len()),
                a_hat: DVector::zeros(other.est.a_hat.len()),
                cross: other
                    .est
                    .cross
                    .iter()
                    .map(|c| DVector::zeros(c.len()))
                    .collect(),
                s_active: other.est.s_active,
                frozen_at: other.est.frozen_at,
            },
        }
    }

    /// `self += c * other` over all continuous state (positions, filters,
    /// estimates, cross-estimates).
    pub fn scaled_add(&mut self, c: f64, other: &Self) {
        self.position += other.position * c;
        self.est
            .lambda_mat
            .zip_apply(&other.est.lambda_mat, |a, b| *a += c * b);
        self.est.lambda_vec.axpy(c, &other.est.lambda_vec, 1.0);
        self.est.a_hat.axpy(c, &other.est.a_hat, 1.0);
        for (a, b) in self.est.cross.iter_mut().zip(&other.est.cross) {
            a.axpy(c, b, 1.0);
        }
    }

    pub fn clone_from_state(&mut self, other: &Self) {
        self.position = other.position;
        self.est.lambda_mat.copy_from(&other.est.lambda_mat);
        self.est.lambda_vec.copy_from(&other.est.lambda_vec);
        self.est.a_hat.copy_from(&other.est.a_hat);
        for (a, b) in self.est.cross.iter_mut().zip(&other.est.cross) {
            a.copy_from(b);
        }
    }
}

/// Everything that stays fixed while one agent integrates across one tick:
/// the bases, gains, graph couplings, the current waypoint, and immutable
/// snapshots of the neighbours' estimates from the previous tick.
pub struct AgentDynamics<'a> {
    pub algorithm: Algorithm,
    pub basis: &'a KernelBasis,
    pub field: &'a FieldModel,
    /// Additive measurement disturbance for this tick (0 when noise-free).
    pub measurement_bias: f64,
    /// Global centre indices this agent estimates (all of them for
    /// full-vector laws).
    pub block: &'a [usize],
    /// Flattened global indices of foreign centres, aligned with the
    /// concatenated cross-estimate vector (cross-estimation law only).
    pub foreign: &'a [(usize, usize, usize)], // (global idx, cross slot, index within slot)
    /// Diagonal of the adaptation gain, length `m`.
    pub gamma: &'a DVector<f64>,
    pub zeta: f64,
    /// `(neighbour agent, edge weight)` pairs for the consensus term.
    pub neighbors: &'a [(usize, f64)],
    /// Previous-tick estimates of all agents (full-vector law).
    pub estimate_snapshot: &'a [DVector<f64>],
    /// Previous-tick value of the parent node in each root's outbranching,
    /// aligned with this agent's cross slots; weight is the directed edge
    /// weight (cross-estimation law).
    pub parent_values: &'a [DVector<f64>],
    pub directed_weight: f64,
    pub s: f64,
    pub control_gain: f64,
    pub waypoint: Point,
}

/// Scratch buffers reused across ticks to keep the integrator allocation
/// free in the hot loop.
pub struct AgentScratch {
    k_full: DVector<f64>,
    k_active: DVector<f64>,
    grad: DVector<f64>,
    k1: AgentState,
    k2: AgentState,
    k3: AgentState,
    k4: AgentState,
    tmp: AgentState,
}

impl AgentScratch {
    pub fn new(template: &AgentState, p: usize) -> Self {
        let m = template.est.a_hat.len();
        AgentScratch {
            k_full: DVector::zeros(p),
            k_active: DVector::zeros(m),
            grad: DVector::zeros(m),
            k1: AgentState::zeros_like(template),
            k2: AgentState::zeros_like(template),
            k3: AgentState::zeros_like(template),
            k4: AgentState::zeros_like(template),
            tmp: AgentState::zeros_like(template),
        }
    }
}

/// Time derivative of the joint agent state under `dynamics`, written into
/// `out`.
pub fn derivative(
    dynamics: &AgentDynamics<'_>,
    state: &AgentState,
    scratch_k_full: &mut DVector<f64>,
    scratch_k_active: &mut DVector<f64>,
    scratch_grad: &mut DVector<f64>,
    out: &mut AgentState,
) {
    // motion: u = -k (x - x_g)
    out.position = -(state.position - dynamics.waypoint) * dynamics.control_gain;

    dynamics
        .basis
        .kernel_vector_into(&[state.position.x, state.position.y], scratch_k_full);
    for (slot, &g) in dynamics.block.iter().enumerate() {
        scratch_k_active[slot] = scratch_k_full[g];
    }
    let phi = dynamics.field.value(&state.position) + dynamics.measurement_bias;

    // cross-estimation compensation: subtract the estimated foreign content
    let compensation = if dynamics.algorithm == Algorithm::S3 {
        let mut acc = 0.0;
        for &(g, slot, within) in dynamics.foreign {
            acc += scratch_k_full[g] * state.est.cross[slot][within];
        }
        acc
    } else {
        0.0
    };

    let s = dynamics.s;
    out.est
        .lambda_mat
        .ger(s, scratch_k_active, scratch_k_active, 0.0);
    out.est.lambda_vec.copy_from(scratch_k_active);
    out.est.lambda_vec *= s * (phi - compensation);

    // a_hat' = -gamma .* (Lambda a_hat - lambda + zeta * consensus)
    scratch_grad.gemv(1.0, &state.est.lambda_mat, &state.est.a_hat, 0.0);
    *scratch_grad -= &state.est.lambda_vec;
    if dynamics.algorithm == Algorithm::S1 {
        for &(j, w) in dynamics.neighbors {
            let nb = &dynamics.estimate_snapshot[j];
            scratch_grad.zip_zip_apply(&state.est.a_hat, nb, |g, own, other| {
                *g += dynamics.zeta * w * (own - other)
            });
        }
    }
    out.est.a_hat.zip_zip_apply(scratch_grad, dynamics.gamma, |o, g, gam| *o = -gam * g);

    // directed consensus on the cross-estimates toward each root's estimate
    if dynamics.algorithm == Algorithm::S3 {
        for (slot, parent) in dynamics.parent_values.iter().enumerate() {
            let own = &state.est.cross[slot];
            let dst = &mut out.est.cross[slot];
            dst.zip_zip_apply(own, parent, |d, o, p| {
                *d = -dynamics.directed_weight * (o - p)
            });
        }
    }
}

/// Advances one agent by one RK4 step of size `dt`, using previous-tick
/// snapshots for all neighbour couplings.
pub fn rk4_step(dynamics: &AgentDynamics<'_>, state: &mut AgentState, dt: f64, w: &mut AgentScratch) {
    let AgentScratch {
        k_full,
        k_active,
        grad,
        k1,
        k2,
        k3,
        k4,
        tmp,
    } = w;
    derivative(dynamics, state, k_full, k_active, grad, k1);
    tmp.clone_from_state(state);
    tmp.scaled_add(dt / 2.0, k1);
    derivative(dynamics, tmp, k_full, k_active, grad, k2);
    tmp.clone_from_state(state);
    tmp.scaled_add(dt / 2.0, k2);
    derivative(dynamics, tmp, k_full, k_active, grad, k3);
    tmp.clone_from_state(state);
    tmp.scaled_add(dt, k3);
    derivative(dynamics, tmp, k_full, k_active, grad, k4);
    state.scaled_add(dt / 6.0, k1);
    state.scaled_add(dt / 3.0, k2);
    state.scaled_add(dt / 3.0, k3);
    state.scaled_add(dt / 6.0, k4);
}

/// The candidate Lyapunov value `V = 1/2 sum_i e_i^T Gamma^-1 e_i` over the
/// per-agent estimation errors; a diagnostic that needs the true parameters.
pub fn lyapunov_value(errors: &[DVector<f64>], gammas: &[DVector<f64>]) -> f64 {
    let mut v = 0.0;
    for (e, g) in errors.iter().zip(gammas) {
        for k in 0..e.len() {
            v += 0.5 * e[k] * e[k] / g[k];
        }
    }
    v
}

/// Gaussian kernel Lipschitz constant: the largest gradient magnitude of
/// `exp(-d^2 / (2 sigma^2))`, attained at `d = sigma`.
pub fn kernel_lipschitz(sigma: f64) -> f64 {
    (-0.5f64).exp() / sigma
}

/// Distance between agent `i`'s centres and everyone else's, minimized over
/// pairs (brute force).
pub fn block_separation(basis: &KernelBasis, blocks: &[Vec<usize>], i: usize) -> Option<f64> {
    let own = &blocks[i];
    if own.is_empty() || own.len() == basis.len() {
        return None;
    }
    let mut best = f64::INFINITY;
    for &a in own {
        for k in 0..basis.len() {
            if own.contains(&k) {
                continue;
            }
            let d = (basis.centre(a) - basis.centre(k)).norm();
            best = best.min(d);
        }
    }
    Some(best)
}

/// Largest possible foreign-kernel value seen by an agent whose centres are
/// at least `distance` away from everyone else's:
/// `max_j exp(-distance^2 / (2 sigma_j^2))`.
pub fn foreign_kernel_bound(distance: f64, widths: &[f64]) -> f64 {
    widths
        .iter()
        .map(|&s| (-distance * distance / (2.0 * s * s)).exp())
        .fold(0.0, f64::max)
}

/// An ultimate-bound radius together with its constituents, so reports can
/// show how the bound was assembled.
#[derive(Debug, Clone)]
pub struct ErrorBound {
    pub radius: f64,
    pub excitation_time: f64,
    pub p: usize,
    pub delta: f64,
    pub a_max: f64,
    pub alpha: f64,
    pub eta: f64,
    pub lipschitz: f64,
    pub epsilon_c: f64,
}

impl ErrorBound {
    fn validate(self) -> Result<Self> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::invalid(format!(
                "bound radius must be positive, got {}",
                self.radius
            )));
        }
        Ok(self)
    }
}

/// Ultimate bound for the decentralized partial-vector law with exact
/// centres: `r = T p delta a_max / (alpha eta)`.
pub fn partial_vector_bound(
    excitation_time: f64,
    p: usize,
    delta: f64,
    a_max: f64,
    alpha: f64,
    eta: f64,
) -> Result<ErrorBound> {
    ErrorBound {
        radius: excitation_time * p as f64 * delta * a_max / (alpha * eta),
        excitation_time,
        p,
        delta,
        a_max,
        alpha,
        eta,
        lipschitz: 0.0,
        epsilon_c: 0.0,
    }
    .validate()
}

/// Partial-vector bound with centres known only to accuracy `epsilon_c`:
/// `r = T p a_max (sqrt(p) k eps_c + delta) / (alpha eta)`.
pub fn partial_vector_perturbed_bound(
    excitation_time: f64,
    p: usize,
    delta: f64,
    a_max: f64,
    alpha: f64,
    eta: f64,
    lipschitz: f64,
    epsilon_c: f64,
) -> Result<ErrorBound> {
    let pf = p as f64;
    ErrorBound {
        radius: excitation_time * pf * a_max * (pf.sqrt() * lipschitz * epsilon_c + delta)
            / (alpha * eta),
        excitation_time,
        p,
        delta,
        a_max,
        alpha,
        eta,
        lipschitz,
        epsilon_c,
    }
    .validate()
}

/// Full-vector bound with perturbed centres:
/// `r = T p sqrt(p) k eps_c a_max / (alpha eta_min)` where `eta_min` is the
/// smallest eigenvalue of the stacked filter-plus-consensus matrix.
pub fn full_vector_perturbed_bound(
    excitation_time: f64,
    p: usize,
    a_max: f64,
    alpha: f64,
    eta_min: f64,
    lipschitz: f64,
    epsilon_c: f64,
) -> Result<ErrorBound> {
    let pf = p as f64;
    ErrorBound {
        radius: excitation_time * pf * pf.sqrt() * lipschitz * epsilon_c * a_max
            / (alpha * eta_min),
        excitation_time,
        p,
        delta: 0.0,
        a_max,
        alpha,
        eta: eta_min,
        lipschitz,
        epsilon_c,
    }
    .validate()
}

/// Smallest eigenvalue of the stacked matrix `blkdiag(Lambda_i) +
/// zeta (L kron I_p)` that controls the full-vector network law after the
/// excitation time.
pub fn stacked_excitation_min_eig(
    lambdas_at_t: &[DMatrix<f64>],
    laplacian: &DMatrix<f64>,
    zeta: f64,
) -> f64 {
    let p = lambdas_at_t[0].nrows();
    let mut m = laplacian.kronecker(&DMatrix::identity(p, p)) * zeta;
    for (i, lam) in lambdas_at_t.iter().enumerate() {
        m.view_mut((i * p, i * p), (p, p)).add_assign(lam);
    }
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
