//! Single-integrator motion: proportional waypoint tracking through cyclic
//! centre tours, excitation monitoring, and the uniform-coverage pre-run
//! used to seed partitions.
//!
//! The tracking law is `u = -k (x - x_g)`; the sign is chosen so the agent
//! converges to the waypoint.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{ConvexPolygon, Point, Rect};
use crate::partition::voronoi_cells;
use crate::rbf::KernelBasis;

/// One tour stop: a waypoint position and the global index of the centre it
/// targets.
#[derive(Debug, Clone, Copy)]
pub struct TourStop {
    pub target: Point,
    pub centre_index: usize,
}

/// Cyclic ordered waypoint list. Empty tours mean the agent idles at its
/// start position.
#[derive(Debug, Clone, Default)]
pub struct Tour {
    pub stops: Vec<TourStop>,
    pub current: usize,
}

impl Tour {
    pub fn is_empty(&self) -> bool {
        self.stops.is_empty()
    }

    pub fn current_stop(&self) -> Option<&TourStop> {
        self.stops.get(self.current)
    }

    pub fn advance(&mut self) {
        if !self.stops.is_empty() {
            self.current = (self.current + 1) % self.stops.len();
        }
    }
}

/// Orders the owned centres by the nearest-neighbour heuristic from `start`.
pub fn plan_tour(start: &Point, owned: &[(usize, Point)]) -> Tour {
    let mut remaining: Vec<(usize, Point)> = owned.to_vec();
    let mut stops = Vec::with_capacity(remaining.len());
    let mut cursor = *start;
    while !remaining.is_empty() {
        let (best, _) = remaining
            .iter()
            .enumerate()
            .map(|(slot, (_, p))| (slot, (p - cursor).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("remaining is nonempty");
        let (centre_index, target) = remaining.remove(best);
        cursor = target;
        stops.push(TourStop {
            target,
            centre_index,
        });
    }
    Tour { stops, current: 0 }
}

/// When a waypoint counts as reached: inside a Euclidean ball, or when the
/// kernel-space sufficient condition for the target's dominance set holds
/// (strictly stronger, used by the neighbourhood tour mode).
#[derive(Debug, Clone, Copy)]
pub enum ReachRule {
    Distance { radius: f64 },
    KernelSufficient { threshold: f64 },
}

/// Motion state of one agent: position, proportional gain, its tour, and
/// the reach rule that advances the tour.
#[derive(Debug, Clone)]
pub struct AgentMotion {
    pub position: Point,
    pub gain: f64,
    pub tour: Tour,
    pub reach: ReachRule,
    home: Point,
}

impl AgentMotion {
    pub fn new(position: Point, gain: f64, tour: Tour, reach: ReachRule) -> Self {
        AgentMotion {
            position,
            gain,
            tour,
            reach,
            home: position,
        }
    }

    /// Current waypoint; idle agents hold their start position.
    pub fn waypoint(&self) -> Point {
        self.tour
            .current_stop()
            .map(|s| s.target)
            .unwrap_or(self.home)
    }

    /// Advances the tour when the current waypoint is reached. Returns the
    /// index of the stop that was completed.
    pub fn advance_if_reached(&mut self, basis: Option<&KernelBasis>) -> Option<usize> {
        let stop = *self.tour.current_stop()?;
        if stop_reached(&self.position, &stop, &self.reach, basis) {
            let done = self.tour.current;
            self.tour.advance();
            Some(done)
        } else {
            None
        }
    }
}

/// Evaluates the reach rule for one stop. The kernel-space rule needs the
/// basis the tour targets.
pub fn stop_reached(
    position: &Point,
    stop: &TourStop,
    rule: &ReachRule,
    basis: Option<&KernelBasis>,
) -> bool {
    match rule {
        ReachRule::Distance { radius } => (position - stop.target).norm() < *radius,
        ReachRule::KernelSufficient { threshold } => {
            let basis = basis.expect("kernel reach rule needs the kernel basis");
            let kq = basis
                .kernel_vector(&[position.x, position.y])
                .expect("position is finite");
            let kc = basis
                .kernel_vector(basis.centre(stop.centre_index).as_slice())
                .expect("centre is finite");
            (kq - kc).amax() < *threshold
        }
    }
}

/// One classical RK4 step of the tracking dynamics; the simulation engine
/// integrates motion jointly with the filters, this standalone form backs
/// the unit tests.
pub fn proportional_step(position: &Point, target: &Point, gain: f64, dt: f64) -> Point {
    let f = |x: &Point| -(x - target) * gain;
    let k1 = f(position);
    let k2 = f(&(position + k1 * (dt / 2.0)));
    let k3 = f(&(position + k2 * (dt / 2.0)));
    let k4 = f(&(position + k3 * dt));
    position + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Running integral of kernel outer products with periodic minimum-eigenvalue
/// checks; records the first time the smallest eigenvalue reaches the
/// threshold. The accumulated matrix is symmetric PSD and nondecreasing in
/// the PSD order.
#[derive(Debug, Clone)]
pub struct ExcitationMonitor {
    matrix: DMatrix<f64>,
    threshold: f64,
    check_interval: usize,
    ticks: usize,
    achieved: Option<f64>,
    last_min_eig: f64,
}

impl ExcitationMonitor {
    pub fn new(dim: usize, threshold: f64, check_interval: usize) -> Self {
        ExcitationMonitor {
            matrix: DMatrix::zeros(dim, dim),
            threshold,
            check_interval: check_interval.max(1),
            ticks: 0,
            // a zero-dimensional block is vacuously excited
            achieved: if dim == 0 { Some(0.0) } else { None },
            last_min_eig: 0.0,
        }
    }

    /// Adds `K K^T dt` for one sample and runs the periodic check.
    pub fn observe(&mut self, k_sample: &DVector<f64>, dt: f64, now: f64) {
        self.matrix.ger(dt, k_sample, k_sample, 1.0);
        self.tick(now);
    }

    /// Adds a precomputed increment (the engine passes the same RK4-blended
    /// quadrature it used for the filter states).
    pub fn accumulate(&mut self, increment: &DMatrix<f64>, now: f64) {
        self.matrix += increment;
        self.tick(now);
    }

    fn tick(&mut self, now: f64) {
        self.ticks += 1;
        if self.achieved.is_none() && self.ticks % self.check_interval == 0 {
            self.check(now);
        }
    }

    fn check(&mut self, now: f64) {
        if self.matrix.nrows() == 0 {
            return;
        }
        let min_eig = self
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        self.last_min_eig = min_eig;
        if min_eig >= self.threshold {
            self.achieved = Some(now);
        }
    }

    pub fn achieved(&self) -> Option<f64> {
        self.achieved
    }

    pub fn min_eig(&self) -> f64 {
        self.last_min_eig
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Moves every generator to the centroid of its Voronoi cell until the
/// largest displacement falls below `tol` or `max_iters` is hit. With a
/// uniform density this spreads the agents into a centroidal configuration.
/// Returns the final positions and whether the tolerance was met.
pub fn lloyd_uniform(
    positions: &[Point],
    domain: &Rect,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<Point>, bool)> {
    if positions.is_empty() {
        return Err(Error::invalid("need at least one position"));
    }
    let mut pos = positions.to_vec();
    for _ in 0..max_iters {
        let cells = voronoi_cells(&pos, domain)?;
        let mut moved = 0.0f64;
        for (p, cell) in pos.iter_mut().zip(&cells) {
            let c = cell.centroid();
            moved = moved.max((c - *p).norm());
            *p = c;
        }
        if moved < tol {
            return Ok((pos, true));
        }
    }
    Ok((pos, false))
}

/// Centroid residual of a configuration: how far each generator sits from
/// its own cell centroid. Zero for a centroidal Voronoi tessellation.
pub fn centroid_residual(positions: &[Point], domain: &Rect) -> Result<f64> {
    let cells = voronoi_cells(positions, domain)?;
    Ok(positions
        .iter()
        .zip(&cells)
        .map(|(p, c)| (c.centroid() - p).norm())
        .fold(0.0, f64::max))
}

/// True when every sampled position lies inside the polygon (used to check
/// that trajectories never leave their cell).
pub fn all_inside(cell: &ConvexPolygon, samples: &[Point]) -> bool {
    samples.iter().all(|q| cell.contains(q, 1e-9))
}
