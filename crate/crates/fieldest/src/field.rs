//! Ground-truth scalar fields, point measurement, reconstruction from a
//! parameter estimate, and the integral reconstruction-error metric.

use nalgebra::DVector;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};
use crate::rbf::KernelBasis;

/// Built-in analytic formulas for fields that are not kernel combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticFormula {
    /// Constant 1 everywhere.
    Uniform,
    /// Sum of three off-grid Gaussian-type bumps:
    /// `3x^2 e^{(-(x-0.7)^2 - (y-0.7)^2)/0.05} + e^{(-(x-0.4)^2 - (y-0.4)^2)/0.06}
    ///  + (1/3) e^{(-(x-0.2)^2 - (y-0.2)^2)/0.08}`.
    GaussianBumps,
}

impl AnalyticFormula {
    pub fn evaluate(&self, q: &Point) -> f64 {
        match self {
            AnalyticFormula::Uniform => 1.0,
            AnalyticFormula::GaussianBumps => {
                let (x, y) = (q.x, q.y);
                3.0 * x * x * ((-(x - 0.7).powi(2) - (y - 0.7).powi(2)) / 0.05).exp()
                    + ((-(x - 0.4).powi(2) - (y - 0.4).powi(2)) / 0.06).exp()
                    + (1.0 / 3.0) * ((-(x - 0.2).powi(2) - (y - 0.2).powi(2)) / 0.08).exp()
            }
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            AnalyticFormula::Uniform => "uniform",
            AnalyticFormula::GaussianBumps => "gaussian-bumps",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "uniform" => Ok(AnalyticFormula::Uniform),
            "gaussian-bumps" => Ok(AnalyticFormula::GaussianBumps),
            other => Err(Error::Config(format!("unknown analytic formula `{other}`"))),
        }
    }
}

/// The scalar field the sensors measure: either an exact kernel combination
/// (so the true parameters are known) or an analytic formula.
#[derive(Debug, Clone)]
pub enum FieldModel {
    Exact {
        basis: KernelBasis,
        coefficients: DVector<f64>,
        domain: Rect,
        a_max: f64,
    },
    Analytic {
        formula: AnalyticFormula,
        domain: Rect,
        a_max: f64,
    },
}

impl FieldModel {
    pub fn exact(basis: KernelBasis, coefficients: Vec<f64>, domain: Rect) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return Err(Error::invalid(format!(
                "{} coefficients for {} kernels",
                coefficients.len(),
                basis.len()
            )));
        }
        let a_max = coefficients.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        if a_max <= 0.0 {
            return Err(Error::invalid("coefficient bound a_max must be positive"));
        }
        Ok(FieldModel::Exact {
            basis,
            coefficients: DVector::from_vec(coefficients),
            domain,
            a_max,
        })
    }

    pub fn analytic(formula: AnalyticFormula, domain: Rect, a_max: f64) -> Result<Self> {
        if a_max <= 0.0 {
            return Err(Error::invalid("a_max must be positive"));
        }
        Ok(FieldModel::Analytic {
            formula,
            domain,
            a_max,
        })
    }

    pub fn domain(&self) -> &Rect {
        match self {
            FieldModel::Exact { domain, .. } | FieldModel::Analytic { domain, .. } => domain,
        }
    }

    /// Declared bound on the parameter magnitudes, used by the error bounds.
    pub fn a_max(&self) -> f64 {
        match self {
            FieldModel::Exact { a_max, .. } | FieldModel::Analytic { a_max, .. } => *a_max,
        }
    }

    /// True parameter vector when the field is an exact kernel combination.
    pub fn true_coefficients(&self) -> Option<&DVector<f64>> {
        match self {
            FieldModel::Exact { coefficients, .. } => Some(coefficients),
            FieldModel::Analytic { .. } => None,
        }
    }

    pub fn basis(&self) -> Option<&KernelBasis> {
        match self {
            FieldModel::Exact { basis, .. } => Some(basis),
            FieldModel::Analytic { .. } => None,
        }
    }

    /// Noise-free measurement at `q`; fails outside the domain.
    pub fn measure(&self, q: &Point) -> Result<f64> {
        if !self.domain().contains(q) {
            return Err(Error::invalid(format!(
                "measurement point ({}, {}) outside the domain",
                q.x, q.y
            )));
        }
        Ok(self.value(q))
    }

    /// Field value without the domain check; the simulation engine keeps
    /// agents inside their cells, so the check is done once at setup.
    pub fn value(&self, q: &Point) -> f64 {
        match self {
            FieldModel::Exact {
                basis, coefficients, ..
            } => {
                let mut acc = 0.0;
                for i in 0..basis.len() {
                    let c = basis.centre(i);
                    let dx = c[0] - q.x;
                    let dy = c[1] - q.y;
                    let d2 = dx * dx + dy * dy;
                    acc += coefficients[i] * (-d2 / (2.0 * basis.width(i) * basis.width(i))).exp();
                }
                acc
            }
            FieldModel::Analytic { formula, .. } => formula.evaluate(q),
        }
    }

    /// Checks nonnegativity by sampling a `samples x samples` midpoint grid.
    pub fn validate_nonnegative(&self, samples: usize) -> Result<()> {
        let d = self.domain();
        for ix in 0..samples {
            for iy in 0..samples {
                let q = Point::new(
                    d.min.x + (ix as f64 + 0.5) / samples as f64 * d.width(),
                    d.min.y + (iy as f64 + 0.5) / samples as f64 * d.height(),
                );
                let v = self.value(&q);
                if v < 0.0 {
                    return Err(Error::scenario(format!(
                        "field is negative ({v:.3e}) at ({:.3}, {:.3})",
                        q.x, q.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Regular node grid over a rectangle: `nx * ny` points including the
/// boundary, row-major with the x index outermost.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub rect: Rect,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, rect: Rect) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::invalid("grid needs at least 2 nodes per axis"));
        }
        Ok(GridSpec { nx, ny, rect })
    }

    pub fn node(&self, ix: usize, iy: usize) -> Point {
        Point::new(
            self.rect.min.x + ix as f64 / (self.nx - 1) as f64 * self.rect.width(),
            self.rect.min.y + iy as f64 / (self.ny - 1) as f64 * self.rect.height(),
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `K(q)^T a_hat` on every grid node, row-major (x outermost).
pub fn reconstruct(basis: &KernelBasis, a_hat: &DVector<f64>, grid: &GridSpec) -> Result<Vec<f64>> {
    if a_hat.len() != basis.len() {
        return Err(Error::invalid(format!(
            "estimate has {} entries for {} kernels",
            a_hat.len(),
            basis.len()
        )));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut k = DVector::zeros(basis.len());
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            let q = grid.node(ix, iy);
            basis.kernel_vector_into(&[q.x, q.y], &mut k);
            out.push(k.dot(a_hat));
        }
    }
    Ok(out)
}

/// Midpoint-rule approximation of `int_Q |phi(q) - K(q)^T a_hat| dq` on a
/// `resolution x resolution` grid. Summation order is fixed (x outer, y
/// inner) so results are bit-reproducible.
pub fn integral_error(
    field: &FieldModel,
    basis: &KernelBasis,
    a_hat: &DVector<f64>,
    resolution: usize,
) -> Result<f64> {
    integral_error_impl(field, basis, a_hat, resolution, false)
}

/// L2 variant `sqrt(int_Q |e|^2 dq)`, kept for sensitivity checks.
pub fn integral_error_l2(
    field: &FieldModel,
    basis: &KernelBasis,
    a_hat: &DVector<f64>,
    resolution: usize,
) -> Result<f64> {
    integral_error_impl(field, basis, a_hat, resolution, true)
}

fn integral_error_impl(
    field: &FieldModel,
    basis: &KernelBasis,
    a_hat: &DVector<f64>,
    resolution: usize,
    squared: bool,
) -> Result<f64> {
    if resolution < 2 {
        return Err(Error::invalid("integration grid needs resolution >= 2"));
    }
    if a_hat.len() != basis.len() {
        return Err(Error::invalid(format!(
            "estimate has {} entries for {} kernels",
            a_hat.len(),
            basis.len()
        )));
    }
    let d = field.domain();
    let cell = d.area() / (resolution * resolution) as f64;
    let mut k = DVector::zeros(basis.len());
    let mut acc = 0.0;
    for ix in 0..resolution {
        for iy in 0..resolution {
            let q = Point::new(
                d.min.x + (ix as f64 + 0.5) / resolution as f64 * d.width(),
                d.min.y + (iy as f64 + 0.5) / resolution as f64 * d.height(),
            );
            basis.kernel_vector_into(&[q.x, q.y], &mut k);
            let e = field.value(&q) - k.dot(a_hat);
            acc += if squared { e * e } else { e.abs() };
        }
    }
    let integral = acc * cell;
    Ok(if squared { integral.sqrt() } else { integral })
}

/// Writes a reconstructed grid as plain text: header `nx ny x0 y0 x1 y1`,
/// then `nx * ny` values row-major, one per line, 9 significant digits.
pub fn write_grid<W: Write>(mut w: W, grid: &GridSpec, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::invalid("grid value count mismatch"));
    }
    writeln!(
        w,
        "{} {} {} {} {} {}",
        grid.nx, grid.ny, grid.rect.min.x, grid.rect.min.y, grid.rect.max.x, grid.rect.max.y
    )?;
    for v in values {
        writeln!(w, "{:.8e}", v)?;
    }
    Ok(())
}

/// Reads a grid file written by [`write_grid`].
pub fn read_grid<R: BufRead>(r: R) -> Result<(GridSpec, Vec<f64>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Logs("empty grid file".into()))??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 {
        return Err(Error::Logs("grid header must have 6 fields".into()));
    }
    let nx: usize = parts[0]
        .parse()
        .map_err(|_| Error::Logs("bad nx in grid header".into()))?;
    let ny: usize = parts[1]
        .parse()
        .map_err(|_| Error::Logs("bad ny in grid header".into()))?;
    let coords: Vec<f64> = parts[2..]
        .iter()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Logs("bad domain bounds in grid header".into()))?;
    let grid = GridSpec::new(nx, ny, Rect::new(coords[0], coords[1], coords[2], coords[3]))?;
    let mut values = Vec::with_capacity(grid.len());
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        values.push(
            line.trim()
                .parse::<f64>()
                .map_err(|_| Error::Logs(format!("bad grid value `{line}`")))?,
        );
    }
    if values.len() != grid.len() {
        return Err(Error::Logs(format!(
            "grid file has {} values, expected {}",
            values.len(),
            grid.len()
        )));
    }
    Ok((grid, values))
}
