//! Periodic 1-D grid, grid functions and the norms used throughout the crate.
//!
//! All types here are immutable after construction. The derivative that
//! defines the C¹/C² norms is the second-order central stencil; the spectral
//! derivative is exposed only as a cross-check.

mod dual;
mod spectral;

pub use dual::{dual_norm_c2, dual_norm_c2_certified, DualNormCertificate};
pub(crate) use spectral::ifft_real;
pub use spectral::{
    apply_fourier_multiplier, dual_norm_surrogate, fourier_transform, spectral_derivative,
    wavenumbers,
};

use crate::error::{Error, Result};
use std::ops::{Add, Mul, Sub};

/// Uniform grid on the torus [−L, L).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    n_points: usize,
    half_width: f64,
}

impl Grid1D {
    pub fn new(n_points: usize, half_width: f64) -> Result<Self> {
        if n_points < 8 || n_points % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "n_points must be even ≥ 8 (got {n_points})"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half_width must be positive (got {half_width})"
            )));
        }
        Ok(Self { n_points, half_width })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Spacing h = 2L/N.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n_points as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Maps a displacement to its representative in [−L, L).
    pub fn wrap(&self, r: f64) -> f64 {
        let period = 2.0 * self.half_width;
        let w = (r + self.half_width).rem_euclid(period) - self.half_width;
        if w >= self.half_width {
            w - period
        } else {
            w
        }
    }
}

/// Shorthand for [`Grid1D::new`].
pub fn make_grid(n_points: usize, half_width: f64) -> Result<Grid1D> {
    Grid1D::new(n_points, half_width)
}

/// Real values on the nodes of a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid1D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}-point grid",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at the grid nodes. The caller guarantees finite output.
    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_points()).map(|i| f(grid.x(i))).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid1D, c: f64) -> Self {
        Self { grid, values: vec![c; grid.n_points()] }
    }

    pub(crate) fn from_vec_unchecked(grid: Grid1D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_points());
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Σ f_i h.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.spacing()
    }

    /// Σ f_i g_i h.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.assert_same_grid(other);
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.grid.spacing()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        self.assert_same_grid(other);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, values }
    }

    /// self + a·other.
    pub fn axpy(&self, a: f64, other: &ScalarField) -> Self {
        self.zip_map(other, |x, y| x + a * y)
    }

    /// (1−θ)·self + θ·other; exact at θ ∈ {0, 1}.
    pub fn lerp(&self, other: &ScalarField, theta: f64) -> Self {
        if theta == 0.0 {
            return self.clone();
        }
        if theta == 1.0 {
            return other.clone();
        }
        self.zip_map(other, |a, b| (1.0 - theta) * a + theta * b)
    }

    fn assert_same_grid(&self, other: &ScalarField) {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &ScalarField {
    type Output = ScalarField;
    fn mul(self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }
}

/// The four function-space norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    C,
    C1,
    C2,
    Lip,
}

/// Discrete norm of `f`; derivatives use the central stencil.
pub fn norm(f: &ScalarField, space: NormKind) -> f64 {
    let c = f.max_abs();
    match space {
        NormKind::C => c,
        NormKind::C1 => c + central_max_abs(f, 1),
        NormKind::C2 => c + central_max_abs(f, 1) + central_max_abs(f, 2),
        NormKind::Lip => {
            let v = f.values();
            let n = v.len();
            let h = f.grid().spacing();
            let slope = (0..n).fold(0.0_f64, |m, i| m.max((v[(i + 1) % n] - v[i]).abs() / h));
            c + slope
        }
    }
}

fn central_max_abs(f: &ScalarField, order: u8) -> f64 {
    central(f.values(), f.grid().spacing(), order)
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// Derivative method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMethod {
    Central,
    Spectral,
}

pub fn derivative(f: &ScalarField, order: u8, method: DerivativeMethod) -> Result<ScalarField> {
    if order != 1 && order != 2 {
        return Err(Error::InvalidArgument(format!("derivative order must be 1 or 2 (got {order})")));
    }
    Ok(match method {
        DerivativeMethod::Central => {
            ScalarField::from_vec_unchecked(f.grid(), central(f.values(), f.grid().spacing(), order))
        }
        DerivativeMethod::Spectral => spectral_derivative(f, order),
    })
}

/// Central first derivative (the gradient used by the solvers).
pub fn gradient(f: &ScalarField) -> ScalarField {
    ScalarField::from_vec_unchecked(f.grid(), central(f.values(), f.grid().spacing(), 1))
}

pub(crate) fn central(v: &[f64], h: f64, order: u8) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let l = v[(i + n - 1) % n];
            let r = v[(i + 1) % n];
            if order == 1 {
                (r - l) / (2.0 * h)
            } else {
                (r - 2.0 * v[i] + l) / (h * h)
            }
        })
        .collect()
}

/// Strictly increasing time nodes 0 = t_0 < … < t_M = T.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument("time grid needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidArgument(format!("time grid must start at 0 (got {})", nodes[0])));
        }
        if nodes.iter().any(|t| !t.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("time nodes must be finite and strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// M equal steps on [0, T].
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "uniform time grid needs T > 0 and M ≥ 1 (got T = {horizon}, M = {steps})"
            )));
        }
        let dt = horizon / steps as f64;
        let mut nodes: Vec<f64> = (0..steps).map(|i| i as f64 * dt).collect();
        nodes.push(horizon);
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Number of intervals M.
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("nonempty")
    }

    /// Interval index i and weight θ with t = (1−θ)t_i + θt_{i+1}; θ = 0 on nodes.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let m = self.steps();
        if t <= self.nodes[0] {
            return (0, 0.0);
        }
        if t >= self.nodes[m] {
            return (m - 1, 1.0);
        }
        let j = self.nodes.partition_point(|&s| s <= t);
        let i = j - 1;
        let theta = (t - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        (i, theta)
    }
}

/// One [`ScalarField`] per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPath {
    time: TimeGrid,
    fields: Vec<ScalarField>,
}

impl FieldPath {
    pub fn new(time: TimeGrid, fields: Vec<ScalarField>) -> Result<Self> {
        if fields.len() != time.nodes().len() {
            return Err(Error::GridMismatch(format!(
                "{} fields for {} time nodes",
                fields.len(),
                time.nodes().len()
            )));
        }
        let grid = fields[0].grid();
        if fields.iter().any(|f| f.grid() != grid) {
            return Err(Error::GridMismatch("fields of a path must share one grid".into()));
        }
        Ok(Self { time, fields })
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn grid(&self) -> Grid1D {
        self.fields[0].grid()
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &ScalarField {
        &self.fields[i]
    }

    pub fn into_fields(self) -> Vec<ScalarField> {
        self.fields
    }

    /// sup over nodes of ‖self(t) − other(t)‖ in `space`.
    pub fn sup_distance(&self, other: &FieldPath, space: NormKind) -> f64 {
        assert_eq!(self.fields.len(), other.fields.len(), "paths on different time grids");
        self.fields
            .iter()
            .zip(&other.fields)
            .fold(0.0, |m, (a, b)| m.max(norm(&(a - b), space)))
    }

    /// sup over nodes of ‖self(t)‖ in `space`.
    pub fn sup_norm(&self, space: NormKind) -> f64 {
        self.fields.iter().fold(0.0, |m, f| m.max(norm(f, space)))
    }

    /// Central gradient at every node.
    pub fn gradient(&self) -> FieldPath {
        Self { time: self.time.clone(), fields: self.fields.iter().map(gradient).collect() }
    }
}

/// Mass tolerance for densities.
pub const MASS_TOL: f64 = 1e-10;
/// Largest admissible negative mass Σ max(−μ_i, 0)h.
pub const NEGATIVITY_TOL: f64 = 1e-8;

/// Probability densities {μ_t} on the time nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    time: TimeGrid,
    densities: Vec<ScalarField>,
}

impl MeasureFlow {
    pub fn new(time: TimeGrid, densities: Vec<ScalarField>) -> Result<Self> {
        if densities.len() != time.nodes().len() {
            return Err(Error::GridMismatch(format!(
                "{} densities for {} time nodes",
                densities.len(),
                time.nodes().len()
            )));
        }
        let grid = densities[0].grid();
        for (i, d) in densities.iter().enumerate() {
            if d.grid() != grid {
                return Err(Error::GridMismatch("densities of a flow must share one grid".into()));
            }
            check_density(d).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::InvalidArgument(format!("density at node {i}: {m}")),
                other => other,
            })?;
        }
        Ok(Self { time, densities })
    }

    /// μ_t ≡ mu0 for every node.
    pub fn frozen(time: TimeGrid, mu0: &ScalarField) -> Result<Self> {
        let densities = vec![mu0.clone(); time.nodes().len()];
        Self::new(time, densities)
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn grid(&self) -> Grid1D {
        self.densities[0].grid()
    }

    pub fn densities(&self) -> &[ScalarField] {
        &self.densities
    }

    pub fn density(&self, i: usize) -> &ScalarField {
        &self.densities[i]
    }

    /// Piecewise-linear interpolation in t.
    pub fn density_at(&self, t: f64) -> ScalarField {
        let (i, theta) = self.time.locate(t);
        self.densities[i].lerp(&self.densities[i + 1], theta)
    }

    /// Largest negative mass over the nodes.
    pub fn negativity_defect(&self) -> f64 {
        self.densities.iter().fold(0.0, |m, d| m.max(negative_mass(d)))
    }
}

fn negative_mass(d: &ScalarField) -> f64 {
    d.values().iter().map(|v| (-v).max(0.0)).sum::<f64>() * d.grid().spacing()
}

/// Checks mass and sign of a single density.
pub fn check_density(d: &ScalarField) -> Result<()> {
    if !d.is_finite() {
        return Err(Error::NonFinite("density".into()));
    }
    let mass = d.integral();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidArgument(format!("mass {mass} differs from 1 by more than {MASS_TOL:e}")));
    }
    let neg = negative_mass(d);
    if neg > NEGATIVITY_TOL {
        return Err(Error::InvalidArgument(format!("negative mass {neg:e}")));
    }
    Ok(())
}

/// Rescales a nonnegative field to unit discrete mass.
pub fn normalize_density(f: &ScalarField) -> Result<ScalarField> {
    let mass = f.integral();
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::InvalidArgument(format!("cannot normalise a field of mass {mass}")));
    }
    Ok(f.map(|v| v / mass))
}
