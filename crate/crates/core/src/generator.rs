//! Dense discrete generators L[t,μ] and A[t,μ,u] on the periodic grid.
//!
//! The μ-dependence is a convolution drift b(t,x,μ) = b0(t,x) + (K*μ)(x), so
//! the Gâteaux derivative in a direction χ is exactly (K*χ)·D.

use crate::error::{Error, Result};
use crate::fnspace::{ifft_real, wavenumbers, Grid1D, ScalarField};
use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Default nondegeneracy floor for σ.
pub const SIGMA_MIN: f64 = 1e-3;
/// Tolerance on the zero-mass requirement for directions χ.
pub const DIRECTION_MASS_TOL: f64 = 1e-8;

type CoefFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A coefficient c(t, x).
#[derive(Clone)]
pub enum Coef {
    Const(f64),
    Var(CoefFn),
}

impl Coef {
    pub fn var(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coef::Var(Arc::new(f))
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Coef::Const(c) => *c,
            Coef::Var(f) => f(t, x),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Coef::Const(c) => Some(*c),
            Coef::Var(_) => None,
        }
    }

    pub fn sample(&self, grid: Grid1D, t: f64) -> Vec<f64> {
        (0..grid.n_points()).map(|i| self.eval(t, grid.x(i))).collect()
    }
}

impl fmt::Debug for Coef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coef::Const(c) => write!(f, "Const({c})"),
            Coef::Var(_) => write!(f, "Var(<fn>)"),
        }
    }
}

impl From<f64> for Coef {
    fn from(c: f64) -> Self {
        Coef::Const(c)
    }
}

type KernelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Interaction kernel K(r) of the drift b = b0 + K*μ.
#[derive(Clone)]
pub enum Kernel {
    Zero,
    /// A·cos(κr).
    Cos { amplitude: f64, wavenumber: f64 },
    /// A·exp(−r²/(2w²)).
    Gaussian { amplitude: f64, width: f64 },
    /// User kernel with a bound on max(|K|, |K′|, |K″|).
    Custom { f: KernelFn, c2_bound: f64 },
}

impl Kernel {
    /// A·cos(πr/L): the fundamental mode of the torus [−L, L).
    pub fn cos(amplitude: f64, half_width: f64) -> Self {
        Kernel::Cos { amplitude, wavenumber: std::f64::consts::PI / half_width }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Cos { amplitude, wavenumber } => amplitude * (wavenumber * r).cos(),
            Kernel::Gaussian { amplitude, width } => amplitude * (-r * r / (2.0 * width * width)).exp(),
            Kernel::Custom { f, .. } => f(r),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Kernel::Zero => true,
            Kernel::Cos { amplitude, .. } | Kernel::Gaussian { amplitude, .. } => *amplitude == 0.0,
            Kernel::Custom { .. } => false,
        }
    }

    /// c₇ = max(sup|K|, sup|K′|, sup|K″|).
    pub fn c2_bound(&self) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Cos { amplitude, wavenumber } => {
                let k = wavenumber.abs();
                amplitude.abs() * 1f64.max(k).max(k * k)
            }
            Kernel::Gaussian { amplitude, width } => {
                let w = width.abs();
                let d1 = 1.0 / (w * std::f64::consts::E.sqrt());
                amplitude.abs() * 1f64.max(d1).max(1.0 / (w * w))
            }
            Kernel::Custom { c2_bound, .. } => *c2_bound,
        }
    }

    /// c_n = K(wrap(n h)).
    pub fn circulant(&self, grid: Grid1D) -> Vec<f64> {
        let h = grid.spacing();
        (0..grid.n_points()).map(|n| self.eval(grid.wrap(n as f64 * h))).collect()
    }

    /// (K*μ)(x_i) = Σ_j K(x_i − x_j) μ_j h on the torus.
    pub fn convolve(&self, mu: &ScalarField) -> ScalarField {
        let grid = mu.grid();
        if self.is_zero() {
            return ScalarField::zeros(grid);
        }
        let n = grid.n_points();
        let h = grid.spacing();
        let c = self.circulant(grid);
        let m = mu.values();
        let values = (0..n)
            .map(|i| (0..n).map(|j| c[(i + n - j) % n] * m[j]).sum::<f64>() * h)
            .collect();
        ScalarField::from_vec_unchecked(grid, values)
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Zero => write!(f, "Zero"),
            Kernel::Cos { amplitude, wavenumber } => {
                write!(f, "Cos {{ amplitude: {amplitude}, wavenumber: {wavenumber} }}")
            }
            Kernel::Gaussian { amplitude, width } => {
                write!(f, "Gaussian {{ amplitude: {amplitude}, width: {width} }}")
            }
            Kernel::Custom { c2_bound, .. } => write!(f, "Custom {{ c2_bound: {c2_bound} }}"),
        }
    }
}

/// Generator family.
#[derive(Debug, Clone)]
pub enum GeneratorKind {
    /// ½σ²(t,x)∂².
    Diffusion { sigma_sq: Coef },
    /// a(t,x)·Frac(α(x)); the order is read as α(x) = order.eval(0, x).
    StableLike { intensity: Coef, order: Coef },
    /// Pure transport; no smoothing. Test-only.
    DriftOnly,
}

/// L[t,μ] = diffusion or fractional part + (b0 + K*μ)·∇.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub base_drift: Coef,
    pub kernel: Kernel,
    pub sigma_min: f64,
}

impl GeneratorSpec {
    pub fn diffusion(sigma_sq: Coef) -> Result<Self> {
        let spec = Self {
            kind: GeneratorKind::Diffusion { sigma_sq },
            base_drift: Coef::Const(0.0),
            kernel: Kernel::Zero,
            sigma_min: SIGMA_MIN,
        };
        spec.validate_constants()?;
        Ok(spec)
    }

    /// ½σ²∂² with constant σ².
    pub fn heat(sigma_sq: f64) -> Result<Self> {
        Self::diffusion(Coef::Const(sigma_sq))
    }

    pub fn stable_like(intensity: Coef, order: Coef) -> Result<Self> {
        let spec = Self {
            kind: GeneratorKind::StableLike { intensity, order },
            base_drift: Coef::Const(0.0),
            kernel: Kernel::Zero,
            sigma_min: SIGMA_MIN,
        };
        spec.validate_constants()?;
        Ok(spec)
    }

    /// −|∇|^α with unit intensity.
    pub fn stable(alpha: f64) -> Result<Self> {
        Self::stable_like(Coef::Const(1.0), Coef::Const(alpha))
    }

    pub fn drift_only() -> Self {
        Self {
            kind: GeneratorKind::DriftOnly,
            base_drift: Coef::Const(0.0),
            kernel: Kernel::Zero,
            sigma_min: SIGMA_MIN,
        }
    }

    pub fn with_drift(mut self, b0: Coef) -> Self {
        self.base_drift = b0;
        self
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    fn validate_constants(&self) -> Result<()> {
        match &self.kind {
            GeneratorKind::Diffusion { sigma_sq: Coef::Const(s) } => check_sigma(*s, self.sigma_min),
            GeneratorKind::StableLike { intensity, order } => {
                if let Some(a) = order.as_const() {
                    check_order(a)?;
                }
                if let Some(a) = intensity.as_const() {
                    check_intensity(a)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Constant coefficients and no μ-dependence.
    pub fn is_constant_coefficient(&self) -> bool {
        let kind_const = match &self.kind {
            GeneratorKind::Diffusion { sigma_sq } => sigma_sq.as_const().is_some(),
            GeneratorKind::StableLike { intensity, order } => {
                intensity.as_const().is_some() && order.as_const().is_some()
            }
            GeneratorKind::DriftOnly => true,
        };
        kind_const && self.base_drift.as_const().is_some() && self.kernel.is_zero()
    }

    pub fn has_smoothing(&self) -> bool {
        !matches!(self.kind, GeneratorKind::DriftOnly)
    }

    /// Fourier symbol of a constant-coefficient family.
    pub fn symbol(&self) -> Option<impl Fn(f64) -> Complex64 + '_> {
        if !self.is_constant_coefficient() {
            return None;
        }
        let b = self.base_drift.as_const()?;
        Some(move |k: f64| {
            let re = match &self.kind {
                GeneratorKind::Diffusion { sigma_sq } => -0.5 * sigma_sq.eval(0.0, 0.0) * k * k,
                GeneratorKind::StableLike { intensity, order } => {
                    -intensity.eval(0.0, 0.0) * k.abs().powf(order.eval(0.0, 0.0))
                }
                GeneratorKind::DriftOnly => 0.0,
            };
            Complex64::new(re, b * k)
        })
    }

    /// b(t, x_i, μ) = b0(t, x_i) + (K*μ)(x_i).
    pub fn drift_field(&self, grid: Grid1D, t: f64, mu: Option<&ScalarField>) -> Vec<f64> {
        let mut b = self.base_drift.sample(grid, t);
        if let Some(mu) = mu {
            if !self.kernel.is_zero() {
                for (bi, ki) in b.iter_mut().zip(self.kernel.convolve(mu).values()) {
                    *bi += ki;
                }
            }
        }
        b
    }
}

fn check_sigma(s: f64, sigma_min: f64) -> Result<()> {
    if !(s.is_finite() && s >= sigma_min * sigma_min) {
        return Err(Error::InvalidArgument(format!(
            "sigma² = {s} below sigma_min² = {:e}",
            sigma_min * sigma_min
        )));
    }
    Ok(())
}

fn check_order(a: f64) -> Result<()> {
    if !(a > 1.0 && a < 2.0) {
        return Err(Error::InvalidArgument(format!("stable order alpha = {a} outside (1, 2)")));
    }
    Ok(())
}

fn check_intensity(a: f64) -> Result<()> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::InvalidArgument(format!("stable intensity a = {a} must be positive")));
    }
    Ok(())
}

/// Dense operator on a grid; rows sum to zero.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Grid1D,
    matrix: DMatrix<f64>,
    row_sum_correction: f64,
}

impl DiscreteOperator {
    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Largest |row sum| removed by the diagonal correction.
    pub fn row_sum_correction(&self) -> f64 {
        self.row_sum_correction
    }

    pub fn apply(&self, f: &ScalarField) -> ScalarField {
        let v = &self.matrix * DVector::from_column_slice(f.values());
        ScalarField::from_vec_unchecked(self.grid, v.iter().copied().collect())
    }

    /// Aᵀμ.
    pub fn apply_transpose(&self, mu: &ScalarField) -> ScalarField {
        let v = self.matrix.tr_mul(&DVector::from_column_slice(mu.values()));
        ScalarField::from_vec_unchecked(self.grid, v.iter().copied().collect())
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        self.matrix.row_iter().fold(0.0, |m, r| m.max(r.sum().abs()))
    }

    /// max_i Σ_j |M_ij|.
    pub fn max_row_abs_sum(&self) -> f64 {
        self.matrix.row_iter().fold(0.0, |m, r| m.max(r.iter().map(|v| v.abs()).sum()))
    }
}

fn force_zero_row_sums(m: &mut DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        let s = m.row(i).sum();
        m[(i, i)] -= s;
        worst = worst.max(s.abs());
    }
    worst
}

/// Adds diag(w)·D (central first derivative) to `m`.
fn add_drift(m: &mut DMatrix<f64>, w: &[f64], h: f64) {
    let n = m.nrows();
    for (i, &wi) in w.iter().enumerate() {
        let c = wi / (2.0 * h);
        m[(i, (i + 1) % n)] += c;
        m[(i, (i + n - 1) % n)] -= c;
    }
}

/// Circulant column of Frac(α): c(n) = (1/N) Σ_m −|k_m|^α cos(k_m n h).
pub fn fractional_column(grid: Grid1D, alpha: f64) -> Vec<f64> {
    let ks = wavenumbers(grid);
    let symbol: Vec<Complex64> = ks.iter().map(|k| Complex64::new(-k.abs().powf(alpha), 0.0)).collect();
    ifft_real(symbol)
}

/// Assembles L[t,μ]. `mu = None` drops the interaction term.
pub fn assemble_l(
    spec: &GeneratorSpec,
    grid: Grid1D,
    t: f64,
    mu: Option<&ScalarField>,
) -> Result<DiscreteOperator> {
    if let Some(mu) = mu {
        if mu.grid() != grid {
            return Err(Error::GridMismatch("density and operator grids differ".into()));
        }
    }
    let n = grid.n_points();
    let h = grid.spacing();
    let mut m = DMatrix::zeros(n, n);
    match &spec.kind {
        GeneratorKind::Diffusion { sigma_sq } => {
            for i in 0..n {
                let s = sigma_sq.eval(t, grid.x(i));
                check_sigma(s, spec.sigma_min)?;
                let c = 0.5 * s / (h * h);
                m[(i, (i + n - 1) % n)] += c;
                m[(i, (i + 1) % n)] += c;
                m[(i, i)] -= 2.0 * c;
            }
        }
        GeneratorKind::StableLike { intensity, order } => {
            let mut columns: HashMap<u64, Vec<f64>> = HashMap::new();
            for i in 0..n {
                let x = grid.x(i);
                let alpha = order.eval(0.0, x);
                check_order(alpha)?;
                let a = intensity.eval(t, x);
                check_intensity(a)?;
                let col = columns.entry(alpha.to_bits()).or_insert_with(|| fractional_column(grid, alpha));
                for j in 0..n {
                    m[(i, j)] = a * col[(i + n - j) % n];
                }
            }
        }
        GeneratorKind::DriftOnly => {}
    }
    let b = spec.drift_field(grid, t, mu);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("drift coefficient".into()));
    }
    add_drift(&mut m, &b, h);
    let correction = force_zero_row_sums(&mut m);
    Ok(DiscreteOperator { grid, matrix: m, row_sum_correction: correction })
}

/// A[t,μ,u] = L[t,μ] + diag(h_drift)·D.
pub fn assemble_a(
    spec: &GeneratorSpec,
    grid: Grid1D,
    t: f64,
    mu: Option<&ScalarField>,
    h_drift: &ScalarField,
) -> Result<DiscreteOperator> {
    if h_drift.grid() != grid {
        return Err(Error::GridMismatch("controlled drift and operator grids differ".into()));
    }
    let mut op = assemble_l(spec, grid, t, mu)?;
    if h_drift.values().iter().all(|&v| v == 0.0) {
        return Ok(op);
    }
    add_drift(&mut op.matrix, h_drift.values(), grid.spacing());
    let c = force_zero_row_sums(&mut op.matrix);
    op.row_sum_correction = op.row_sum_correction.max(c);
    Ok(op)
}

/// D_χL[t,μ] = diag(K*χ)·D for a zero-mass direction χ.
pub fn gateaux_l(
    spec: &GeneratorSpec,
    grid: Grid1D,
    _t: f64,
    chi: &ScalarField,
) -> Result<DiscreteOperator> {
    if chi.grid() != grid {
        return Err(Error::GridMismatch("direction and operator grids differ".into()));
    }
    let mass = chi.integral();
    if mass.abs() > DIRECTION_MASS_TOL {
        return Err(Error::NonZeroMass(mass));
    }
    let n = grid.n_points();
    let mut m = DMatrix::zeros(n, n);
    if !spec.kernel.is_zero() {
        add_drift(&mut m, spec.kernel.convolve(chi).values(), grid.spacing());
    }
    let correction = force_zero_row_sums(&mut m);
    Ok(DiscreteOperator { grid, matrix: m, row_sum_correction: correction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::{dual_norm_c2, make_grid};
    use std::f64::consts::PI;

    fn cosine(g: Grid1D) -> ScalarField {
        ScalarField::from_fn(g, f64::cos)
    }

    #[test]
    fn heat_on_cosine() {
        let g = make_grid(128, PI).unwrap();
        let h = g.spacing();
        let op = assemble_l(&GeneratorSpec::heat(2.0).unwrap(), g, 0.0, None).unwrap();
        let out = op.apply(&cosine(g));
        // Central D² multiplies cos by −(4/h²)sin²(h/2).
        let lam = -4.0 / (h * h) * (h / 2.0).sin().powi(2);
        assert!((&out - &cosine(g).map(|v| lam * v)).max_abs() < 1e-10);
        assert!((&out + &cosine(g)).max_abs() < h * h / 12.0 * 1.01);
    }

    #[test]
    fn stable_on_cosine() {
        let g = make_grid(64, PI).unwrap();
        let op = assemble_l(&GeneratorSpec::stable(1.5).unwrap(), g, 0.0, None).unwrap();
        let out = op.apply(&cosine(g));
        assert!((&out + &cosine(g)).max_abs() < 1e-10);
        let c2 = ScalarField::from_fn(g, |x| (2.0 * x).cos());
        let out2 = op.apply(&c2);
        assert!((&out2 + &(&c2 * 2f64.powf(1.5))).max_abs() < 1e-10);
    }

    #[test]
    fn constants_are_annihilated() {
        let g = make_grid(32, 2.0).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let mu = ScalarField::from_fn(g, |x| (1.0 + 0.5 * (PI * x / 2.0).cos()) / 4.0);
        let specs = vec![
            GeneratorSpec::heat(1.3).unwrap().with_kernel(Kernel::cos(0.7, 2.0)),
            GeneratorSpec::diffusion(Coef::var(|t, x| 1.0 + 0.3 * (x * t).sin())).unwrap(),
            GeneratorSpec::stable_like(Coef::Const(0.8), Coef::var(|_, x| 1.5 + 0.2 * x.sin()))
                .unwrap()
                .with_drift(Coef::Const(0.4)),
            GeneratorSpec::drift_only().with_drift(Coef::var(|_, x| x.cos())),
        ];
        for spec in &specs {
            let op = assemble_l(spec, g, 0.3, Some(&mu)).unwrap();
            assert!(op.apply(&one).max_abs() < 1e-12);
            assert!(op.max_abs_row_sum() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_coefficients() {
        assert!(GeneratorSpec::heat(0.0).is_err());
        assert!(GeneratorSpec::heat(1e-7).is_err());
        assert!(GeneratorSpec::stable(2.0).is_err());
        assert!(GeneratorSpec::stable(1.0).is_err());
        let g = make_grid(16, PI).unwrap();
        let spec = GeneratorSpec::diffusion(Coef::var(|_, x| x)).unwrap();
        assert!(assemble_l(&spec, g, 0.0, None).is_err());
        let spec = GeneratorSpec::stable_like(Coef::Const(1.0), Coef::var(|_, x| 1.5 + x)).unwrap();
        assert!(assemble_l(&spec, g, 0.0, None).is_err());
    }

    #[test]
    fn controlled_drift() {
        let g = make_grid(128, PI).unwrap();
        let h = g.spacing();
        let spec = GeneratorSpec::heat(2.0).unwrap();
        let zero = ScalarField::zeros(g);
        let l = assemble_l(&spec, g, 0.0, None).unwrap();
        let a0 = assemble_a(&spec, g, 0.0, None, &zero).unwrap();
        assert_eq!(l.matrix(), a0.matrix());
        let c = 0.7;
        let a = assemble_a(&spec, g, 0.0, None, &ScalarField::constant(g, c)).unwrap();
        let out = a.apply(&cosine(g));
        let exact = ScalarField::from_fn(g, |x| -x.cos() - c * x.sin());
        assert!((&out - &exact).max_abs() < h * h);
    }

    #[test]
    fn gateaux_cases() {
        let g = make_grid(64, PI).unwrap();
        let mu = ScalarField::constant(g, 1.0 / (2.0 * PI));
        let chi = ScalarField::from_fn(g, |y| y.cos() / PI);
        let zero_k = GeneratorSpec::heat(2.0).unwrap();
        assert_eq!(gateaux_l(&zero_k, g, 0.0, &chi).unwrap().matrix().amax(), 0.0);
        let spec = GeneratorSpec::heat(2.0).unwrap().with_kernel(Kernel::cos(1.0, PI));
        assert_eq!(gateaux_l(&spec, g, 0.0, &ScalarField::zeros(g)).unwrap().matrix().amax(), 0.0);
        assert!(gateaux_l(&spec, g, 0.0, &mu).is_err());

        // ∫cos(x − y)cos(y)/π dy = cos(x).
        let conv = spec.kernel.convolve(&chi);
        assert!((&conv - &cosine(g)).max_abs() < 1e-12);

        // Exact linearity of L in μ.
        let dl = gateaux_l(&spec, g, 0.0, &chi).unwrap();
        let s = 1e-3;
        let l0 = assemble_l(&spec, g, 0.0, Some(&mu)).unwrap();
        let l1 = assemble_l(&spec, g, 0.0, Some(&mu.axpy(s, &chi))).unwrap();
        let fd = (l1.matrix() - l0.matrix()) / s;
        assert!((fd - dl.matrix()).amax() <= 1e-10);

        // Action on unit-C² probes ≤ max|K*χ| ≤ c₇·dual(χ).
        let c7 = spec.kernel.c2_bound();
        let dual = dual_norm_c2(&chi).unwrap();
        assert!(conv.max_abs() <= c7 * dual * (1.0 + 1e-6));
        for k in 1..4 {
            let kf = k as f64;
            let p = ScalarField::from_fn(g, |x| (kf * x).sin() / (1.0 + kf + kf * kf));
            assert!(dl.apply(&p).max_abs() <= conv.max_abs() + 1e-12);
        }
    }

    #[test]
    fn fractional_column_is_symmetric() {
        let g = make_grid(32, PI).unwrap();
        let c = fractional_column(g, 1.3);
        for n in 1..32 {
            assert!((c[n] - c[32 - n]).abs() < 1e-12);
        }
        assert!(c.iter().sum::<f64>().abs() < 1e-10);
        assert!(c[0] < 0.0 && c[1] > 0.0);
    }
}
