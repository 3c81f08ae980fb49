use crate::error::{Error, Result};
use crate::fnspace::ScalarField;
use crate::generator::{Coef, Kernel};
use std::fmt;
use std::sync::Arc;

/// Smallest admissible θ for the quadratic H∞ Hamiltonian.
pub const THETA_MIN: f64 = 1e-8;
/// Control-grid intervals before golden-section polishing.
const LEGENDRE_GRID: usize = 64;
/// Width at which the golden-section polish stops.
const LEGENDRE_TOL: f64 = 1e-10;
/// Relative gap under which two finite-control candidates count as tied.
const TIE_TOL: f64 = 1e-12;

/// A function of (t, x, u).
pub type ControlFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// H(t, x, p) = max_u (h(t,x,u)·p + J(t,x,u)).
#[derive(Clone)]
pub enum HamiltonianKind {
    /// h = βu, J = α − θu²: H = α + β²p²/(4θ), û = βp/(2θ).
    QuadraticHinf { alpha: Coef, beta: Coef, theta: Coef },
    /// h = u with J strictly concave in u on `control_range`.
    LegendreConcave { running: ControlFn, control_range: (f64, f64) },
    /// Maximum over a finite control set.
    FiniteControls { controls: Vec<f64>, drift: ControlFn, running: ControlFn },
}

impl fmt::Debug for HamiltonianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HamiltonianKind::QuadraticHinf { alpha, beta, theta } => f
                .debug_struct("QuadraticHinf")
                .field("alpha", alpha)
                .field("beta", beta)
                .field("theta", theta)
                .finish(),
            HamiltonianKind::LegendreConcave { control_range, .. } => {
                f.debug_struct("LegendreConcave").field("control_range", control_range).finish()
            }
            HamiltonianKind::FiniteControls { controls, .. } => {
                f.debug_struct("FiniteControls").field("controls", controls).finish()
            }
        }
    }
}

/// Hamiltonian with an optional additive mean-field term (K_H * μ)(x).
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub kind: HamiltonianKind,
    pub coupling: Kernel,
}

/// Feedback control at one time node.
#[derive(Debug, Clone)]
pub struct ControlField {
    pub values: ScalarField,
    /// Nodes where the finite-control argmax was tied.
    pub ties: usize,
}

impl HamiltonianSpec {
    pub fn quadratic(alpha: Coef, beta: Coef, theta: Coef) -> Result<Self> {
        if let Some(th) = theta.as_const() {
            check_theta(th)?;
        }
        Ok(Self { kind: HamiltonianKind::QuadraticHinf { alpha, beta, theta }, coupling: Kernel::Zero })
    }

    /// H ≡ 0.
    pub fn zero() -> Self {
        Self::quadratic(Coef::Const(0.0), Coef::Const(0.0), Coef::Const(1.0)).expect("θ = 1 is admissible")
    }

    pub fn legendre(
        running: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        control_range: (f64, f64),
    ) -> Result<Self> {
        if !(control_range.0 < control_range.1 && control_range.0.is_finite() && control_range.1.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad control range {control_range:?}")));
        }
        Ok(Self {
            kind: HamiltonianKind::LegendreConcave { running: Arc::new(running), control_range },
            coupling: Kernel::Zero,
        })
    }

    pub fn finite(
        controls: Vec<f64>,
        drift: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        running: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::InvalidArgument("finite control set is empty".into()));
        }
        Ok(Self {
            kind: HamiltonianKind::FiniteControls {
                controls,
                drift: Arc::new(drift),
                running: Arc::new(running),
            },
            coupling: Kernel::Zero,
        })
    }

    pub fn with_coupling(mut self, kernel: Kernel) -> Self {
        self.coupling = kernel;
        self
    }

    pub fn is_mu_free(&self) -> bool {
        self.coupling.is_zero()
    }

    fn mean_field(&self, p: &ScalarField, mu: Option<&ScalarField>) -> Option<ScalarField> {
        match mu {
            Some(mu) if !self.coupling.is_zero() => {
                assert_eq!(mu.grid(), p.grid(), "density and gradient grids differ");
                Some(self.coupling.convolve(mu))
            }
            _ => None,
        }
    }

    /// H(t, x_i, p_i) + (K_H * μ)(x_i).
    pub fn eval_h(&self, t: f64, p: &ScalarField, mu: Option<&ScalarField>) -> Result<ScalarField> {
        let grid = p.grid();
        let mut out = Vec::with_capacity(grid.n_points());
        for (i, &pi) in p.values().iter().enumerate() {
            let x = grid.x(i);
            let v = match &self.kind {
                HamiltonianKind::QuadraticHinf { alpha, beta, theta } => {
                    let th = theta.eval(t, x);
                    check_theta(th)?;
                    let b = beta.eval(t, x);
                    alpha.eval(t, x) + b * b * pi * pi / (4.0 * th)
                }
                HamiltonianKind::LegendreConcave { running, control_range } => {
                    legendre_max(|u| u * pi + running(t, x, u), *control_range).1
                }
                HamiltonianKind::FiniteControls { controls, drift, running } => {
                    finite_max(controls, |u| drift(t, x, u) * pi + running(t, x, u)).1
                }
            };
            out.push(v);
        }
        if let Some(mf) = self.mean_field(p, mu) {
            out.iter_mut().zip(mf.values()).for_each(|(o, m)| *o += m);
        }
        ScalarField::new(grid, out)
            .map_err(|_| Error::NonFinite(format!("Hamiltonian value at t = {t}")))
    }

    /// The maximiser û(t, x_i) for gradient p.
    pub fn optimal_control(&self, t: f64, p: &ScalarField) -> Result<ControlField> {
        let grid = p.grid();
        let mut ties = 0;
        let mut out = Vec::with_capacity(grid.n_points());
        for (i, &pi) in p.values().iter().enumerate() {
            let x = grid.x(i);
            let u = match &self.kind {
                HamiltonianKind::QuadraticHinf { beta, theta, .. } => {
                    let th = theta.eval(t, x);
                    check_theta(th)?;
                    beta.eval(t, x) * pi / (2.0 * th)
                }
                HamiltonianKind::LegendreConcave { running, control_range } => {
                    legendre_max(|u| u * pi + running(t, x, u), *control_range).0
                }
                HamiltonianKind::FiniteControls { controls, drift, running } => {
                    let (k, _, tie) = finite_max(controls, |u| drift(t, x, u) * pi + running(t, x, u));
                    ties += tie as usize;
                    controls[k]
                }
            };
            out.push(u);
        }
        let values = ScalarField::new(grid, out)
            .map_err(|_| Error::NonFinite(format!("feedback control at t = {t}")))?;
        Ok(ControlField { values, ties })
    }

    /// Controlled drift h(t, x_i, u_i).
    pub fn drift(&self, t: f64, u: &ScalarField) -> ScalarField {
        let grid = u.grid();
        let values = u
            .values()
            .iter()
            .enumerate()
            .map(|(i, &ui)| {
                let x = grid.x(i);
                match &self.kind {
                    HamiltonianKind::QuadraticHinf { beta, .. } => beta.eval(t, x) * ui,
                    HamiltonianKind::LegendreConcave { .. } => ui,
                    HamiltonianKind::FiniteControls { drift, .. } => drift(t, x, ui),
                }
            })
            .collect();
        ScalarField::from_vec_unchecked(grid, values)
    }
}

fn check_theta(th: f64) -> Result<()> {
    if !(th.is_finite() && th >= THETA_MIN) {
        return Err(Error::InvalidArgument(format!("theta = {th} must be ≥ {THETA_MIN:e}")));
    }
    Ok(())
}

/// Grid search then golden-section polish of a unimodal objective.
fn legendre_max(f: impl Fn(f64) -> f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    let step = (hi - lo) / LEGENDRE_GRID as f64;
    let node = |k: usize| if k == LEGENDRE_GRID { hi } else { lo + k as f64 * step };
    let (mut best_k, mut best_v) = (0, f(lo));
    for k in 1..=LEGENDRE_GRID {
        let v = f(node(k));
        if v > best_v {
            best_k = k;
            best_v = v;
        }
    }
    let mut a = node(best_k.saturating_sub(1));
    let mut b = node((best_k + 1).min(LEGENDRE_GRID));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > LEGENDRE_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let u = 0.5 * (a + b);
    let v = f(u);
    if v >= best_v {
        (u, v)
    } else {
        (node(best_k), best_v)
    }
}

/// (argmax with lowest-index tie-break, max, tie flag).
fn finite_max(controls: &[f64], f: impl Fn(f64) -> f64) -> (usize, f64, bool) {
    let vals: Vec<f64> = controls.iter().map(|&u| f(u)).collect();
    let mut k = 0;
    for (i, &v) in vals.iter().enumerate().skip(1) {
        if v > vals[k] {
            k = i;
        }
    }
    let best = vals[k];
    let tie = vals
        .iter()
        .enumerate()
        .any(|(i, &v)| i != k && (best - v).abs() <= TIE_TOL * (1.0 + best.abs()));
    (k, best, tie)
}
