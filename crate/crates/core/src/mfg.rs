//! Forward kinetic evolution of the population and the coupled
//! backward-forward fixed point.
//!
//! The forward operator is the plain transpose of the backward matrix A, so
//! (A f, μ) = (f, Aᵀμ) holds exactly for the weighted pairing h·Σ f_i μ_i and
//! zero row sums of A conserve mass.

use crate::error::{Error, Result};
use crate::fnspace::{dual_norm_c2, dual_norm_surrogate, check_density, FieldPath, MeasureFlow, ScalarField, TimeGrid};
use crate::generator::{assemble_a, GeneratorSpec};
use crate::hjb::{
    duhamel_residual, feedback_control, solve_mild, HamiltonianSpec, HjbProblem, MildOptions, TerminalSpec,
};
use crate::propagator::Scheme;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

/// Cumulative clipped mass above which the forward run is rejected.
pub const MAX_POSITIVITY_DEFECT: f64 = 0.01;

/// Maps a feedback control field to the drift h(t, x, u(x)) of the agent.
pub trait ControlledDrift: Sync {
    fn controlled_drift(&self, t: f64, u: &ScalarField) -> ScalarField;
}

impl ControlledDrift for HamiltonianSpec {
    fn controlled_drift(&self, t: f64, u: &ScalarField) -> ScalarField {
        self.drift(t, u)
    }
}

/// h = u.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDrift;

impl ControlledDrift for IdentityDrift {
    fn controlled_drift(&self, _t: f64, u: &ScalarField) -> ScalarField {
        u.clone()
    }
}

/// A forward run with its positivity bookkeeping.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub flow: MeasureFlow,
    /// Clipped negative mass accumulated over all steps, per step.
    pub defect_history: Vec<f64>,
    pub positivity_defect: f64,
    /// max_n |h·Σμ_n − 1| before renormalization.
    pub max_mass_error: f64,
}

fn transpose_of_a(
    spec: &GeneratorSpec,
    drift: &dyn ControlledDrift,
    t: f64,
    mu: &ScalarField,
    u: &ScalarField,
) -> Result<DMatrix<f64>> {
    let h = drift.controlled_drift(t, u);
    Ok(assemble_a(spec, mu.grid(), t, Some(mu), &h)?.into_matrix().transpose())
}

/// (I − Δ/2·A⁺ᵀ)⁻¹(I + Δ/2·A⁻ᵀ)μ.
fn cn_step(at_lo: &DMatrix<f64>, at_hi: &DMatrix<f64>, dt: f64, mu: &DVector<f64>) -> Result<DVector<f64>> {
    let n = mu.len();
    let rhs = mu + at_lo * mu * (0.5 * dt);
    let lhs = DMatrix::<f64>::identity(n, n) - at_hi * (0.5 * dt);
    lhs.lu()
        .solve(&rhs)
        .ok_or(Error::SingularSolve { condition: f64::INFINITY })
}

/// Steps ∂_tμ = A[t, μ_t, u_t]ᵀμ forward from μ0 on the control's time grid.
///
/// Crank–Nicolson with one predictor-corrector sweep for the μ-dependence
/// of the drift; negative values are clipped and the density renormalized.
pub fn solve_forward(
    spec: &GeneratorSpec,
    drift: &dyn ControlledDrift,
    control: &FieldPath,
    mu0: &ScalarField,
) -> Result<ForwardSolution> {
    if control.grid() != mu0.grid() {
        return Err(Error::GridMismatch("control and initial density grids differ".into()));
    }
    check_density(mu0)?;
    let time = control.time().clone();
    let grid = mu0.grid();
    let h = grid.spacing();
    let mut densities = vec![mu0.clone()];
    let mut defect = 0.0;
    let mut defect_history = vec![0.0];
    let mut max_mass_error: f64 = 0.0;
    for n in 0..time.steps() {
        let (t0, t1) = (time.node(n), time.node(n + 1));
        let dt = t1 - t0;
        let cur = &densities[n];
        let v = DVector::from_column_slice(cur.values());
        let at_lo = transpose_of_a(spec, drift, t0, cur, control.field(n))?;
        let at_pred = transpose_of_a(spec, drift, t1, cur, control.field(n))?;
        let pred = cn_step(&at_lo, &at_pred, dt, &v)?;
        let pred = ScalarField::new(grid, pred.iter().copied().collect())?;
        let at_hi = transpose_of_a(spec, drift, t1, &pred, control.field(n + 1))?;
        let next = cn_step(&at_lo, &at_hi, dt, &v)?;
        let mass: f64 = next.iter().sum::<f64>() * h;
        max_mass_error = max_mass_error.max((mass - 1.0).abs());
        let clipped: f64 = next.iter().filter(|&&x| x < 0.0).map(|x| -x).sum::<f64>() * h;
        defect += clipped;
        defect_history.push(defect);
        if defect > MAX_POSITIVITY_DEFECT {
            return Err(Error::PositivityDefect { defect });
        }
        let positive: Vec<f64> = next.iter().map(|&x| x.max(0.0)).collect();
        let total: f64 = positive.iter().sum::<f64>() * h;
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::NonFinite(format!("forward density at t = {t1}")));
        }
        let values = if clipped > 0.0 { positive.iter().map(|x| x / total).collect() } else { positive };
        densities.push(ScalarField::new(grid, values)?);
    }
    Ok(ForwardSolution { flow: MeasureFlow::new(time, densities)?, defect_history, positivity_defect: defect, max_mass_error })
}

/// The coupled system without a flow: the flow is the unknown.
#[derive(Debug, Clone)]
pub struct MfgProblem {
    pub generator: Arc<GeneratorSpec>,
    pub hamiltonian: Arc<HamiltonianSpec>,
    pub terminal: Arc<TerminalSpec>,
    pub time: TimeGrid,
    pub substeps: usize,
    pub scheme: Scheme,
}

impl MfgProblem {
    /// The HJB problem along a given flow.
    pub fn hjb(&self, flow: MeasureFlow) -> Result<HjbProblem> {
        if flow.time() != &self.time {
            return Err(Error::GridMismatch("flow time grid differs from the problem's".into()));
        }
        HjbProblem::new(
            self.generator.clone(),
            self.hamiltonian.clone(),
            self.terminal.clone(),
            flow,
            self.substeps,
            self.scheme,
        )
    }

    pub fn is_uncoupled(&self) -> bool {
        self.generator.kernel.is_zero() && self.hamiltonian.is_mu_free() && self.terminal.is_mu_free()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MfgOptions {
    /// λ ∈ (0, 1].
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for MfgOptions {
    fn default() -> Self {
        Self { damping: 0.5, tol: 1e-6, max_iters: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct MfgSolution {
    /// The last flow the backward solve was run against.
    pub equilibrium_flow: MeasureFlow,
    pub value: FieldPath,
    pub control: FieldPath,
    /// Damped updates applied.
    pub iterations: usize,
    /// sup_t surrogate(Φ(μᵏ)_t − μᵏ_t) for every backward-forward pass.
    pub residual_history: Vec<f64>,
    pub positivity_defect: f64,
    pub converged: bool,
    /// Outer tolerance of the run; fixes the inner HJB tolerance too.
    pub tol: f64,
    /// The last residual recomputed with the LP dual norm.
    pub lp_residual: f64,
}

/// One backward solve along `flow` followed by the forward run it induces.
pub struct Pass {
    pub value: FieldPath,
    pub control: FieldPath,
    pub forward: ForwardSolution,
}

pub fn best_response(problem: &MfgProblem, flow: &MeasureFlow, opts: MildOptions) -> Result<Pass> {
    let hjb = problem.hjb(flow.clone())?;
    let value = solve_mild(&hjb, opts)?.value;
    let control = feedback_control(&hjb, &value)?;
    let forward = solve_forward(&problem.generator, problem.hamiltonian.as_ref(), &control, flow.density(0))?;
    Ok(Pass { value, control, forward })
}

fn surrogate_distance(a: &MeasureFlow, b: &MeasureFlow) -> f64 {
    a.densities()
        .par_iter()
        .zip(b.densities())
        .map(|(x, y)| dual_norm_surrogate(&(x - y)))
        .reduce(|| 0.0, f64::max)
}

fn lp_distance(a: &MeasureFlow, b: &MeasureFlow) -> Result<f64> {
    let d: Vec<f64> = a
        .densities()
        .par_iter()
        .zip(b.densities())
        .map(|(x, y)| dual_norm_c2(&(x - y)))
        .collect::<Result<_>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

/// Inner HJB tolerance tied to the outer one.
pub fn inner_options(tol: f64) -> MildOptions {
    MildOptions { tol: (tol * 1e-2).clamp(1e-12, 1e-8), ..MildOptions::default() }
}

/// Damped Picard iteration μᵏ⁺¹ = (1−λ)μᵏ + λΦ(μᵏ) from μ0 frozen in time.
///
/// Stops as soon as the undamped residual of the current iterate is ≤ tol;
/// hitting max_iters returns the last iterate with converged = false.
pub fn solve_mfg(problem: &MfgProblem, mu0: &ScalarField, opts: MfgOptions) -> Result<MfgSolution> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidArgument(format!("damping λ = {} outside (0, 1]", opts.damping)));
    }
    if !(opts.tol > 0.0) || opts.max_iters == 0 {
        return Err(Error::InvalidArgument("tol must be positive and max_iters ≥ 1".into()));
    }
    let inner = inner_options(opts.tol);
    let mut flow = MeasureFlow::frozen(problem.time.clone(), mu0)?;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let pass = best_response(problem, &flow, inner)?;
        let res = surrogate_distance(&pass.forward.flow, &flow);
        history.push(res);
        let converged = res <= opts.tol;
        if converged || iterations == opts.max_iters {
            let lp_residual = lp_distance(&pass.forward.flow, &flow)?;
            return Ok(MfgSolution {
                equilibrium_flow: flow,
                value: pass.value,
                control: pass.control,
                iterations,
                residual_history: history,
                positivity_defect: pass.forward.positivity_defect,
                converged,
                tol: opts.tol,
                lp_residual,
            });
        }
        let next = flow
            .densities()
            .iter()
            .zip(pass.forward.flow.densities())
            .map(|(a, b)| a.lerp(b, opts.damping))
            .collect();
        flow = MeasureFlow::new(problem.time.clone(), next)?;
        iterations += 1;
    }
}

/// The two parts of the equilibrium residual.
#[derive(Debug, Clone, Copy)]
pub struct ResidualParts {
    /// sup_t surrogate(Φ(μ)_t − μ_t).
    pub flow: f64,
    /// Duhamel residual of the reported value path along μ.
    pub duhamel: f64,
}

impl ResidualParts {
    pub fn total(&self) -> f64 {
        self.flow + self.duhamel
    }
}

pub fn equilibrium_residual_parts(solution: &MfgSolution, problem: &MfgProblem) -> Result<ResidualParts> {
    let flow = &solution.equilibrium_flow;
    if solution.value.time() != flow.time() || solution.value.grid() != flow.grid() {
        return Err(Error::GridMismatch("value path and flow live on different grids".into()));
    }
    let pass = best_response(problem, flow, inner_options(solution.tol))?;
    let hjb = problem.hjb(flow.clone())?;
    Ok(ResidualParts {
        flow: surrogate_distance(&pass.forward.flow, flow),
        duhamel: duhamel_residual(&hjb, &solution.value)?,
    })
}

/// One more backward-forward pass from the reported equilibrium.
pub fn equilibrium_residual(solution: &MfgSolution, problem: &MfgProblem) -> Result<f64> {
    Ok(equilibrium_residual_parts(solution, problem)?.total())
}
