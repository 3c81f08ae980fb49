//! HJB equations with a measure-flow parameter in mild (Duhamel) form:
//!
//!   V(t) = U^{t,T}V^T + ∫_t^T U^{t,s} H_s(·, ∇V(s)) ds,
//!
//! solved by Picard iteration of the map Ψ.

mod hamiltonian;
mod mild;

pub use hamiltonian::{ControlField, ControlFn, HamiltonianKind, HamiltonianSpec, THETA_MIN};
pub use mild::{
    apply_psi, apply_psi_direct, duhamel_residual, solve_mild, MildDiagnostics, MildOptions, MildSolution,
};

use crate::error::{Error, Result};
use crate::fnspace::{gradient, FieldPath, Grid1D, MeasureFlow, ScalarField, TimeGrid};
use crate::generator::{Coef, GeneratorSpec, Kernel};
use crate::propagator::{PropagatorEngine, Scheme};
use std::sync::Arc;

/// V^T(x; μ_T) = base(x) + (K_T * μ_T)(x).
#[derive(Debug, Clone)]
pub struct TerminalSpec {
    /// Read as base(x) = base.eval(T, x).
    pub base: Coef,
    pub coupling: Kernel,
}

impl TerminalSpec {
    pub fn new(base: Coef) -> Self {
        Self { base, coupling: Kernel::Zero }
    }

    pub fn with_coupling(mut self, kernel: Kernel) -> Self {
        self.coupling = kernel;
        self
    }

    pub fn is_mu_free(&self) -> bool {
        self.coupling.is_zero()
    }

    pub fn eval(&self, grid: Grid1D, horizon: f64, mu_t: &ScalarField) -> ScalarField {
        let base = ScalarField::from_fn(grid, |x| self.base.eval(horizon, x));
        if self.coupling.is_zero() {
            base
        } else {
            &base + &self.coupling.convolve(mu_t)
        }
    }

    /// Derivative of V^T in the direction χ of the terminal measure.
    pub fn gateaux(&self, chi: &ScalarField) -> ScalarField {
        self.coupling.convolve(chi)
    }
}

/// Everything needed to evaluate Ψ along a fixed measure flow.
#[derive(Debug, Clone)]
pub struct HjbProblem {
    generator: Arc<GeneratorSpec>,
    hamiltonian: Arc<HamiltonianSpec>,
    terminal: Arc<TerminalSpec>,
    flow: MeasureFlow,
    substeps: usize,
    scheme: Scheme,
    engine: Arc<PropagatorEngine>,
}

impl HjbProblem {
    pub fn new(
        generator: Arc<GeneratorSpec>,
        hamiltonian: Arc<HamiltonianSpec>,
        terminal: Arc<TerminalSpec>,
        flow: MeasureFlow,
        substeps: usize,
        scheme: Scheme,
    ) -> Result<Self> {
        let engine = PropagatorEngine::new(
            generator.clone(),
            flow.grid(),
            flow.time().clone(),
            Some(flow.clone()),
            substeps,
            scheme,
        )?;
        let problem = Self { generator, hamiltonian, terminal, flow, substeps, scheme, engine: Arc::new(engine) };
        let vt = problem.terminal_value();
        if !vt.is_finite() {
            return Err(Error::NonFinite("terminal data".into()));
        }
        Ok(problem)
    }

    /// Same problem along another flow on the same grids.
    pub fn with_flow(&self, flow: MeasureFlow) -> Result<Self> {
        if flow.grid() != self.grid() || flow.time() != self.time() {
            return Err(Error::GridMismatch("replacement flow lives on different grids".into()));
        }
        Self::new(
            self.generator.clone(),
            self.hamiltonian.clone(),
            self.terminal.clone(),
            flow,
            self.substeps,
            self.scheme,
        )
    }

    pub fn grid(&self) -> Grid1D {
        self.flow.grid()
    }

    pub fn time(&self) -> &TimeGrid {
        self.flow.time()
    }

    pub fn generator(&self) -> &Arc<GeneratorSpec> {
        &self.generator
    }

    pub fn hamiltonian(&self) -> &Arc<HamiltonianSpec> {
        &self.hamiltonian
    }

    pub fn terminal(&self) -> &Arc<TerminalSpec> {
        &self.terminal
    }

    pub fn flow(&self) -> &MeasureFlow {
        &self.flow
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn engine(&self) -> &PropagatorEngine {
        &self.engine
    }

    /// V^T(·; μ_T).
    pub fn terminal_value(&self) -> ScalarField {
        let m = self.time().steps();
        self.terminal.eval(self.grid(), self.time().horizon(), self.flow.density(m))
    }

    /// The generator, Hamiltonian and terminal data ignore μ.
    pub fn is_uncoupled(&self) -> bool {
        self.generator.kernel.is_zero() && self.hamiltonian.is_mu_free() && self.terminal.is_mu_free()
    }
}

/// û(t,·) = argmax along ∇V(t) at every node; any tie is an error.
pub fn feedback_control(problem: &HjbProblem, v: &FieldPath) -> Result<FieldPath> {
    let time = problem.time();
    let fields = v
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let c = problem.hamiltonian().optimal_control(time.node(i), &gradient(f))?;
            if c.ties > 0 {
                return Err(Error::ArgmaxTie { t: time.node(i), count: c.ties });
            }
            Ok(c.values)
        })
        .collect::<Result<Vec<_>>>()?;
    FieldPath::new(time.clone(), fields)
}
