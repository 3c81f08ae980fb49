use super::HjbProblem;
use crate::error::{Error, Result};
use crate::fnspace::{gradient, norm, FieldPath, NormKind, ScalarField};
use rayon::prelude::*;

/// Diffs below this are treated as round-off when estimating the factor.
const ROUNDOFF_FLOOR: f64 = 1e-12;
/// A diff above this counts as divergence.
const DIVERGENCE: f64 = 1e8;

/// Picard stopping rule and horizon-splitting budget.
#[derive(Debug, Clone, Copy)]
pub struct MildOptions {
    /// Stop when sup_t ‖V^{k+1}(t) − V^k(t)‖_{C¹} ≤ tol.
    pub tol: f64,
    pub max_iters: usize,
    pub max_split_depth: usize,
}

impl Default for MildOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 100, max_split_depth: 6 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MildDiagnostics {
    /// Picard iterations summed over horizon segments.
    pub iterations: usize,
    /// sup_t ‖V^{k+1} − V^k‖_{C¹} per iteration, segments in solve order.
    pub diffs: Vec<f64>,
    /// Largest ratio of consecutive diffs above round-off.
    pub contraction_factor: Option<f64>,
    /// Number of horizon bisections performed.
    pub splits: usize,
    /// Node-index ranges solved as separate segments, latest time first.
    pub segments: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct MildSolution {
    pub value: FieldPath,
    pub diagnostics: MildDiagnostics,
}

/// H_j = H(t_j, ∇φ_j, μ_j) for nodes a..=b.
fn hamiltonian_terms(problem: &HjbProblem, a: usize, b: usize, phi: &[ScalarField]) -> Result<Vec<ScalarField>> {
    let time = problem.time();
    (a..=b)
        .into_par_iter()
        .map(|j| {
            problem
                .hamiltonian()
                .eval_h(time.node(j), &gradient(&phi[j - a]), Some(problem.flow().density(j)))
        })
        .collect()
}

/// Ψ on nodes a..=b with terminal data at t_b; `phi` holds nodes a..=b.
fn psi_segment(
    problem: &HjbProblem,
    a: usize,
    b: usize,
    terminal: &ScalarField,
    phi: &[ScalarField],
) -> Result<Vec<ScalarField>> {
    let time = problem.time();
    let engine = problem.engine();
    let h = hamiltonian_terms(problem, a, b, phi)?;
    let mut out = vec![terminal.clone(); b - a + 1];
    for i in (a..b).rev() {
        let half = 0.5 * (time.node(i + 1) - time.node(i));
        let carried = out[i + 1 - a].axpy(half, &h[i + 1 - a]);
        out[i - a] = engine.propagate(time.node(i), time.node(i + 1), &carried)?.axpy(half, &h[i - a]);
    }
    Ok(out)
}

/// Ψ(φ)(t_i) by backward recursion over time nodes:
/// Ψ_i = U^{t_i,t_{i+1}}[Ψ_{i+1} + (Δ_i/2)H_{i+1}] + (Δ_i/2)H_i.
pub fn apply_psi(problem: &HjbProblem, phi: &FieldPath) -> Result<FieldPath> {
    check_path(problem, phi)?;
    let m = problem.time().steps();
    let out = psi_segment(problem, 0, m, &problem.terminal_value(), phi.fields())?;
    FieldPath::new(problem.time().clone(), out)
}

/// Ψ(φ)(t_i) = U^{t_i,T}V^T + Σ_j w_j U^{t_i,t_j}H_j evaluated term by term
/// (trapezoid weights w_j on nodes j ≥ i). Quadratic cost; a cross-check.
pub fn apply_psi_direct(problem: &HjbProblem, phi: &FieldPath) -> Result<FieldPath> {
    check_path(problem, phi)?;
    let time = problem.time();
    let m = time.steps();
    let engine = problem.engine();
    let h = hamiltonian_terms(problem, 0, m, phi.fields())?;
    let vt = problem.terminal_value();
    let out = (0..=m)
        .map(|i| {
            let mut acc = engine.propagate(time.node(i), time.horizon(), &vt)?;
            for j in i..=m {
                let left = if j > i { time.node(j) - time.node(j - 1) } else { 0.0 };
                let right = if j < m { time.node(j + 1) - time.node(j) } else { 0.0 };
                let w = 0.5 * (left + right);
                if w > 0.0 {
                    acc = acc.axpy(w, &engine.propagate(time.node(i), time.node(j), &h[j])?);
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    FieldPath::new(time.clone(), out)
}

fn check_path(problem: &HjbProblem, phi: &FieldPath) -> Result<()> {
    if phi.grid() != problem.grid() || phi.time() != problem.time() {
        return Err(Error::GridMismatch("path and problem grids differ".into()));
    }
    Ok(())
}

fn sup_c1(a: &[ScalarField], b: &[ScalarField]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max(norm(&(x - y), NormKind::C1)))
}

/// Picard iteration V^{k+1} = Ψ(V^k) from V⁰(t) = U^{t,T}V^T, with horizon
/// bisection when a segment fails to contract.
pub fn solve_mild(problem: &HjbProblem, opts: MildOptions) -> Result<MildSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive (got {})", opts.tol)));
    }
    if opts.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be ≥ 1".into()));
    }
    problem.engine().prepare()?;
    let m = problem.time().steps();
    let mut diag = MildDiagnostics::default();
    let values = solve_segment(problem, 0, m, &problem.terminal_value(), 0, opts, &mut diag)?;
    diag.contraction_factor = contraction_factor(&diag.diffs);
    Ok(MildSolution { value: FieldPath::new(problem.time().clone(), values)?, diagnostics: diag })
}

fn solve_segment(
    problem: &HjbProblem,
    a: usize,
    b: usize,
    terminal: &ScalarField,
    depth: usize,
    opts: MildOptions,
    diag: &mut MildDiagnostics,
) -> Result<Vec<ScalarField>> {
    let time = problem.time();
    let engine = problem.engine();
    let mut v = vec![terminal.clone(); b - a + 1];
    for i in (a..b).rev() {
        v[i - a] = engine.propagate(time.node(i), time.node(i + 1), &v[i + 1 - a])?;
    }
    let mut history = Vec::new();
    for _ in 0..opts.max_iters {
        let next = psi_segment(problem, a, b, terminal, &v)?;
        let diff = sup_c1(&next, &v);
        history.push(diff);
        diag.diffs.push(diff);
        diag.iterations += 1;
        v = next;
        if diff <= opts.tol {
            diag.segments.push((a, b));
            return Ok(v);
        }
        if !diff.is_finite() || diff > DIVERGENCE {
            break;
        }
    }
    if depth >= opts.max_split_depth || b - a < 2 {
        return Err(Error::NonContraction { depth, history });
    }
    diag.splits += 1;
    let mid = (a + b) / 2;
    let right = solve_segment(problem, mid, b, terminal, depth + 1, opts, diag)?;
    let mut left = solve_segment(problem, a, mid, &right[0], depth + 1, opts, diag)?;
    left.pop();
    left.extend(right);
    Ok(left)
}

fn contraction_factor(diffs: &[f64]) -> Option<f64> {
    diffs
        .windows(2)
        .filter(|w| w[0] > ROUNDOFF_FLOOR)
        .map(|w| w[1] / w[0])
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |x| x.max(r))))
}

/// sup_t ‖V(t) − Ψ(V)(t)‖_{C¹}.
pub fn duhamel_residual(problem: &HjbProblem, v: &FieldPath) -> Result<f64> {
    let psi = apply_psi(problem, v)?;
    Ok(v.sup_distance(&psi, NormKind::C1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::FlowKind;
    use crate::fnspace::{make_grid, TimeGrid};
    use crate::generator::{Coef, GeneratorSpec};
    use crate::hjb::{HamiltonianSpec, TerminalSpec};
    use crate::propagator::Scheme;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn problem(h: HamiltonianSpec, horizon: f64, steps: usize) -> HjbProblem {
        let g = make_grid(32, PI).unwrap();
        let tg = TimeGrid::uniform(horizon, steps).unwrap();
        let flow = FlowKind::Uniform.build(g, &tg).unwrap();
        HjbProblem::new(
            Arc::new(GeneratorSpec::heat(2.0).unwrap()),
            Arc::new(h),
            Arc::new(TerminalSpec::new(Coef::var(|_, x| x.cos()))),
            flow,
            1,
            Scheme::CrankNicolson,
        )
        .unwrap()
    }

    #[test]
    fn zero_hamiltonian_converges_in_one_iteration() {
        let p = problem(HamiltonianSpec::zero(), 1.0, 50);
        let sol = solve_mild(&p, MildOptions::default()).unwrap();
        assert_eq!(sol.diagnostics.iterations, 1);
        assert_eq!(sol.diagnostics.diffs, vec![0.0]);
        let exact = ScalarField::from_fn(p.grid(), |x| (-1.0f64).exp() * x.cos());
        // O(h²) spatial error at N = 32.
        assert!((sol.value.field(0) - &exact).max_abs() < 2e-3);
    }

    #[test]
    fn psi_is_phi_independent_without_hamiltonian() {
        let p = problem(HamiltonianSpec::zero(), 0.5, 10);
        let phi1 = FieldPath::new(p.time().clone(), vec![ScalarField::zeros(p.grid()); 11]).unwrap();
        let phi2 = FieldPath::new(
            p.time().clone(),
            vec![ScalarField::from_fn(p.grid(), |x| (3.0 * x).sin()); 11],
        )
        .unwrap();
        assert_eq!(apply_psi(&p, &phi1).unwrap(), apply_psi(&p, &phi2).unwrap());
    }

    #[test]
    fn constant_running_reward() {
        // h ≡ 0, J ≡ 0.7: Ψ(φ)(t) = U^{t,T}V^T + (T − t)·0.7.
        let h = HamiltonianSpec::finite(vec![-1.0, 1.0], |_, _, _| 0.0, |_, _, u| if u > 0.0 { 0.7 } else { 0.2 })
            .unwrap();
        let p = problem(h, 1.0, 20);
        let phi = FieldPath::new(p.time().clone(), vec![ScalarField::from_fn(p.grid(), f64::sin); 21]).unwrap();
        let psi = apply_psi(&p, &phi).unwrap();
        let base = p.engine().propagate_path(&p.terminal_value()).unwrap();
        for (i, f) in psi.fields().iter().enumerate() {
            let t = p.time().node(i);
            let expected = base[i].map(|v| v + 0.7 * (1.0 - t));
            assert!((f - &expected).max_abs() < 1e-12);
        }
    }

    #[test]
    fn recursion_matches_direct_quadrature() {
        let h = HamiltonianSpec::quadratic(0.1.into(), 1.0.into(), 0.5.into()).unwrap();
        let p = problem(h, 0.5, 10);
        let phi = FieldPath::new(
            p.time().clone(),
            (0..11).map(|i| ScalarField::from_fn(p.grid(), |x| (x + 0.1 * i as f64).cos())).collect(),
        )
        .unwrap();
        let a = apply_psi(&p, &phi).unwrap();
        let b = apply_psi_direct(&p, &phi).unwrap();
        assert!(a.sup_distance(&b, NormKind::C) <= 1e-10);
    }

    #[test]
    fn negative_control_residual() {
        let h = HamiltonianSpec::quadratic(0.0.into(), 1.0.into(), 0.5.into()).unwrap();
        let p = problem(h, 0.5, 20);
        let vt = p.terminal_value();
        let frozen = FieldPath::new(p.time().clone(), vec![vt; 21]).unwrap();
        assert!(duhamel_residual(&p, &frozen).unwrap() > 1e-3);
        let sol = solve_mild(&p, MildOptions::default()).unwrap();
        assert!(duhamel_residual(&p, &sol.value).unwrap() <= 10.0 * 1e-8);
    }

    #[test]
    fn contraction_factor_ignores_roundoff() {
        assert_eq!(contraction_factor(&[1.0, 0.5, 0.1]), Some(0.5));
        assert_eq!(contraction_factor(&[1e-13, 1e-14]), None);
        assert_eq!(contraction_factor(&[0.0]), None);
    }

    #[test]
    fn horizon_splitting() {
        let h = HamiltonianSpec::quadratic(0.0.into(), 1.0.into(), 0.5.into()).unwrap();
        let p = problem(h, 1.0, 32);
        let opts = MildOptions { tol: 1e-8, max_iters: 6, max_split_depth: 6 };
        let sol = solve_mild(&p, opts).unwrap();
        assert!(sol.diagnostics.splits > 0);
        assert!(sol.diagnostics.segments.len() > 1);
        let full = solve_mild(&p, MildOptions::default()).unwrap();
        assert!(sol.value.sup_distance(&full.value, NormKind::C1) < 1e-6);
        let fail = solve_mild(&p, MildOptions { tol: 1e-14, max_iters: 1, max_split_depth: 2 });
        assert!(matches!(fail, Err(Error::NonContraction { .. })));
    }

    #[test]
    fn rejects_bad_options() {
        let p = problem(HamiltonianSpec::zero(), 0.5, 4);
        assert!(solve_mild(&p, MildOptions { tol: 0.0, ..Default::default() }).is_err());
        assert!(solve_mild(&p, MildOptions { max_iters: 0, ..Default::default() }).is_err());
    }
}
