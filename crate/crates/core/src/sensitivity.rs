//! Sensitivity of the value function in the measure flow.
//!
//! Flows are compared along the segment μ_α = μ¹ + α(μ² − μ¹), α ∈ [0, 1].
//! Distances between flows are sup_t of the dual (C²)* norm of μ¹_t − μ²_t.

use crate::error::{Error, Result};
use crate::fnspace::{dual_norm_c2, dual_norm_surrogate, FieldPath, MeasureFlow, NormKind, ScalarField};
use crate::generator::gateaux_l;
use crate::hjb::{feedback_control, solve_mild, HjbProblem, MildDiagnostics, MildOptions};
use rayon::prelude::*;

/// Step of the α finite difference.
pub const ALPHA_FD_STEP: f64 = 1e-3;
/// Discrepancy above which the finite difference is Richardson-extrapolated.
pub const RICHARDSON_TRIGGER: f64 = 0.05;

/// Two flows on identical grids and the α nodes at which to compare them.
#[derive(Debug, Clone)]
pub struct FlowPair {
    pub mu1: MeasureFlow,
    pub mu2: MeasureFlow,
    pub alpha_grid: Vec<f64>,
}

impl FlowPair {
    pub fn new(mu1: MeasureFlow, mu2: MeasureFlow, alpha_grid: Vec<f64>) -> Result<Self> {
        if mu1.grid() != mu2.grid() || mu1.time() != mu2.time() {
            return Err(Error::GridMismatch("flows of a pair must share grids".into()));
        }
        if alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("alpha grid must lie in [0, 1]".into()));
        }
        if !alpha_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("alpha grid must be strictly increasing".into()));
        }
        if alpha_grid.first() != Some(&0.0) || alpha_grid.last() != Some(&1.0) {
            return Err(Error::InvalidArgument("alpha grid must contain 0 and 1".into()));
        }
        Ok(Self { mu1, mu2, alpha_grid })
    }

    /// Five equally spaced α nodes.
    pub fn with_default_grid(mu1: MeasureFlow, mu2: MeasureFlow) -> Result<Self> {
        Self::new(mu1, mu2, vec![0.0, 0.25, 0.5, 0.75, 1.0])
    }

    /// χ_i = μ²_i − μ¹_i.
    pub fn direction(&self, i: usize) -> ScalarField {
        self.mu2.density(i) - self.mu1.density(i)
    }

    pub fn is_degenerate(&self) -> bool {
        self.mu1 == self.mu2
    }
}

/// μ¹ + α(μ² − μ¹) node by node; exact at α ∈ {0, 1}.
pub fn interpolate_flow(pair: &FlowPair, alpha: f64) -> Result<MeasureFlow> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside [0, 1]")));
    }
    let densities = pair
        .mu1
        .densities()
        .iter()
        .zip(pair.mu2.densities())
        .map(|(a, b)| a.lerp(b, alpha))
        .collect();
    MeasureFlow::new(pair.mu1.time().clone(), densities)
}

/// sup_t dual_norm_c2(μ¹_t − μ²_t).
pub fn flow_distance(mu1: &MeasureFlow, mu2: &MeasureFlow) -> Result<f64> {
    let n = mu1.densities().len();
    let d: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| dual_norm_c2(&(mu1.density(i) - mu2.density(i))))
        .collect::<Result<_>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

/// sup_t of the spectral surrogate of μ¹_t − μ²_t.
pub fn flow_distance_surrogate(mu1: &MeasureFlow, mu2: &MeasureFlow) -> f64 {
    mu1.densities()
        .iter()
        .zip(mu2.densities())
        .fold(0.0, |m, (a, b)| m.max(dual_norm_surrogate(&(a - b))))
}

/// W_α(t) = U_α^{t,T} V^T_α: terminal data propagated along μ_α.
pub fn w_alpha(problem: &HjbProblem, pair: &FlowPair, alpha: f64) -> Result<FieldPath> {
    let p = problem.with_flow(interpolate_flow(pair, alpha)?)?;
    let path = p.engine().propagate_path(&p.terminal_value())?;
    FieldPath::new(p.time().clone(), path)
}

/// ∂W/∂α from the representation formula next to a finite-difference check.
#[derive(Debug, Clone)]
pub struct AlphaDerivative {
    /// U^{t,T}∂_αV^T + ∫_t^T U^{t,r} D_χL[r] U^{r,T}V^T dr (trapezoid in r).
    pub representation: FieldPath,
    pub fd_check: FieldPath,
    /// One-sided difference near α ∈ {0, 1}; its error bound is doubled.
    pub one_sided: bool,
    /// The plain difference disagreed by more than 5% and was extrapolated.
    pub richardson: bool,
}

pub fn w_alpha_derivative(problem: &HjbProblem, pair: &FlowPair, alpha: f64) -> Result<AlphaDerivative> {
    let p = problem.with_flow(interpolate_flow(pair, alpha)?)?;
    let time = p.time().clone();
    let grid = p.grid();
    let m = time.steps();
    let engine = p.engine();
    engine.prepare()?;

    let w = engine.propagate_path(&p.terminal_value())?;
    let dvt = p.terminal().gateaux(&pair.direction(m));
    let mut rep = engine.propagate_path(&dvt)?;

    let z: Vec<ScalarField> = (0..=m)
        .into_par_iter()
        .map(|j| Ok(gateaux_l(p.generator(), grid, time.node(j), &pair.direction(j))?.apply(&w[j])))
        .collect::<Result<_>>()?;
    let mut integral = ScalarField::zeros(grid);
    for i in (0..m).rev() {
        let half = 0.5 * (time.node(i + 1) - time.node(i));
        let carried = integral.axpy(half, &z[i + 1]);
        integral = engine.propagate(time.node(i), time.node(i + 1), &carried)?.axpy(half, &z[i]);
        rep[i] = &rep[i] + &integral;
    }
    let representation = FieldPath::new(time.clone(), rep)?;

    let one_sided = alpha - ALPHA_FD_STEP < 0.0 || alpha + ALPHA_FD_STEP > 1.0;
    let fd = |eps: f64| -> Result<FieldPath> {
        let (lo, hi) = if alpha - eps < 0.0 {
            (alpha, alpha + eps)
        } else if alpha + eps > 1.0 {
            (alpha - eps, alpha)
        } else {
            (alpha - eps, alpha + eps)
        };
        let a = w_alpha(problem, pair, lo)?;
        let b = w_alpha(problem, pair, hi)?;
        let fields = a.fields().iter().zip(b.fields()).map(|(x, y)| &(y - x) * (1.0 / (hi - lo))).collect();
        FieldPath::new(time.clone(), fields)
    };
    let mut fd_check = fd(ALPHA_FD_STEP)?;
    let mut richardson = false;
    if relative_discrepancy(&representation, &fd_check) > RICHARDSON_TRIGGER {
        let half = fd(0.5 * ALPHA_FD_STEP)?;
        let (wa, wb) = if one_sided { (2.0, -1.0) } else { (4.0 / 3.0, -1.0 / 3.0) };
        let fields = half
            .fields()
            .iter()
            .zip(fd_check.fields())
            .map(|(h, f)| &(h * wa) + &(f * wb))
            .collect();
        fd_check = FieldPath::new(time.clone(), fields)?;
        richardson = true;
    }
    Ok(AlphaDerivative { representation, fd_check, one_sided, richardson })
}

/// sup_t‖a − b‖_C / sup_t‖b‖_C (0 when both vanish).
pub fn relative_discrepancy(a: &FieldPath, b: &FieldPath) -> f64 {
    let num = a.sup_distance(b, NormKind::C);
    let den = b.sup_norm(NormKind::C);
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// One row of the α-pair table.
#[derive(Debug, Clone)]
pub struct AlphaPairEntry {
    pub alpha_i: f64,
    pub alpha_j: f64,
    /// sup_t ‖V_{α_i} − V_{α_j}‖_{C¹}.
    pub diff: f64,
    /// diff / |α_i − α_j|.
    pub ratio: f64,
}

/// Lipschitz study of V in the measure flow for one pair.
#[derive(Debug, Clone)]
pub struct SensitivityReport {
    pub alphas: Vec<f64>,
    pub values: Vec<FieldPath>,
    pub diagnostics: Vec<MildDiagnostics>,
    pub pair_table: Vec<AlphaPairEntry>,
    /// sup_t dual_norm_c2(μ¹_t − μ²_t).
    pub flow_distance: f64,
    pub flow_distance_surrogate: f64,
    /// None when the flow distance vanishes.
    pub lipschitz_v: Option<f64>,
    pub lipschitz_grad_v: Option<f64>,
    pub k1_feedback: Option<f64>,
    /// max over α-pairs of |ratio − endpoint ratio| / endpoint ratio.
    pub alpha_spread: Option<f64>,
}

fn pair_table(alphas: &[f64], paths: &[FieldPath]) -> Vec<AlphaPairEntry> {
    let mut table = Vec::new();
    for i in 0..alphas.len() {
        for j in i + 1..alphas.len() {
            let diff = paths[i].sup_distance(&paths[j], NormKind::C1);
            table.push(AlphaPairEntry {
                alpha_i: alphas[i],
                alpha_j: alphas[j],
                diff,
                ratio: diff / (alphas[j] - alphas[i]),
            });
        }
    }
    table
}

/// Spread of the α-pair ratios around the endpoint ratio; None if it vanishes.
pub fn alpha_spread(table: &[AlphaPairEntry]) -> Option<f64> {
    let end = table.iter().find(|e| e.alpha_i == 0.0 && e.alpha_j == 1.0)?.ratio;
    if end == 0.0 {
        return None;
    }
    Some(table.iter().fold(0.0, |m, e| m.max((e.ratio - end).abs() / end)))
}

/// The α-pair table of W_α and its spread.
pub fn w_alpha_table(problem: &HjbProblem, pair: &FlowPair) -> Result<(Vec<AlphaPairEntry>, Option<f64>)> {
    let paths: Vec<FieldPath> = pair
        .alpha_grid
        .par_iter()
        .map(|&a| w_alpha(problem, pair, a))
        .collect::<Result<_>>()?;
    let table = pair_table(&pair.alpha_grid, &paths);
    let spread = alpha_spread(&table);
    Ok((table, spread))
}

fn sup_c(a: &[ScalarField], b: &[ScalarField]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).max_abs()))
}

fn guarded(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Solves the HJB at every α of the pair and fills the Lipschitz report.
pub fn lipschitz_report(problem: &HjbProblem, pair: &FlowPair, opts: MildOptions) -> Result<SensitivityReport> {
    if pair.alpha_grid.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "alpha grid needs at least 5 nodes (got {})",
            pair.alpha_grid.len()
        )));
    }
    let solved: Vec<_> = pair
        .alpha_grid
        .par_iter()
        .map(|&a| {
            let p = problem.with_flow(interpolate_flow(pair, a)?)?;
            solve_mild(&p, opts)
        })
        .collect::<Result<_>>()?;
    let (values, diagnostics): (Vec<_>, Vec<_>) = solved.into_iter().map(|s| (s.value, s.diagnostics)).unzip();
    let table = pair_table(&pair.alpha_grid, &values);
    let distance = flow_distance(&pair.mu1, &pair.mu2)?;
    let last = values.len() - 1;
    let v_diff = values[0].sup_distance(&values[last], NormKind::C1);
    let g0 = values[0].gradient();
    let g1 = values[last].gradient();
    let grad_diff = sup_c(g0.fields(), g1.fields());
    let p0 = problem.with_flow(pair.mu1.clone())?;
    let p1 = problem.with_flow(pair.mu2.clone())?;
    let control_diff = sup_c(feedback_control(&p0, &values[0])?.fields(), feedback_control(&p1, &values[last])?.fields());
    let spread = alpha_spread(&table);
    Ok(SensitivityReport {
        alphas: pair.alpha_grid.clone(),
        values,
        diagnostics,
        pair_table: table,
        flow_distance: distance,
        flow_distance_surrogate: flow_distance_surrogate(&pair.mu1, &pair.mu2),
        lipschitz_v: guarded(v_diff, distance),
        lipschitz_grad_v: guarded(grad_diff, distance),
        k1_feedback: guarded(control_diff, distance),
        alpha_spread: spread,
    })
}

/// Per-pair entry of the feedback-regularity study.
#[derive(Debug, Clone)]
pub struct PairFeedback {
    /// sup_{t,x} |û¹ − û²|.
    pub control_diff: f64,
    /// sup_t ‖∇V¹ − ∇V²‖_C.
    pub grad_diff: f64,
    pub distance: f64,
    /// control_diff / distance; None for identical flows.
    pub k1: Option<f64>,
    pub lipschitz_grad_v: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FeedbackReport {
    /// Max of the per-pair ratios (0 when every pair was skipped).
    pub k1: f64,
    pub pairs: Vec<PairFeedback>,
    /// Pairs with identical flows, excluded from the max.
    pub skipped: usize,
}

/// Empirical feedback-regularity constant over a list of flow pairs.
pub fn feedback_regularity(problem: &HjbProblem, pairs: &[FlowPair], opts: MildOptions) -> Result<FeedbackReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("need at least one flow pair".into()));
    }
    let entries: Vec<PairFeedback> = pairs
        .par_iter()
        .map(|pair| {
            if pair.is_degenerate() {
                return Ok(PairFeedback {
                    control_diff: 0.0,
                    grad_diff: 0.0,
                    distance: 0.0,
                    k1: None,
                    lipschitz_grad_v: None,
                });
            }
            let p1 = problem.with_flow(pair.mu1.clone())?;
            let p2 = problem.with_flow(pair.mu2.clone())?;
            let v1 = solve_mild(&p1, opts)?.value;
            let v2 = solve_mild(&p2, opts)?.value;
            let control_diff = sup_c(feedback_control(&p1, &v1)?.fields(), feedback_control(&p2, &v2)?.fields());
            let grad_diff = sup_c(v1.gradient().fields(), v2.gradient().fields());
            let distance = flow_distance(&pair.mu1, &pair.mu2)?;
            Ok(PairFeedback {
                control_diff,
                grad_diff,
                distance,
                k1: guarded(control_diff, distance),
                lipschitz_grad_v: guarded(grad_diff, distance),
            })
        })
        .collect::<Result<_>>()?;
    let skipped = entries.iter().filter(|e| e.k1.is_none()).count();
    let k1 = entries.iter().filter_map(|e| e.k1).fold(0.0, f64::max);
    Ok(FeedbackReport { k1, pairs: entries, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{uniform_density, FlowKind};
    use crate::fnspace::{make_grid, TimeGrid};
    use crate::generator::{Coef, GeneratorSpec, Kernel};
    use crate::hjb::{HamiltonianSpec, TerminalSpec};
    use crate::propagator::Scheme;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn setup(kernel: Kernel, terminal_coupling: Kernel) -> (HjbProblem, FlowPair) {
        let g = make_grid(32, PI).unwrap();
        let tg = TimeGrid::uniform(0.5, 20).unwrap();
        let mu1 = FlowKind::Uniform.build(g, &tg).unwrap();
        let mu2 = FlowKind::Translating { center: 0.5, velocity: 0.4, concentration: 2.0 }.build(g, &tg).unwrap();
        let problem = HjbProblem::new(
            Arc::new(GeneratorSpec::heat(1.0).unwrap().with_kernel(kernel)),
            Arc::new(HamiltonianSpec::quadratic(0.0.into(), 1.0.into(), 1.0.into()).unwrap()),
            Arc::new(TerminalSpec::new(Coef::var(|_, x| x.cos())).with_coupling(terminal_coupling)),
            mu1.clone(),
            1,
            Scheme::CrankNicolson,
        )
        .unwrap();
        (problem, FlowPair::with_default_grid(mu1, mu2).unwrap())
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let (_, pair) = setup(Kernel::Zero, Kernel::Zero);
        assert_eq!(interpolate_flow(&pair, 0.0).unwrap(), pair.mu1);
        assert_eq!(interpolate_flow(&pair, 1.0).unwrap(), pair.mu2);
        let mid = interpolate_flow(&pair, 0.5).unwrap();
        for (i, d) in mid.densities().iter().enumerate() {
            let avg = &(pair.mu1.density(i) + pair.mu2.density(i)) * 0.5;
            assert!((d - &avg).max_abs() < 1e-15);
            assert!((d.integral() - 1.0).abs() < 1e-14);
        }
        assert!(interpolate_flow(&pair, 1.5).is_err());
        assert!(interpolate_flow(&pair, -0.1).is_err());
    }

    #[test]
    fn pair_validation() {
        let (_, pair) = setup(Kernel::Zero, Kernel::Zero);
        assert!(FlowPair::new(pair.mu1.clone(), pair.mu2.clone(), vec![0.0, 0.5]).is_err());
        assert!(FlowPair::new(pair.mu1.clone(), pair.mu2.clone(), vec![0.0, 0.7, 0.5, 1.0]).is_err());
    }

    #[test]
    fn uncoupled_w_is_alpha_independent() {
        let (problem, pair) = setup(Kernel::Zero, Kernel::Zero);
        let w0 = w_alpha(&problem, &pair, 0.0).unwrap();
        let w1 = w_alpha(&problem, &pair, 0.7).unwrap();
        assert_eq!(w0, w1);
        let d = w_alpha_derivative(&problem, &pair, 0.5).unwrap();
        assert_eq!(d.representation.sup_norm(NormKind::C), 0.0);
        assert!(d.fd_check.sup_norm(NormKind::C) <= 1e-12);
    }

    #[test]
    fn identical_flows_give_zero_derivative() {
        let (problem, pair) = setup(Kernel::cos(0.5, PI), Kernel::cos(0.3, PI));
        let same = FlowPair::with_default_grid(pair.mu2.clone(), pair.mu2.clone()).unwrap();
        let d = w_alpha_derivative(&problem, &same, 0.5).unwrap();
        assert_eq!(d.representation.sup_norm(NormKind::C), 0.0);
        assert_eq!(d.fd_check.sup_norm(NormKind::C), 0.0);
        let r = lipschitz_report(&problem, &same, MildOptions::default()).unwrap();
        assert_eq!(r.flow_distance, 0.0);
        assert!(r.pair_table.iter().all(|e| e.diff == 0.0));
        assert!(r.lipschitz_v.is_none() && r.lipschitz_grad_v.is_none() && r.k1_feedback.is_none());
    }

    #[test]
    fn representation_matches_fd() {
        let (problem, pair) = setup(Kernel::cos(0.5, PI), Kernel::cos(0.3, PI));
        for alpha in [0.5, 0.0] {
            let d = w_alpha_derivative(&problem, &pair, alpha).unwrap();
            assert_eq!(d.one_sided, alpha == 0.0);
            let rel = relative_discrepancy(&d.representation, &d.fd_check);
            assert!(rel <= 0.02, "alpha {alpha}: {rel}");
        }
    }

    #[test]
    fn uncoupled_report_is_zero() {
        let (problem, pair) = setup(Kernel::Zero, Kernel::Zero);
        let r = lipschitz_report(&problem, &pair, MildOptions::default()).unwrap();
        assert!(r.flow_distance > 0.0);
        assert_eq!(r.lipschitz_v, Some(0.0));
        assert_eq!(r.lipschitz_grad_v, Some(0.0));
    }

    #[test]
    fn feedback_identity_and_skips() {
        let (problem, pair) = setup(Kernel::cos(0.5, PI), Kernel::cos(0.3, PI));
        let same = FlowPair::with_default_grid(pair.mu1.clone(), pair.mu1.clone()).unwrap();
        let rep = feedback_regularity(&problem, &[pair, same], MildOptions::default()).unwrap();
        assert_eq!(rep.skipped, 1);
        let e = &rep.pairs[0];
        // û = βp/(2θ) with β = θ = 1.
        assert!((e.k1.unwrap() - 0.5 * e.lipschitz_grad_v.unwrap()).abs() <= 1e-10);
        assert_eq!(rep.k1, e.k1.unwrap());
        let uniform = uniform_density(problem.grid());
        assert!((uniform.integral() - 1.0).abs() < 1e-14);
    }
}
