//! Backward propagators U^{t,s} generated by a family L[τ, μ_τ].
//!
//! Crank–Nicolson steps freeze L at the substep midpoint. Factorisations of
//! the substeps of the engine's partition are cached lazily; steps that start
//! or end off the partition are factorised on the fly and discarded.

use crate::error::{Error, Result};
use crate::fnspace::{
    apply_fourier_multiplier, norm, wavenumbers, Grid1D, MeasureFlow, NormKind, ScalarField, TimeGrid,
};
use crate::generator::{assemble_l, DiscreteOperator, GeneratorSpec};
use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::{Arc, OnceLock};

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    CrankNicolson,
    /// Exact Fourier multiplier; constant coefficients only.
    SpectralExact,
}

/// Above this the factorised CN matrix is reported singular.
const MAX_CONDITION: f64 = 1e14;

struct CnStep {
    lu: LU<f64, Dyn, Dyn>,
}

impl CnStep {
    fn new(op: &DiscreteOperator, dt: f64) -> Result<Self> {
        let n = op.grid().n_points();
        let m = DMatrix::<f64>::identity(n, n) - op.matrix() * (0.5 * dt);
        let lu = m.lu();
        let diag = lu.u().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition < MAX_CONDITION) {
            return Err(Error::SingularSolve { condition });
        }
        Ok(Self { lu })
    }

    /// (I − Δ/2·L)⁻¹(I + Δ/2·L)g = 2(I − Δ/2·L)⁻¹g − g.
    fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        let y = self
            .lu
            .solve(&DVector::from_column_slice(g))
            .ok_or(Error::SingularSolve { condition: f64::INFINITY })?;
        Ok(y.iter().zip(g).map(|(a, b)| 2.0 * a - b).collect())
    }
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Cached(usize),
    Fresh(f64, f64),
}

/// U^{t,s} for a generator family along a measure flow.
pub struct PropagatorEngine {
    spec: Arc<GeneratorSpec>,
    grid: Grid1D,
    time: TimeGrid,
    flow: Option<MeasureFlow>,
    substeps: usize,
    scheme: Scheme,
    nodes: Vec<f64>,
    steps: Vec<OnceLock<Result<CnStep>>>,
}

impl std::fmt::Debug for PropagatorEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PropagatorEngine")
            .field("spec", &self.spec)
            .field("grid", &self.grid)
            .field("steps", &self.time.steps())
            .field("substeps", &self.substeps)
            .field("scheme", &self.scheme)
            .finish()
    }
}

impl PropagatorEngine {
    pub fn new(
        spec: Arc<GeneratorSpec>,
        grid: Grid1D,
        time: TimeGrid,
        flow: Option<MeasureFlow>,
        substeps: usize,
        scheme: Scheme,
    ) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be ≥ 1".into()));
        }
        if let Some(flow) = &flow {
            if flow.grid() != grid {
                return Err(Error::GridMismatch("measure flow grid differs from engine grid".into()));
            }
            if flow.time() != &time {
                return Err(Error::GridMismatch("measure flow time grid differs from engine time grid".into()));
            }
        }
        if scheme == Scheme::SpectralExact && !spec.is_constant_coefficient() {
            return Err(Error::InvalidArgument(
                "SpectralExact requires constant coefficients without interaction".into(),
            ));
        }
        let mut nodes = Vec::with_capacity(time.steps() * substeps + 1);
        for i in 0..time.steps() {
            let (a, b) = (time.node(i), time.node(i + 1));
            for j in 0..substeps {
                nodes.push(a + (b - a) * j as f64 / substeps as f64);
            }
        }
        nodes.push(time.horizon());
        let steps = (0..nodes.len() - 1).map(|_| OnceLock::new()).collect();
        let engine = Self { spec, grid, time, flow, substeps, scheme, nodes, steps };
        engine.operator_at(0.0)?;
        Ok(engine)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn flow(&self) -> Option<&MeasureFlow> {
        self.flow.as_ref()
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Substep nodes of the engine's partition of [0, T].
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// L[τ, μ_τ] with μ interpolated linearly between time nodes.
    pub fn operator_at(&self, tau: f64) -> Result<DiscreteOperator> {
        let mu = match &self.flow {
            Some(flow) if !self.spec.kernel.is_zero() => Some(flow.density_at(tau)),
            _ => None,
        };
        assemble_l(&self.spec, self.grid, tau, mu.as_ref())
    }

    fn eps(&self) -> f64 {
        1e-12 * self.time.horizon().max(1.0)
    }

    fn cached_step(&self, k: usize) -> Result<&CnStep> {
        let slot = self.steps[k].get_or_init(|| {
            let (a, b) = (self.nodes[k], self.nodes[k + 1]);
            CnStep::new(&self.operator_at(0.5 * (a + b))?, b - a)
        });
        slot.as_ref().map_err(Clone::clone)
    }

    /// Factorises every cached substep (in parallel); idempotent.
    pub fn prepare(&self) -> Result<()> {
        if self.scheme != Scheme::CrankNicolson {
            return Ok(());
        }
        (0..self.steps.len()).into_par_iter().try_for_each(|k| self.cached_step(k).map(|_| ()))
    }

    fn check_interval(&self, t: f64, s: f64) -> Result<()> {
        let eps = self.eps();
        if !(t.is_finite() && s.is_finite()) || t > s {
            return Err(Error::InvalidArgument(format!("propagate needs t ≤ s (got t = {t}, s = {s})")));
        }
        if t < -eps || s > self.time.horizon() + eps {
            return Err(Error::InvalidArgument(format!(
                "[{t}, {s}] outside the engine horizon [0, {}]",
                self.time.horizon()
            )));
        }
        Ok(())
    }

    /// Segments of [t, s] in increasing time: partial steps at the ends,
    /// cached substeps in between.
    fn segments(&self, t: f64, s: f64) -> Vec<Segment> {
        let eps = self.eps();
        let lo = self.nodes.partition_point(|&x| x < t - eps);
        let hi = self.nodes.partition_point(|&x| x <= s + eps);
        if hi == 0 || lo >= hi {
            return vec![Segment::Fresh(t, s)];
        }
        let hi = hi - 1;
        let mut out = Vec::new();
        if (self.nodes[lo] - t).abs() > eps {
            out.push(Segment::Fresh(t, self.nodes[lo]));
        }
        out.extend((lo..hi).map(Segment::Cached));
        if (self.nodes[hi] - s).abs() > eps {
            out.push(Segment::Fresh(self.nodes[hi], s));
        }
        out
    }

    /// Partition {t} ∪ (substep nodes in (t, s)) ∪ {s} used by the CN scheme.
    pub fn partition(&self, t: f64, s: f64) -> Vec<f64> {
        if t == s {
            return vec![t];
        }
        let mut pts = vec![t];
        for seg in self.segments(t, s) {
            pts.push(match seg {
                Segment::Cached(k) => self.nodes[k + 1],
                Segment::Fresh(_, b) => b,
            });
        }
        *pts.last_mut().expect("nonempty") = s;
        pts
    }

    /// U^{t,s} f.
    pub fn propagate(&self, t: f64, s: f64, f: &ScalarField) -> Result<ScalarField> {
        Ok(self.propagate_batch(t, s, std::slice::from_ref(f))?.remove(0))
    }

    /// U^{t,s} applied to several fields, sharing factorisations.
    pub fn propagate_batch(&self, t: f64, s: f64, fs: &[ScalarField]) -> Result<Vec<ScalarField>> {
        self.check_interval(t, s)?;
        if fs.iter().any(|f| f.grid() != self.grid) {
            return Err(Error::GridMismatch("field grid differs from engine grid".into()));
        }
        if t == s {
            return Ok(fs.to_vec());
        }
        match self.scheme {
            Scheme::SpectralExact => Ok(fs.iter().map(|f| self.spectral(s - t, f)).collect()),
            Scheme::CrankNicolson => {
                let mut vals: Vec<Vec<f64>> = fs.iter().map(|f| f.values().to_vec()).collect();
                for seg in self.segments(t, s).into_iter().rev() {
                    let fresh;
                    let step = match seg {
                        Segment::Cached(k) => self.cached_step(k)?,
                        Segment::Fresh(a, b) => {
                            fresh = CnStep::new(&self.operator_at(0.5 * (a + b))?, b - a)?;
                            &fresh
                        }
                    };
                    for v in vals.iter_mut() {
                        *v = step.apply(v)?;
                    }
                }
                vals.into_iter().map(|v| ScalarField::new(self.grid, v)).collect()
            }
        }
    }

    fn spectral(&self, gap: f64, f: &ScalarField) -> ScalarField {
        let symbol = self.spec.symbol().expect("checked at construction");
        let nyquist = *wavenumbers(self.grid).iter().fold(&0.0, |m, k| if k > m { k } else { m });
        apply_fourier_multiplier(f, |k| {
            let mut s = symbol(k);
            if k == nyquist {
                s.im = 0.0;
            }
            (s * gap).exp()
        })
    }

    /// U^{t_i,T} f at every time node (backward sweep).
    pub fn propagate_path(&self, terminal: &ScalarField) -> Result<Vec<ScalarField>> {
        let m = self.time.steps();
        let mut out = vec![terminal.clone(); m + 1];
        for i in (0..m).rev() {
            out[i] = self.propagate(self.time.node(i), self.time.node(i + 1), &out[i + 1])?;
        }
        Ok(out)
    }
}

/// ‖U^{t,s}(U^{s,r}f) − U^{t,r}f‖_C.
pub fn chain_rule_residual(engine: &PropagatorEngine, t: f64, s: f64, r: f64, f: &ScalarField) -> Result<f64> {
    if !(t <= s && s <= r) {
        return Err(Error::InvalidArgument(format!("need t ≤ s ≤ r (got {t}, {s}, {r})")));
    }
    let inner = engine.propagate(s, r, f)?;
    let composed = engine.propagate(t, s, &inner)?;
    let direct = engine.propagate(t, r, f)?;
    Ok((&composed - &direct).max_abs())
}

/// Right-hand side of U₂^{t,r} − U₁^{t,r} = ∫_t^r U₂^{t,s}(L²_s − L¹_s)U₁^{s,r} ds
/// by the trapezoid rule on the partition of engine A, and its C-distance to
/// the directly computed difference.
pub fn propagator_difference(
    engine_a: &PropagatorEngine,
    engine_b: &PropagatorEngine,
    t: f64,
    r: f64,
    f: &ScalarField,
) -> Result<(ScalarField, f64)> {
    if engine_a.grid() != engine_b.grid() {
        return Err(Error::GridMismatch("engines live on different grids".into()));
    }
    if engine_a.time().horizon() != engine_b.time().horizon() {
        return Err(Error::GridMismatch("engines cover different horizons".into()));
    }
    let pts = engine_a.partition(t, r);
    let n = pts.len();
    let mut y = vec![f.clone(); n];
    for j in (0..n - 1).rev() {
        y[j] = engine_a.propagate(pts[j], pts[j + 1], &y[j + 1])?;
    }
    let weight = |j: usize| -> f64 {
        let left = if j > 0 { pts[j] - pts[j - 1] } else { 0.0 };
        let right = if j + 1 < n { pts[j + 1] - pts[j] } else { 0.0 };
        0.5 * (left + right)
    };
    let integrand = |j: usize| -> Result<ScalarField> {
        let la = engine_a.operator_at(pts[j])?;
        let lb = engine_b.operator_at(pts[j])?;
        Ok(&lb.apply(&y[j]) - &la.apply(&y[j]))
    };
    let mut acc = &integrand(n - 1)? * weight(n - 1);
    for j in (0..n - 1).rev() {
        acc = engine_b.propagate(pts[j], pts[j + 1], &acc)?;
        acc = acc.axpy(weight(j), &integrand(j)?);
    }
    let direct = &engine_b.propagate(t, r, f)? - &y[0];
    let residual = (&acc - &direct).max_abs();
    Ok((acc, residual))
}

/// Norm pair of the smoothing estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingNorms {
    /// ‖Uφ‖_{C¹} / ‖φ‖_C.
    CToC1,
    /// ‖Uψ‖_{C²} / ‖ψ‖_{Lip}.
    LipToC2,
}

/// Least-squares fit log R = log ĉ − β̂ log(s − t).
#[derive(Debug, Clone)]
pub struct SmoothingFit {
    pub beta: f64,
    pub c5: f64,
    pub r_squared: f64,
    /// (gap, R(gap)) sorted by gap.
    pub samples: Vec<(f64, f64)>,
}

/// Fits the smoothing exponent from max-over-probes norm ratios.
pub fn estimate_smoothing_exponent(
    engine: &PropagatorEngine,
    s_end: f64,
    gaps: &[f64],
    probes: &[ScalarField],
    norms: SmoothingNorms,
) -> Result<SmoothingFit> {
    if !engine.spec().has_smoothing() {
        return Err(Error::NoSmoothing);
    }
    if gaps.len() < 4 {
        return Err(Error::DegenerateFit(format!("need at least 4 gaps (got {})", gaps.len())));
    }
    if probes.is_empty() {
        return Err(Error::DegenerateFit("no probe fields".into()));
    }
    let mut gaps = gaps.to_vec();
    gaps.sort_by(f64::total_cmp);
    if gaps[0] <= 0.0 {
        return Err(Error::DegenerateFit("gaps must be positive".into()));
    }
    let span = (gaps[gaps.len() - 1] / gaps[0]).log10();
    if span < 1.5 {
        return Err(Error::DegenerateFit(format!("gaps span {span:.2} decades; need ≥ 1.5")));
    }
    let (src, dst) = match norms {
        SmoothingNorms::CToC1 => (NormKind::C, NormKind::C1),
        SmoothingNorms::LipToC2 => (NormKind::Lip, NormKind::C2),
    };
    let base: Vec<f64> = probes.iter().map(|p| norm(p, src)).collect();
    let mut current = probes.to_vec();
    let mut prev = s_end;
    let mut samples = Vec::with_capacity(gaps.len());
    for &gap in &gaps {
        let t = s_end - gap;
        current = engine.propagate_batch(t, prev, &current)?;
        prev = t;
        let ratio = current
            .iter()
            .zip(&base)
            .filter(|(_, &b)| b > 0.0)
            .fold(0.0_f64, |m, (u, &b)| m.max(norm(u, dst) / b));
        samples.push((gap, ratio));
    }
    let (slope, intercept, r_squared) = log_log_fit(&samples)?;
    Ok(SmoothingFit { beta: -slope, c5: intercept.exp(), r_squared, samples })
}

fn log_log_fit(samples: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(g, r)| (g.ln(), r.ln())).collect();
    if pts.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::DegenerateFit("non-positive ratio in the fit".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let syy = pts.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok((slope, intercept, r_squared))
}

/// Probe set for the smoothing fit: hats at `n_hats` evenly spaced nodes,
/// `n_random` seeded ±1 fields and square waves sign(cos(mπx/L)).
pub fn smoothing_probes(grid: Grid1D, seed: u64, n_hats: usize, n_random: usize, square_waves: &[usize]) -> Vec<ScalarField> {
    let n = grid.n_points();
    let mut probes = Vec::new();
    for k in 0..n_hats {
        let mut v = vec![0.0; n];
        v[k * n / n_hats.max(1)] = 1.0;
        probes.push(ScalarField::from_vec_unchecked(grid, v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random {
        let v = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        probes.push(ScalarField::from_vec_unchecked(grid, v));
    }
    let l = grid.half_width();
    for &m in square_waves {
        let w = m as f64 * std::f64::consts::PI / l;
        probes.push(ScalarField::from_fn(grid, |x| if (w * x).cos() >= 0.0 { 1.0 } else { -1.0 }));
    }
    probes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::make_grid;
    use crate::generator::Kernel;
    use std::f64::consts::PI;

    fn engine(spec: GeneratorSpec, n: usize, horizon: f64, steps: usize, scheme: Scheme) -> PropagatorEngine {
        let g = make_grid(n, PI).unwrap();
        let tg = TimeGrid::uniform(horizon, steps).unwrap();
        PropagatorEngine::new(Arc::new(spec), g, tg, None, 1, scheme).unwrap()
    }

    #[test]
    fn identity_at_coincident_times() {
        let e = engine(GeneratorSpec::heat(2.0).unwrap(), 32, 1.0, 10, Scheme::CrankNicolson);
        let f = ScalarField::from_fn(e.grid(), |x| x.sin() + 0.3);
        assert_eq!(e.propagate(0.35, 0.35, &f).unwrap(), f);
        assert!(e.propagate(0.5, 0.4, &f).is_err());
        assert!(e.propagate(0.5, 1.5, &f).is_err());
    }

    #[test]
    fn heat_on_cosine_both_schemes() {
        for scheme in [Scheme::SpectralExact, Scheme::CrankNicolson] {
            let e = engine(GeneratorSpec::heat(2.0).unwrap(), 64, 1.0, 100, scheme);
            let f = ScalarField::from_fn(e.grid(), f64::cos);
            let out = e.propagate(0.0, 1.0, &f).unwrap();
            let err = (&out - &f.map(|v| (-1.0f64).exp() * v)).max_abs();
            let tol = if scheme == Scheme::SpectralExact { 1e-12 } else { 5e-4 };
            assert!(err <= tol, "{scheme:?}: {err}");
        }
    }

    #[test]
    fn stable_on_cos2() {
        let e = engine(GeneratorSpec::stable(1.5).unwrap(), 64, 0.5, 50, Scheme::SpectralExact);
        let f = ScalarField::from_fn(e.grid(), |x| (2.0 * x).cos());
        let out = e.propagate(0.0, 0.5, &f).unwrap();
        let m = (-0.5 * 2f64.powf(1.5)).exp();
        assert!((&out - &(&f * m)).max_abs() < 1e-12);
    }

    #[test]
    fn spectral_rejects_variable_coefficients() {
        let g = make_grid(16, PI).unwrap();
        let tg = TimeGrid::uniform(1.0, 4).unwrap();
        let spec = GeneratorSpec::heat(1.0).unwrap().with_kernel(Kernel::cos(1.0, PI));
        assert!(PropagatorEngine::new(Arc::new(spec), g, tg, None, 1, Scheme::SpectralExact).is_err());
    }

    #[test]
    fn partition_and_segments() {
        let e = engine(GeneratorSpec::heat(1.0).unwrap(), 16, 1.0, 4, Scheme::CrankNicolson);
        assert_eq!(e.partition(0.25, 0.75), vec![0.25, 0.5, 0.75]);
        assert_eq!(e.partition(0.3, 0.6), vec![0.3, 0.5, 0.6]);
        assert_eq!(e.partition(0.3, 0.4), vec![0.3, 0.4]);
        assert_eq!(e.partition(0.0, 0.3), vec![0.0, 0.25, 0.3]);
    }

    #[test]
    fn chain_rule_aligned() {
        let e = engine(GeneratorSpec::heat(2.0).unwrap(), 32, 1.0, 20, Scheme::CrankNicolson);
        let f = ScalarField::from_fn(e.grid(), |x| (3.0 * x).sin() + x.cos());
        assert_eq!(chain_rule_residual(&e, 0.5, 0.5, 0.5, &f).unwrap(), 0.0);
        assert!(chain_rule_residual(&e, 0.1, 0.45, 0.9, &f).unwrap() <= 1e-10);
    }

    #[test]
    fn difference_of_equal_engines_vanishes() {
        let e1 = engine(GeneratorSpec::heat(2.0).unwrap(), 32, 1.0, 20, Scheme::CrankNicolson);
        let e2 = engine(GeneratorSpec::heat(2.0).unwrap(), 32, 1.0, 20, Scheme::CrankNicolson);
        let f = ScalarField::from_fn(e1.grid(), f64::cos);
        let (integral, residual) = propagator_difference(&e1, &e2, 0.0, 1.0, &f).unwrap();
        assert_eq!(integral.max_abs(), 0.0);
        assert!(residual <= 1e-12);
    }

    #[test]
    fn smoothing_preconditions() {
        let g = make_grid(16, PI).unwrap();
        let tg = TimeGrid::uniform(1.0, 4).unwrap();
        let drift = PropagatorEngine::new(
            Arc::new(GeneratorSpec::drift_only()),
            g,
            tg,
            None,
            1,
            Scheme::CrankNicolson,
        )
        .unwrap();
        let probes = smoothing_probes(g, 1, 2, 2, &[1]);
        let gaps = [1e-3, 1e-2, 1e-1, 0.5];
        let err = estimate_smoothing_exponent(&drift, 1.0, &gaps, &probes, SmoothingNorms::CToC1).unwrap_err();
        assert!(err.to_string().contains("no smoothing"));
        let heat = engine(GeneratorSpec::heat(1.0).unwrap(), 16, 1.0, 4, Scheme::SpectralExact);
        assert!(matches!(
            estimate_smoothing_exponent(&heat, 1.0, &gaps[..3], &probes, SmoothingNorms::CToC1),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            estimate_smoothing_exponent(&heat, 1.0, &[0.1, 0.2, 0.3, 0.4], &probes, SmoothingNorms::CToC1),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn spectral_heat_mode_three() {
        let e = engine(GeneratorSpec::heat(0.7).unwrap(), 32, 1.0, 4, Scheme::SpectralExact);
        let f = ScalarField::from_fn(e.grid(), |x| (3.0 * x).cos());
        let out = e.propagate(0.2, 0.9, &f).unwrap();
        let m = (-0.5 * 0.7 * 9.0 * 0.7f64).exp();
        assert!((&out - &(&f * m)).max_abs() < 1e-13);
    }
}
