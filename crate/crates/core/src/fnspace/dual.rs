//! The dual (C²)* norm as a box-constrained linear program.
//!
//!   maximise Σ g_i δ_i h  subject to  |g_i| ≤ 1, |Dg_i| ≤ 1, |D²g_i| ≤ 1,
//!
//! solved by a primal-dual interior-point method. Constraint rows are scaled
//! to O(1) coefficients: g_i ≤ 1, (g_{i+1} − g_{i−1})/2 ≤ h,
//! g_{i+1} − 2g_i + g_{i−1} ≤ h².

use super::ScalarField;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Reject deltas whose total mass exceeds this.
pub const DUAL_MASS_TOL: f64 = 1e-8;
/// Relative optimality gap of the LP.
pub const DUAL_REL_GAP: f64 = 1e-6;
const MAX_ITERS: usize = 200;
/// Iterations without a better certificate before polishing.
const STALL_LIMIT: usize = 10;
/// Simplex pivots allowed in the crossover.
const MAX_PIVOTS: usize = 100;
/// Lower limit on a slack, relative to its bound.
const SLACK_FLOOR: f64 = 1e-14;
/// Relative gap below which Newton steps use QR instead of Cholesky.
const QR_SWITCH: f64 = 1e-4;

/// LP value with a certified upper bound.
#[derive(Debug, Clone)]
pub struct DualNormCertificate {
    /// Objective at a feasible test function (lower bound).
    pub value: f64,
    /// Weak-duality upper bound.
    pub upper_bound: f64,
    pub iterations: usize,
    /// The maximising test function g.
    pub test_function: ScalarField,
}

/// Value of the (C²)* LP, to relative gap 1e−6.
pub fn dual_norm_c2(delta: &ScalarField) -> Result<f64> {
    dual_norm_c2_certified(delta).map(|c| c.value)
}

pub fn dual_norm_c2_certified(delta: &ScalarField) -> Result<DualNormCertificate> {
    let mass = delta.integral();
    if mass.abs() > DUAL_MASS_TOL {
        return Err(Error::NonZeroMass(mass));
    }
    let grid = delta.grid();
    let h = grid.spacing();
    let n = grid.n_points();
    // Round-off mass is removed first: relative to tiny differences of
    // densities it can be large enough to stall the interior-point method.
    let mean = delta.values().iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = delta.values().iter().map(|v| (v - mean) * h).collect();
    let scale = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(DualNormCertificate {
            value: 0.0,
            upper_bound: 0.0,
            iterations: 0,
            test_function: ScalarField::zeros(grid),
        });
    }
    let c: Vec<f64> = c.iter().map(|v| v / scale).collect();
    let lp = BoxLp::new(n, h);
    let (g, value, upper, iterations) = lp.solve(&c)?;
    Ok(DualNormCertificate {
        value: value * scale,
        upper_bound: upper * scale,
        iterations,
        test_function: ScalarField::from_vec_unchecked(grid, g),
    })
}

/// Rows of B with bounds u: −u ≤ Bg ≤ u.
struct BoxLp {
    n: usize,
    rows: Vec<[(usize, f64); 3]>,
    bounds: Vec<f64>,
}

impl BoxLp {
    fn new(n: usize, h: f64) -> Self {
        let mut rows = Vec::with_capacity(3 * n);
        let mut bounds = Vec::with_capacity(3 * n);
        for i in 0..n {
            rows.push([(i, 1.0), (i, 0.0), (i, 0.0)]);
            bounds.push(1.0);
        }
        for i in 0..n {
            let (l, r) = ((i + n - 1) % n, (i + 1) % n);
            rows.push([(r, 0.5), (l, -0.5), (i, 0.0)]);
            bounds.push(h);
        }
        for i in 0..n {
            let (l, r) = ((i + n - 1) % n, (i + 1) % n);
            rows.push([(r, 1.0), (l, 1.0), (i, -2.0)]);
            bounds.push(h * h);
        }
        Self { n, rows, bounds }
    }

    fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|&(j, a)| a * g[j]).sum()).collect()
    }

    fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (row, &yr) in self.rows.iter().zip(y) {
            for &(j, a) in row {
                out[j] += a * yr;
            }
        }
        out
    }

    /// Bᵀ diag(w) B.
    fn normal_matrix(&self, w: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (row, &wr) in self.rows.iter().zip(w) {
            for &(a, va) in row {
                if va == 0.0 {
                    continue;
                }
                for &(b, vb) in row {
                    if vb != 0.0 {
                        m[(a, b)] += wr * va * vb;
                    }
                }
            }
        }
        m
    }

    /// Mehrotra predictor-corrector with the slacks defined from g, then a
    /// simplex crossover if the gap stalls. Returns (g, cᵀg, upper bound,
    /// iterations).
    fn solve(&self, c: &[f64]) -> Result<(Vec<f64>, f64, f64, usize)> {
        let nr = self.rows.len();
        let u = &self.bounds;
        let mut g = vec![0.0; self.n];
        let mut z1 = vec![1.0; nr];
        let mut z2 = vec![1.0; nr];
        let mut best: Option<(Vec<f64>, f64, f64)> = None;
        let mut stalled = 0;
        let mut iterations = MAX_ITERS;

        for iter in 0..MAX_ITERS {
            let bg = self.apply(&g);
            // Rounding can leave an active slack at zero or below; the floor
            // keeps the barrier weights finite.
            let s1: Vec<f64> = (0..nr).map(|r| (u[r] - bg[r]).max(SLACK_FLOOR * u[r])).collect();
            let s2: Vec<f64> = (0..nr).map(|r| (u[r] + bg[r]).max(SLACK_FLOOR * u[r])).collect();
            let y: Vec<f64> = (0..nr).map(|r| z1[r] - z2[r]).collect();
            let bty = self.apply_t(&y);
            let rd: Vec<f64> = (0..self.n).map(|i| bty[i] - c[i]).collect();

            // Scaled into the box, g is exactly feasible and cᵀg a valid lower bound.
            let excess = (0..nr).map(|r| bg[r].abs() / u[r]).fold(1.0_f64, f64::max);
            let feasible: Vec<f64> = g.iter().map(|v| v / excess).collect();
            let primal: f64 = c.iter().zip(&feasible).map(|(a, b)| a * b).sum();
            let upper = self.dual_bound(c, &y);
            // The bounds are certified separately, so each side keeps its best.
            let before = best.as_ref().map_or(f64::INFINITY, |b| b.2 - b.1);
            match best.as_mut() {
                None => best = Some((feasible, primal, upper)),
                Some(b) => {
                    if primal > b.1 {
                        (b.0, b.1) = (feasible, primal);
                    }
                    b.2 = b.2.min(upper);
                }
            }
            let (_, p, ub) = best.as_ref().expect("just set");
            if *ub - *p < before {
                stalled = 0;
            } else {
                stalled += 1;
            }
            if *p > 0.0 && *ub - *p <= DUAL_REL_GAP * *p {
                let (g, p, ub) = best.expect("just set");
                return Ok((g, p, ub, iter));
            }
            if stalled >= STALL_LIMIT {
                iterations = iter;
                break;
            }

            let mu = (0..nr).map(|r| s1[r] * z1[r] + s2[r] * z2[r]).sum::<f64>() / (2 * nr) as f64;
            let w: Vec<f64> = (0..nr).map(|r| z1[r] / s1[r] + z2[r] / s2[r]).collect();
            let solver = match NewtonSolver::new(self, &w, upper - primal < QR_SWITCH * primal.abs()) {
                Some(sv) => sv,
                None => break,
            };

            let newton = |r1: &[f64], r2: &[f64]| {
                let corr: Vec<f64> = (0..nr).map(|r| r1[r] / s1[r] - r2[r] / s2[r]).collect();
                let dg = solver.solve(self, &w, &corr, &rd);
                let bdg = self.apply(&dg);
                let ds1: Vec<f64> = bdg.iter().map(|v| -v).collect();
                let ds2 = bdg.clone();
                let dz1: Vec<f64> = (0..nr).map(|r| (r1[r] + z1[r] * bdg[r]) / s1[r]).collect();
                let dz2: Vec<f64> = (0..nr).map(|r| (r2[r] - z2[r] * bdg[r]) / s2[r]).collect();
                (dg, ds1, ds2, dz1, dz2)
            };

            // Predictor.
            let r1: Vec<f64> = (0..nr).map(|r| -s1[r] * z1[r]).collect();
            let r2: Vec<f64> = (0..nr).map(|r| -s2[r] * z2[r]).collect();
            let (_, ds1a, ds2a, dz1a, dz2a) = newton(&r1, &r2);
            let ap = step_to_boundary(&[(&s1, &ds1a), (&s2, &ds2a)], 1.0);
            let ad = step_to_boundary(&[(&z1, &dz1a), (&z2, &dz2a)], 1.0);
            let mu_aff = (0..nr)
                .map(|r| {
                    (s1[r] + ap * ds1a[r]) * (z1[r] + ad * dz1a[r])
                        + (s2[r] + ap * ds2a[r]) * (z2[r] + ad * dz2a[r])
                })
                .sum::<f64>()
                / (2 * nr) as f64;
            let sigma = (mu_aff / mu).powi(3).min(1.0);

            // Corrector.
            let tau = sigma * mu;
            let r1: Vec<f64> = (0..nr).map(|r| tau - s1[r] * z1[r] - ds1a[r] * dz1a[r]).collect();
            let r2: Vec<f64> = (0..nr).map(|r| tau - s2[r] * z2[r] - ds2a[r] * dz2a[r]).collect();
            let (dg, ds1, ds2, dz1, dz2) = newton(&r1, &r2);
            let ap = step_to_boundary(&[(&s1, &ds1), (&s2, &ds2)], 0.995);
            let ad = step_to_boundary(&[(&z1, &dz1), (&z2, &dz2)], 0.995);
            // Equal steps keep the primal from reaching a vertex long before
            // the dual has converged, where the slacks lose all precision.
            let step = ap.min(ad);
            for i in 0..self.n {
                g[i] += step * dg[i];
            }
            for r in 0..nr {
                z1[r] += step * dz1[r];
                z2[r] += step * dz2[r];
            }
            // Near the optimum the normal equations lose accuracy and the
            // dual residual drifts. The first block is the identity, so the
            // residual is moved onto z1 or z2 there, keeping both positive.
            let y: Vec<f64> = (0..nr).map(|r| z1[r] - z2[r]).collect();
            let bty = self.apply_t(&y);
            for i in 0..self.n {
                let shift = c[i] - bty[i];
                if shift > 0.0 {
                    z1[i] += shift;
                } else {
                    z2[i] -= shift;
                }
            }
        }
        let (mut g, mut p, mut ub) = best.expect("at least one iterate");
        if let Some((gx, px, ubx)) = self.crossover(c, &g) {
            if px > p {
                (g, p) = (gx, px);
            }
            ub = ub.min(ubx);
        }
        if p > 0.0 && ub - p <= DUAL_REL_GAP * p {
            return Ok((g, p, ub, iterations));
        }
        Err(Error::LinearProgram(format!(
            "gap {:e} after {iterations} iterations (value {p:e})",
            ub - p
        )))
    }

    /// Σ u_r|y_r| after moving the residual of Bᵀy = c onto the |g_i| ≤ 1
    /// rows. That point is exactly dual feasible, so this is an upper bound
    /// on the LP value for any y.
    fn dual_bound(&self, c: &[f64], y: &[f64]) -> f64 {
        let bty = self.apply_t(y);
        (0..self.n).map(|i| (y[i] + c[i] - bty[i]).abs() * self.bounds[i]).sum::<f64>()
            + (self.n..self.rows.len()).map(|r| y[r].abs() * self.bounds[r]).sum::<f64>()
    }

    /// Simplex crossover from a near-optimal interior point. Near a
    /// degenerate optimum the barrier weights get too ill-conditioned for
    /// the interior-point steps to close the gap, but the iterate already
    /// identifies the active rows: n independent rows of smallest slack give
    /// a vertex, and primal simplex pivots finish from there. Returns
    /// the feasible g with the best lower bound and the least upper bound
    /// over all vertices seen, each certified as in the main loop.
    fn crossover(&self, c: &[f64], g0: &[f64]) -> Option<(Vec<f64>, f64, f64)> {
        let n = self.n;
        let nr = self.rows.len();
        let u = &self.bounds;
        let dense_row = |r: usize| {
            let mut v = vec![0.0; n];
            for &(j, a) in &self.rows[r] {
                v[j] += a;
            }
            v
        };
        let bg = self.apply(g0);
        let mut order: Vec<usize> = (0..nr).collect();
        order.sort_by(|&a, &b| ((u[a] - bg[a].abs()) / u[a]).total_cmp(&((u[b] - bg[b].abs()) / u[b])));
        // Greedy independent rows by modified Gram-Schmidt.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut active = Vec::with_capacity(n);
        for &r in &order {
            let row = dense_row(r);
            let norm0 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut v = row;
            for _ in 0..2 {
                for q in &basis {
                    let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
                }
            }
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nv > 1e-9 * norm0 {
                v.iter_mut().for_each(|x| *x /= nv);
                basis.push(v);
                active.push(r);
                if active.len() == n {
                    break;
                }
            }
        }
        if active.len() < n {
            return None;
        }
        let mut sign: Vec<f64> = active.iter().map(|&r| if bg[r] >= 0.0 { 1.0 } else { -1.0 }).collect();
        let cv = DVector::from_column_slice(c);
        let mut best: Option<(Vec<f64>, f64, f64)> = None;
        for _ in 0..MAX_PIVOTS {
            let mut ba = DMatrix::zeros(n, n);
            for (k, &r) in active.iter().enumerate() {
                for &(j, a) in &self.rows[r] {
                    ba[(k, j)] += a;
                }
            }
            let lu = ba.clone().lu();
            let rhs = DVector::from_iterator(n, active.iter().zip(&sign).map(|(&r, s)| s * u[r]));
            let g = lu.solve(&rhs)?;
            let ya = ba.transpose().lu().solve(&cv)?;
            let mut y = vec![0.0; nr];
            for (k, &r) in active.iter().enumerate() {
                y[r] = ya[k];
            }
            let g: Vec<f64> = g.iter().copied().collect();
            let bgv = self.apply(&g);
            let excess = (0..nr).map(|r| bgv[r].abs() / u[r]).fold(1.0_f64, f64::max);
            let feasible: Vec<f64> = g.iter().map(|v| v / excess).collect();
            let lower: f64 = c.iter().zip(&feasible).map(|(a, b)| a * b).sum();
            let upper = self.dual_bound(c, &y);
            if best.as_ref().is_none_or(|b| lower > b.1) {
                best = Some((feasible, lower, best.as_ref().map_or(upper, |b| b.2.min(upper))));
            } else if let Some(b) = best.as_mut() {
                b.2 = b.2.min(upper);
            }
            // Leaving row: most negative signed multiplier.
            let (k_out, worst) = (0..n)
                .map(|k| (k, sign[k] * ya[k]))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("n ≥ 1");
            if worst >= 0.0 {
                break;
            }
            let mut e = DVector::zeros(n);
            e[k_out] = -sign[k_out];
            let d: Vec<f64> = lu.solve(&e)?.iter().copied().collect();
            let bd = self.apply(&d);
            // Ratio test over every row, the leaving one included: its
            // opposite bound is 2u away.
            let mut step = f64::INFINITY;
            let mut enter = None;
            for r in 0..nr {
                if active.contains(&r) && r != active[k_out] {
                    continue;
                }
                let rate = bd[r];
                if rate.abs() <= 1e-14 * (1.0 + bd.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) {
                    continue;
                }
                let room = if rate > 0.0 { u[r] - bgv[r] } else { u[r] + bgv[r] };
                let t = (room.max(0.0)) / rate.abs();
                if t < step {
                    step = t;
                    enter = Some((r, rate.signum()));
                }
            }
            let (r_in, s_in) = enter?;
            active[k_out] = r_in;
            sign[k_out] = s_in;
        }
        best
    }
}

/// Solver of the reduced Newton system Bᵀ W B dg = −Bᵀ corr − rd.
enum NewtonSolver {
    Normal(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// QR of W^{1/2}B: the system is the normal equation of a least-squares
    /// problem, so the condition number is not squared.
    Qr(nalgebra::QR<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl NewtonSolver {
    fn new(lp: &BoxLp, w: &[f64], qr: bool) -> Option<Self> {
        if !qr {
            return regularized_cholesky(lp.normal_matrix(w)).map(NewtonSolver::Normal);
        }
        let mut m = DMatrix::zeros(lp.rows.len(), lp.n);
        for (r, row) in lp.rows.iter().enumerate() {
            let sw = w[r].sqrt();
            for &(j, a) in row {
                m[(r, j)] += sw * a;
            }
        }
        Some(NewtonSolver::Qr(m.qr()))
    }

    fn solve(&self, lp: &BoxLp, w: &[f64], corr: &[f64], rd: &[f64]) -> Vec<f64> {
        match self {
            NewtonSolver::Normal(ch) => {
                let bt = lp.apply_t(corr);
                let rhs = DVector::from_iterator(lp.n, (0..lp.n).map(|i| -rd[i] - bt[i]));
                ch.solve(&rhs).iter().copied().collect()
            }
            NewtonSolver::Qr(qr) => {
                // rd = Bᵀe with e = rd on the identity rows.
                let mut v = DVector::from_iterator(
                    w.len(),
                    (0..w.len()).map(|r| -(corr[r] + if r < lp.n { rd[r] } else { 0.0 }) / w[r].sqrt()),
                );
                qr.q_tr_mul(&mut v);
                let top = v.rows(0, lp.n).into_owned();
                match qr.r().solve_upper_triangular(&top) {
                    Some(x) => x.iter().copied().collect(),
                    None => vec![0.0; lp.n],
                }
            }
        }
    }
}

/// Cholesky factor of m, with a growing diagonal shift if the weights have
/// become too ill-conditioned near the optimum. The shift only perturbs the
/// search direction: primal feasibility is kept by the step rule and dual
/// feasibility by the residual correction.
fn regularized_cholesky(m: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().amax();
    let mut shift = 0.0;
    for _ in 0..8 {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += shift;
        }
        if let Some(ch) = a.cholesky() {
            return Some(ch);
        }
        shift = if shift == 0.0 { scale * 1e-14 } else { shift * 100.0 };
    }
    None
}

/// Largest step in (0, 1] keeping every v + a·dv > 0, scaled by `eta`.
fn step_to_boundary(pairs: &[(&Vec<f64>, &Vec<f64>)], eta: f64) -> f64 {
    let mut a: f64 = 1.0;
    for (v, dv) in pairs {
        for (x, d) in v.iter().zip(dv.iter()) {
            if *d < 0.0 {
                a = a.min(-x / d * eta);
            }
        }
    }
    a
}
