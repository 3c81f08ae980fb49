use hjbflow_core::flows::von_mises;
use hjbflow_core::fnspace::{
    derivative, dual_norm_c2, dual_norm_c2_certified, make_grid, norm, DerivativeMethod, FieldPath, Grid1D,
    MeasureFlow, NormKind, ScalarField, TimeGrid,
};
use hjbflow_core::generator::{assemble_a, assemble_l, gateaux_l, Coef, GeneratorSpec, Kernel};
use hjbflow_core::hjb::HamiltonianSpec;
use hjbflow_core::mfg::{solve_forward, IdentityDrift};
use hjbflow_core::sensitivity::{interpolate_flow, FlowPair};
use proptest::prelude::*;
use std::f64::consts::PI;

fn grid(n: usize) -> Grid1D {
    make_grid(n, PI).unwrap()
}

fn field(n: usize) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(-1.0..1.0f64, n).prop_map(move |v| ScalarField::new(grid(n), v).unwrap())
}

fn any_field() -> impl Strategy<Value = ScalarField> {
    prop_oneof![field(8), field(16), field(32)]
}

fn zero_mass(f: &ScalarField) -> ScalarField {
    let mean = f.values().iter().sum::<f64>() / f.values().len() as f64;
    f.map(|v| v - mean)
}

fn density(n: usize) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(0.1..2.0f64, n).prop_map(move |v| {
        let f = ScalarField::new(grid(n), v).unwrap();
        let m = f.integral();
        f.map(|x| x / m)
    })
}

/// Band-limited field Σ a_k cos(kx) + b_k sin(kx), k = 1..=3.
fn band_limited(n: usize) -> impl Strategy<Value = (ScalarField, Vec<(f64, f64)>)> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 3).prop_map(move |ab| {
        let f = ScalarField::from_fn(grid(n), |x| {
            ab.iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let k = (k + 1) as f64;
                    a * (k * x).cos() + b * (k * x).sin()
                })
                .sum()
        });
        (f, ab)
    })
}

fn specs() -> Vec<GeneratorSpec> {
    vec![
        GeneratorSpec::heat(1.0).unwrap(),
        GeneratorSpec::diffusion(Coef::var(|t, x| 1.0 + 0.5 * (x + t).sin())).unwrap().with_kernel(Kernel::cos(0.4, PI)),
        GeneratorSpec::stable(1.5).unwrap().with_drift(Coef::var(|_, x| 0.3 * x.cos())).with_kernel(Kernel::Gaussian {
            amplitude: 0.2,
            width: 0.7,
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_monotonicity(f in any_field()) {
        let h = f.grid().spacing();
        let d2 = derivative(&f, 2, DerivativeMethod::Central).unwrap().max_abs();
        let (c, c1, c2, lip) = (norm(&f, NormKind::C), norm(&f, NormKind::C1), norm(&f, NormKind::C2), norm(&f, NormKind::Lip));
        prop_assert!(c <= lip);
        prop_assert!(lip <= c1 + h * d2 + 1e-12 * c1.max(1.0));
        prop_assert!(c1 <= c2);
    }

    #[test]
    fn spectral_and_central_agree_on_band_limited((f, ab) in band_limited(64)) {
        let h = f.grid().spacing();
        let amp = |p: i32| ab.iter().enumerate().map(|(k, (a, b))| (a.abs() + b.abs()) * ((k + 1) as f64).powi(p)).sum::<f64>();
        // Central stencils err by k³h²/6 and k⁴h²/12 on a single mode.
        for (order, bound) in [(1u8, amp(3) * h * h / 6.0), (2u8, amp(4) * h * h / 12.0)] {
            let c = derivative(&f, order, DerivativeMethod::Central).unwrap();
            let s = derivative(&f, order, DerivativeMethod::Spectral).unwrap();
            prop_assert!((&c - &s).max_abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn discrete_duality(f in field(32), mu in density(32), hd in field(32), which in 0usize..3) {
        let spec = &specs()[which];
        let a = assemble_a(spec, f.grid(), 0.3, Some(&mu), &hd).unwrap();
        let lhs = a.apply(&f).dot(&mu);
        let rhs = f.dot(&a.apply_transpose(&mu));
        prop_assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn assembled_rows_sum_to_zero(mu in density(32), hd in field(32), which in 0usize..3, t in 0.0..1.0f64) {
        let spec = &specs()[which];
        for op in [assemble_l(spec, mu.grid(), t, Some(&mu)).unwrap(), assemble_a(spec, mu.grid(), t, Some(&mu), &hd).unwrap()] {
            prop_assert!(op.max_abs_row_sum() <= 1e-13 * op.max_row_abs_sum());
        }
    }

    #[test]
    fn gateaux_matches_difference_quotient(mu in density(16), chi in field(16), which in 0usize..3) {
        let spec = &specs()[which];
        let g = mu.grid();
        let chi = zero_mass(&chi);
        let s = 0.1;
        let moved = mu.axpy(s, &chi);
        let dq = (assemble_l(spec, g, 0.2, Some(&moved)).unwrap().into_matrix()
            - assemble_l(spec, g, 0.2, Some(&mu)).unwrap().into_matrix()) / s;
        let gd = gateaux_l(spec, g, 0.2, &chi).unwrap().into_matrix();
        prop_assert!((dq - gd).abs().max() <= 1e-10);
    }

    #[test]
    fn hamiltonian_lipschitz_in_p(p in field(16), q in field(16), beta in 0.2..2.0f64, theta in 0.1..2.0f64) {
        let quad = HamiltonianSpec::quadratic(0.3.into(), beta.into(), theta.into()).unwrap();
        let range = p.max_abs().max(q.max_abs());
        let c1 = beta * beta * range / (2.0 * theta);
        let d = (&quad.eval_h(0.0, &p, None).unwrap() - &quad.eval_h(0.0, &q, None).unwrap()).values().to_vec();
        for (i, di) in d.iter().enumerate() {
            prop_assert!(di.abs() <= c1 * (p.values()[i] - q.values()[i]).abs() * (1.0 + 1e-12) + 1e-15);
        }
        let fin = HamiltonianSpec::finite(vec![-1.0, 0.5, 2.0], |_, _, u| u, |_, x, u| x.sin() * u).unwrap();
        let d = &fin.eval_h(0.0, &p, None).unwrap() - &fin.eval_h(0.0, &q, None).unwrap();
        for (i, di) in d.values().iter().enumerate() {
            prop_assert!(di.abs() <= 2.0 * (p.values()[i] - q.values()[i]).abs() + 1e-15);
        }
    }

    #[test]
    fn forward_conserves_mass(mu0 in density(32), u in field(32), sigma_sq in 0.5..2.0f64) {
        let tg = TimeGrid::uniform(0.5, 10).unwrap();
        let control = FieldPath::new(tg, vec![u.clone(); 11]).unwrap();
        let spec = GeneratorSpec::heat(sigma_sq).unwrap().with_kernel(Kernel::cos(0.2, PI));
        let f = solve_forward(&spec, &IdentityDrift, &control, &mu0).unwrap();
        prop_assert!(f.max_mass_error <= 1e-12);
        for d in f.flow.densities() {
            prop_assert!((d.integral() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(f.defect_history.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn interpolation_is_affine(a in 0.0..1.0f64, c0 in -3.0..3.0f64, c1 in -3.0..3.0f64) {
        let g = grid(16);
        let tg = TimeGrid::uniform(1.0, 4).unwrap();
        let mu1 = MeasureFlow::frozen(tg.clone(), &von_mises(g, c0, 1.5).unwrap()).unwrap();
        let mu2 = MeasureFlow::frozen(tg, &von_mises(g, c1, 2.5).unwrap()).unwrap();
        let pair = FlowPair::with_default_grid(mu1.clone(), mu2.clone()).unwrap();
        prop_assert_eq!(interpolate_flow(&pair, 0.0).unwrap(), mu1.clone());
        prop_assert_eq!(interpolate_flow(&pair, 1.0).unwrap(), mu2.clone());
        let mid = interpolate_flow(&pair, a).unwrap();
        for i in 0..=4 {
            let expect = mu1.density(i).axpy(a, &(mu2.density(i) - mu1.density(i)));
            prop_assert!((mid.density(i) - &expect).max_abs() <= 1e-14);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dual_norm_is_a_seminorm(a in field(16), b in field(16), s in -3.0..3.0f64) {
        let (a, b) = (zero_mass(&a), zero_mass(&b));
        let na = dual_norm_c2_certified(&a).unwrap();
        let nb = dual_norm_c2_certified(&b).unwrap();
        let nsa = dual_norm_c2(&(&a * s)).unwrap();
        prop_assert!((nsa - s.abs() * na.value).abs() <= 1e-8 * (1.0 + nsa));
        // The value is a lower bound and the certificates are upper bounds.
        let nab = dual_norm_c2(&(&a + &b)).unwrap();
        prop_assert!(nab <= na.upper_bound + nb.upper_bound + 1e-8);
    }

    #[test]
    fn dual_norm_below_weighted_l1(d in any_field()) {
        let d = zero_mass(&d);
        let l1 = d.values().iter().map(|v| v.abs()).sum::<f64>() * d.grid().spacing();
        prop_assert!(dual_norm_c2(&d).unwrap() <= l1 * (1.0 + 1e-12));
    }

    #[test]
    fn gateaux_bound_by_dual_norm(chi in field(16), k in 1usize..4) {
        let g = grid(16);
        let chi = zero_mass(&chi);
        let amp = 0.7;
        let kernel = Kernel::cos(amp, PI);
        let spec = GeneratorSpec::heat(1.0).unwrap().with_kernel(kernel.clone());
        let op = gateaux_l(&spec, g, 0.0, &chi).unwrap();
        // cos(kx)/(1 + k + k²) lies in the unit C² box of the continuum.
        let kf = k as f64;
        let probe = ScalarField::from_fn(g, |x| (kf * x).cos() / (1.0 + kf + kf * kf));
        let c7 = amp; // wavenumber π/L = 1 here.
        let ub = dual_norm_c2_certified(&chi).unwrap().upper_bound;
        let conv = kernel.convolve(&chi).max_abs();
        prop_assert!(conv <= c7 * ub * (1.0 + 1e-9) + 1e-14);
        prop_assert!(op.apply(&probe).max_abs() <= conv * (1.0 + 1e-12) + 1e-14);
    }
}
