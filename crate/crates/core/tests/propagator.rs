use hjbflow_core::flows::FlowKind;
use hjbflow_core::fnspace::{make_grid, Grid1D, ScalarField, TimeGrid};
use hjbflow_core::generator::{Coef, GeneratorSpec, Kernel};
use hjbflow_core::propagator::{chain_rule_residual, propagator_difference, PropagatorEngine, Scheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

fn engine(spec: GeneratorSpec, g: Grid1D, t: f64, m: usize, substeps: usize, scheme: Scheme) -> PropagatorEngine {
    PropagatorEngine::new(Arc::new(spec), g, TimeGrid::uniform(t, m).unwrap(), None, substeps, scheme).unwrap()
}

fn random_fields(g: Grid1D, seed: u64, count: usize) -> Vec<ScalarField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ScalarField::new(g, (0..g.n_points()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect()
}

#[test]
fn cn_heat_is_a_max_norm_contraction() {
    // σ²Δ/(2h²) ≤ 1 keeps every CN factor an M-matrix with nonnegative inverse.
    let g = make_grid(32, PI).unwrap();
    let e = engine(GeneratorSpec::heat(1.0).unwrap(), g, 1.0, 20, 1, Scheme::CrankNicolson);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for f in random_fields(g, 7, 10) {
        let t = rng.random_range(0.0..0.9);
        let s = rng.random_range(t..1.0);
        let u = e.propagate(t, s, &f).unwrap();
        assert!(u.max_abs() <= (1.0 + 1e-6) * f.max_abs());
    }
}

#[test]
fn boundedness_constant_does_not_grow_under_refinement() {
    let g = make_grid(32, PI).unwrap();
    let probes = random_fields(g, 11, 12);
    let spec = || GeneratorSpec::stable(1.5).unwrap().with_drift(Coef::var(|_, x| 0.5 * x.sin()));
    let c4: Vec<f64> = [5usize, 10, 20, 40]
        .iter()
        .map(|&m| {
            let e = engine(spec(), g, 1.0, m, 1, Scheme::CrankNicolson);
            probes
                .iter()
                .map(|f| e.propagate(0.0, 1.0, f).unwrap().max_abs() / f.max_abs())
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(c4.iter().all(|c| c.is_finite()));
    // The estimates settle onto the semi-discrete limit from either side at
    // the 1e−5 level; growth beyond that would signal instability.
    for i in 1..c4.len() {
        let prev = c4[..i].iter().copied().fold(0.0, f64::max);
        assert!(c4[i] <= prev * (1.0 + 1e-4), "{c4:?}");
    }
}

#[test]
fn chain_rule_on_aligned_triples() {
    let g = make_grid(32, PI).unwrap();
    let tg = TimeGrid::uniform(1.0, 20).unwrap();
    let flow = FlowKind::Translating { center: 0.0, velocity: 1.0, concentration: 2.0 }.build(g, &tg).unwrap();
    let spec = GeneratorSpec::diffusion(Coef::var(|t, x| 1.0 + 0.3 * (x - t).cos()))
        .unwrap()
        .with_kernel(Kernel::cos(0.5, PI));
    let e = PropagatorEngine::new(Arc::new(spec), g, tg.clone(), Some(flow), 2, Scheme::CrankNicolson).unwrap();
    let f = ScalarField::from_fn(g, |x| (2.0 * x).sin() + 0.5 * x.cos());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut ijk = [rng.random_range(0..=20usize), rng.random_range(0..=20), rng.random_range(0..=20)];
        ijk.sort();
        let [a, b, c] = ijk.map(|i| tg.node(i));
        assert!(chain_rule_residual(&e, a, b, c, &f).unwrap() <= 1e-10);
    }
}

#[test]
fn cn_approaches_spectral_at_second_order() {
    let g = make_grid(64, PI).unwrap();
    let f = ScalarField::from_fn(g, |x| x.cos() + 0.5 * (2.0 * x).sin() - 0.2 * (3.0 * x).cos());
    let spec = || GeneratorSpec::heat(0.5).unwrap().with_drift(Coef::Const(0.7));
    let exact = engine(spec(), g, 1.0, 1, 1, Scheme::SpectralExact).propagate(0.0, 1.0, &f).unwrap();
    let cn: Vec<ScalarField> = [10usize, 20, 40, 80]
        .iter()
        .map(|&m| engine(spec(), g, 1.0, m, 1, Scheme::CrankNicolson).propagate(0.0, 1.0, &f).unwrap())
        .collect();
    // The two schemes differ by the O(h²) stencil error in space; the time
    // error is isolated by successive differences.
    let d: Vec<f64> = cn.windows(2).map(|w| (&w[0] - &w[1]).max_abs()).collect();
    for w in d.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() <= 0.2, "{d:?}");
    }
    let h = g.spacing();
    assert!((&cn[3] - &exact).max_abs() <= 0.5 * 27.0 * h * h);
}

#[test]
fn difference_identity_residual_decays_under_substeps() {
    let g = make_grid(32, PI).unwrap();
    let f = ScalarField::from_fn(g, |x| x.sin() + 0.3 * (2.0 * x).cos());
    let res: Vec<f64> = [1usize, 2, 4]
        .iter()
        .map(|&k| {
            let a = engine(GeneratorSpec::heat(1.0).unwrap(), g, 1.0, 10, k, Scheme::CrankNicolson);
            let b = engine(GeneratorSpec::heat(1.2).unwrap(), g, 1.0, 10, k, Scheme::CrankNicolson);
            propagator_difference(&a, &b, 0.0, 1.0, &f).unwrap().1
        })
        .collect();
    for w in res.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.8, "{res:?}");
    }
}
