use hjbflow_core::flows::random_bump_pair;
use hjbflow_core::fnspace::{make_grid, TimeGrid};
use hjbflow_core::generator::{Coef, GeneratorSpec, Kernel};
use hjbflow_core::hjb::{HamiltonianSpec, HjbProblem, MildOptions, TerminalSpec};
use hjbflow_core::propagator::Scheme;
use hjbflow_core::sensitivity::{lipschitz_report, relative_discrepancy, w_alpha_derivative, w_alpha_table, FlowPair};
use std::f64::consts::PI;
use std::sync::Arc;

fn setup(n: usize, m: usize, seed: u64) -> (HjbProblem, FlowPair) {
    let g = make_grid(n, PI).unwrap();
    let tg = TimeGrid::uniform(0.5, m).unwrap();
    let (a, b) = random_bump_pair(seed);
    let mu1 = a.build(g, &tg).unwrap();
    let mu2 = b.build(g, &tg).unwrap();
    let problem = HjbProblem::new(
        Arc::new(GeneratorSpec::heat(1.0).unwrap().with_kernel(Kernel::cos(0.5, PI))),
        Arc::new(HamiltonianSpec::quadratic(0.0.into(), 1.0.into(), 1.0.into()).unwrap().with_coupling(Kernel::cos(0.2, PI))),
        Arc::new(TerminalSpec::new(Coef::var(|_, x| x.sin())).with_coupling(Kernel::cos(0.3, PI))),
        mu1.clone(),
        1,
        Scheme::CrankNicolson,
    )
    .unwrap();
    (problem, FlowPair::with_default_grid(mu1, mu2).unwrap())
}

#[test]
fn w_alpha_ratios_are_uniform_in_alpha() {
    for seed in 0..3 {
        let (p, pair) = setup(32, 20, seed);
        let (table, spread) = w_alpha_table(&p, &pair).unwrap();
        assert_eq!(table.len(), 10);
        assert!(spread.unwrap() <= 0.25, "seed {seed}: {spread:?}");
    }
}

#[test]
fn representation_within_two_percent() {
    for seed in 0..3 {
        let (p, pair) = setup(32, 20, seed);
        let d = w_alpha_derivative(&p, &pair, 0.5).unwrap();
        assert!(relative_discrepancy(&d.representation, &d.fd_check) <= 0.02);
    }
}

#[test]
fn lipschitz_constants_stable_under_refinement() {
    let (pc, pairc) = setup(32, 20, 4);
    let (pf, pairf) = setup(64, 40, 4);
    let coarse = lipschitz_report(&pc, &pairc, MildOptions::default()).unwrap();
    let fine = lipschitz_report(&pf, &pairf, MildOptions::default()).unwrap();
    let growth = |a: Option<f64>, b: Option<f64>| (b.unwrap() - a.unwrap()).abs() / a.unwrap();
    assert!(growth(coarse.lipschitz_v, fine.lipschitz_v) <= 0.25);
    assert!(growth(coarse.lipschitz_grad_v, fine.lipschitz_grad_v) <= 0.25);
    assert!(coarse.alpha_spread.unwrap() <= 0.25);
    assert!(coarse.pair_table.iter().all(|e| e.diff.is_finite() && e.diff >= 0.0));
}
