//! Catalog of measure flows used by tests, examples and the CLI.
//!
//! Bumps are von-Mises profiles exp(κ cos(π(x − c)/L)) normalised to unit
//! discrete mass on the grid.

use crate::error::Result;
use crate::fnspace::{normalize_density, Grid1D, MeasureFlow, ScalarField, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A named catalog flow.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowKind {
    Uniform,
    Bump { center: f64, concentration: f64 },
    TwoBump { centers: (f64, f64), concentration: f64, weight: f64 },
    /// Bump whose center moves as c(t) = c0 + v·t.
    Translating { center: f64, velocity: f64, concentration: f64 },
}

impl FlowKind {
    pub fn build(&self, grid: Grid1D, time: &TimeGrid) -> Result<MeasureFlow> {
        match *self {
            FlowKind::Uniform => MeasureFlow::frozen(time.clone(), &uniform_density(grid)),
            FlowKind::Bump { center, concentration } => {
                MeasureFlow::frozen(time.clone(), &von_mises(grid, center, concentration)?)
            }
            FlowKind::TwoBump { centers, concentration, weight } => {
                let a = von_mises(grid, centers.0, concentration)?;
                let b = von_mises(grid, centers.1, concentration)?;
                MeasureFlow::frozen(time.clone(), &a.lerp(&b, weight))
            }
            FlowKind::Translating { center, velocity, concentration } => {
                let densities = time
                    .nodes()
                    .iter()
                    .map(|&t| von_mises(grid, center + velocity * t, concentration))
                    .collect::<Result<Vec<_>>>()?;
                MeasureFlow::new(time.clone(), densities)
            }
        }
    }
}

pub fn uniform_density(grid: Grid1D) -> ScalarField {
    ScalarField::constant(grid, 1.0 / (2.0 * grid.half_width()))
}

/// exp(κ cos(π(x − c)/L)), unit discrete mass.
pub fn von_mises(grid: Grid1D, center: f64, concentration: f64) -> Result<ScalarField> {
    let w = std::f64::consts::PI / grid.half_width();
    normalize_density(&ScalarField::from_fn(grid, |x| (concentration * (w * (x - center)).cos()).exp()))
}

/// Two translating bumps with seeded random centers, velocities and
/// concentrations in [1, 3].
pub fn random_bump_pair(seed: u64) -> (FlowKind, FlowKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || FlowKind::Translating {
        center: rng.random_range(-1.0..1.0) * std::f64::consts::PI,
        velocity: rng.random_range(-0.5..0.5),
        concentration: rng.random_range(1.0..3.0),
    };
    let a = draw();
    let b = draw();
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnspace::make_grid;
    use std::f64::consts::PI;

    #[test]
    fn catalog_flows_are_densities() {
        let g = make_grid(64, PI).unwrap();
        let tg = TimeGrid::uniform(1.0, 10).unwrap();
        let kinds = [
            FlowKind::Uniform,
            FlowKind::Bump { center: 0.3, concentration: 2.0 },
            FlowKind::TwoBump { centers: (-1.0, 1.5), concentration: 3.0, weight: 0.3 },
            FlowKind::Translating { center: -2.0, velocity: 1.0, concentration: 1.5 },
        ];
        for k in &kinds {
            let flow = k.build(g, &tg).unwrap();
            for d in flow.densities() {
                assert!((d.integral() - 1.0).abs() < 1e-14);
                assert!(d.values().iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn random_pairs_are_seeded() {
        assert_eq!(random_bump_pair(5), random_bump_pair(5));
        assert_ne!(random_bump_pair(5), random_bump_pair(6));
    }
}
