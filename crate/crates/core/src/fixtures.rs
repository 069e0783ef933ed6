//! Deterministic synthetic datasets shipped with the toolkit.
//!
//! Both survey-style fixtures have 51 areas, an intercept plus two standard
//! normal covariates, `β = (1, 0.5, −0.3)` and sampling variances log-uniform
//! on `[0.2, 5]`. They differ only in the true `A` and the seed:
//!
//! * [`interior`]: `A = 1.7`, seed 1993. REML is interior.
//! * [`boundary`]: `A = 0.05`, seeds 1997, 1998, ... taken in order until the
//!   REML estimate is exactly zero. [`BOUNDARY_SEED`] records the result.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Area, Dataset};
use crate::gml::reml;
use crate::rng::{self, domain};

pub const FIXTURE_K: usize = 51;
pub const INTERIOR_SEED: u64 = 1993;
pub const INTERIOR_A: f64 = 1.7;
pub const BOUNDARY_FIRST_SEED: u64 = 1997;
pub const BOUNDARY_A: f64 = 0.05;
/// First seed from [`BOUNDARY_FIRST_SEED`] whose data give a zero REML estimate.
pub const BOUNDARY_SEED: u64 = 1998;

const BETA: [f64; 3] = [1.0, 0.5, -0.3];

/// Survey-style dataset drawn from the model with the given seed and `A`.
pub fn generate(seed: u64, a: f64, prefix: &str) -> Dataset {
    let mut rng = rng::stream(rng::derive_key(&[seed, domain::FIXTURE]), 0);
    let (lo, hi) = (0.2f64.ln(), 5.0f64.ln());
    let areas = (0..FIXTURE_K)
        .map(|i| {
            let v = rng.random_range(lo..hi).exp();
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let u: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let x = vec![1.0, z1, z2];
            let mean: f64 = x.iter().zip(BETA).map(|(x, b)| x * b).sum();
            Area {
                id: format!("{prefix}{:02}", i + 1),
                y: mean + a.sqrt() * u + v.sqrt() * e,
                v,
                x,
            }
        })
        .collect();
    Dataset::new(areas).expect("fixture design is valid")
}

/// Fixture with an interior posterior mode of `A`.
pub fn interior() -> Dataset {
    generate(INTERIOR_SEED, INTERIOR_A, "s")
}

/// Fixture whose posterior mode of `A` under a flat prior is 0.
pub fn boundary() -> Dataset {
    generate(BOUNDARY_SEED, BOUNDARY_A, "s")
}

/// Repeats the seed search behind [`BOUNDARY_SEED`].
pub fn find_boundary_seed() -> u64 {
    (BOUNDARY_FIRST_SEED..)
        .find(|&s| {
            reml(&generate(s, BOUNDARY_A, "s"))
                .map(|e| e.boundary)
                .unwrap_or(false)
        })
        .expect("search is unbounded")
}

/// Intercept-only dataset with identical `y`, so `S = 0` and REML is 0.
pub fn flat() -> Dataset {
    let areas = (0..10)
        .map(|i| Area {
            id: format!("f{:02}", i + 1),
            y: 2.5,
            v: 0.5 + 0.25 * i as f64,
            x: vec![1.0],
        })
        .collect();
    Dataset::new(areas).expect("fixture design is valid")
}
