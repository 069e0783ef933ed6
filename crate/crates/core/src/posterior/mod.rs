//! Posterior of the variance component and of the shrinkage factors.
//!
//! With a flat prior on β and `π(A) ∝ A^p`, the marginal posterior of `A` is
//! `p(A | y) ∝ A^p · exp(ℓ_R(A))`. Integrals over `A ∈ (0, ∞)` are computed
//! on `t = A / (A + c) ∈ (0, 1)` with `c` the median sampling variance.
//!
//! Three views of the shrinkage factor `B_i = V_i / (V_i + A)` are offered:
//! the exact density (adaptive quadrature), a Beta fit obtained by adjusted
//! density maximisation, and a first-order normal (Laplace) fit.

mod adm;
mod exact;
mod laplace;

pub use adm::{adm_fit, fit_adjusted_beta, AdmAdjustment, BScaleDensity, BetaFit};
pub use exact::{posterior_b_exact, theta_posterior_adm, theta_posterior_exact, ExactShrinkagePosterior};
pub use laplace::{laplace_fit, NormalFit};
#[cfg(test)]
pub(crate) use exact::theta_from_shrinkage;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Beta, Continuous, Normal};

use crate::dataset::Dataset;
use crate::error::{FhError, Result};
use crate::model::Evaluation;
use crate::quadrature;

/// Relative tolerance for every posterior quadrature.
pub const QUAD_REL_TOL: f64 = 1e-10;
/// Panel budget for the adaptive quadrature.
pub const QUAD_MAX_PANELS: usize = 4000;

/// Power prior `π(A) ∝ A^p` with `-1 < p <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorSpec {
    exponent: f64,
}

impl PriorSpec {
    pub fn power(exponent: f64) -> Result<Self> {
        if exponent > -1.0 && exponent <= 0.0 {
            Ok(Self { exponent })
        } else {
            Err(FhError::InvalidArgument(format!(
                "prior exponent must lie in (-1, 0], got {exponent}"
            )))
        }
    }

    /// Flat prior on `A`.
    pub fn uniform() -> Self {
        Self { exponent: 0.0 }
    }

    /// `π(A) = 1/√A`.
    pub fn inverse_sqrt() -> Self {
        Self { exponent: -0.5 }
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }
}

/// Unnormalised `log p(A | y) = p·log A + ℓ_R(A)`.
pub fn log_posterior_a(data: &Dataset, prior: &PriorSpec, a: f64) -> Result<f64> {
    if a == 0.0 && prior.exponent < 0.0 {
        return Err(FhError::InvalidArgument(
            "log posterior is unbounded at A = 0 for a negative prior exponent".into(),
        ));
    }
    let ev = Evaluation::new(data, a)?;
    Ok(log_post(&ev, prior, a))
}

fn log_post(ev: &Evaluation<'_>, prior: &PriorSpec, a: f64) -> f64 {
    if prior.exponent == 0.0 {
        ev.log_residual()
    } else {
        prior.exponent * a.ln() + ev.log_residual()
    }
}

/// d/dA of the unnormalised log posterior.
fn log_post_score(ev: &Evaluation<'_>, prior: &PriorSpec, a: f64) -> f64 {
    if prior.exponent == 0.0 {
        ev.residual_score()
    } else {
        prior.exponent / a + ev.residual_score()
    }
}

/// Normalised posterior of `A` for one dataset and prior.
///
/// Construction integrates the posterior once; every per-area quantity is
/// then derived from it.
#[derive(Debug, Clone)]
pub struct PosteriorContext<'a> {
    data: &'a Dataset,
    prior: PriorSpec,
    /// `c` in `t = A / (A + c)`
    scale: f64,
    shift: f64,
    log_norm: f64,
}

impl<'a> PosteriorContext<'a> {
    pub fn new(data: &'a Dataset, prior: PriorSpec) -> Result<Self> {
        let df = data.k() - data.r();
        // tail of A^p · exp(ℓ_R) behaves like A^{p - (k - r)/2}
        if !(df as f64 / 2.0 - prior.exponent > 1.0) {
            return Err(FhError::ImproperPosterior {
                df,
                exponent: prior.exponent,
            });
        }
        let scale = data.median_v();
        let mut ctx = Self {
            data,
            prior,
            scale,
            shift: 0.0,
            log_norm: 0.0,
        };
        ctx.shift = (0..400)
            .map(|j| ctx.log_t_density((j as f64 + 0.5) / 400.0))
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if !ctx.shift.is_finite() {
            return Err(FhError::QuadratureNotConverged { panels: 0, error: f64::NAN });
        }
        let z = ctx.integrate_t(0.0, 1.0, 1, |_, _, _, out| out[0] = 1.0)?;
        ctx.log_norm = ctx.shift + z[0].ln();
        Ok(ctx)
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn t_scale(&self) -> f64 {
        self.scale
    }

    pub fn a_of_t(&self, t: f64) -> f64 {
        self.scale * t / (1.0 - t)
    }

    pub fn t_of_a(&self, a: f64) -> f64 {
        a / (a + self.scale)
    }

    /// Unnormalised log density of `t`, including the Jacobian `dA/dt`.
    fn log_t_density(&self, t: f64) -> f64 {
        let a = self.a_of_t(t);
        match Evaluation::new(self.data, a) {
            Ok(ev) => log_post(&ev, &self.prior, a) + self.scale.ln() - 2.0 * (1.0 - t).ln(),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Normalised `log p(A | y)`.
    pub fn log_density(&self, a: f64) -> Result<f64> {
        Ok(log_posterior_a(self.data, &self.prior, a)? - self.log_norm)
    }

    pub fn density(&self, a: f64) -> f64 {
        if a == 0.0 && self.prior.exponent < 0.0 {
            return f64::INFINITY;
        }
        self.log_density(a).map(f64::exp).unwrap_or(0.0)
    }

    /// `∫ f(A) p̃(A) dA` over `t ∈ [t_lo, t_hi]` where `p̃` is the posterior
    /// scaled by `exp(-shift)`. `f` receives `(evaluation, A, t, out)`.
    pub(crate) fn integrate_t<F>(&self, t_lo: f64, t_hi: f64, dim: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&Evaluation<'_>, f64, f64, &mut [f64]),
    {
        let integrand = |t: f64, out: &mut [f64]| {
            let a = self.a_of_t(t);
            let ev = match Evaluation::new(self.data, a) {
                Ok(ev) => ev,
                Err(_) => {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return;
                }
            };
            let lp = log_post(&ev, &self.prior, a) + self.scale.ln() - 2.0 * (1.0 - t).ln();
            let w = (lp - self.shift).exp();
            f(&ev, a, t, out);
            for o in out.iter_mut() {
                *o *= w;
            }
        };
        let res = quadrature::integrate(integrand, t_lo, t_hi, dim, QUAD_REL_TOL, QUAD_MAX_PANELS)?;
        Ok(res.values)
    }

    /// Posterior expectations `E[f_j(A) | y]`, `j = 0..dim`.
    pub(crate) fn expect<F>(&self, dim: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&Evaluation<'_>, f64, &mut [f64]),
    {
        self.expect_between(0.0, 1.0, dim, f)
    }

    /// Expectations under the posterior restricted to `t ∈ [t_lo, t_hi]`.
    pub(crate) fn expect_between<F>(&self, t_lo: f64, t_hi: f64, dim: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&Evaluation<'_>, f64, &mut [f64]),
    {
        let raw = self.integrate_t(t_lo, t_hi, dim + 1, |ev, a, _, out| {
            out[0] = 1.0;
            f(ev, a, &mut out[1..]);
        })?;
        Ok(raw[1..].iter().map(|v| v / raw[0]).collect())
    }

    /// Posterior mean of `A`-functions `V_i / (V_i + A)` computed on the A
    /// scale. Used as the change-of-variables cross-check of the b-scale
    /// moments.
    pub fn shrinkage_moments_a_scale(&self, area_index: usize) -> Result<(f64, f64)> {
        self.data.check_index(area_index)?;
        let v = self.data.v()[area_index];
        let m = self.expect(2, |_, a, out| {
            let b = v / (v + a);
            out[0] = b;
            out[1] = b * b;
        })?;
        Ok((m[0], m[1] - m[0] * m[0]))
    }
}

/// One row of the Table-1-style comparison.
#[derive(Debug, Clone, Serialize)]
pub struct AreaMoments {
    pub area: String,
    pub exact_mean: f64,
    pub adm_mean: f64,
    pub laplace_mean: f64,
    pub exact_variance: f64,
    pub adm_variance: f64,
    pub laplace_variance: f64,
    pub laplace_boundary: bool,
    pub laplace_curvature_ok: bool,
}

/// One point of the density comparison plot.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridPoint {
    pub b: f64,
    pub exact_density: f64,
    pub adm_density: f64,
    pub laplace_density: f64,
}

/// Exact, ADM and Laplace summaries for one area.
#[derive(Debug, Clone)]
pub struct ShrinkageComparison {
    pub exact: ExactShrinkagePosterior,
    pub adm: BetaFit,
    pub laplace: NormalFit,
}

impl ShrinkageComparison {
    pub fn moments(&self, data: &Dataset) -> AreaMoments {
        AreaMoments {
            area: data.ids()[self.exact.area_index].clone(),
            exact_mean: self.exact.mean,
            adm_mean: self.adm.mean,
            laplace_mean: self.laplace.mean,
            exact_variance: self.exact.variance,
            adm_variance: self.adm.variance,
            laplace_variance: self.laplace.variance,
            laplace_boundary: self.laplace.boundary_mode,
            laplace_curvature_ok: self.laplace.curvature_ok,
        }
    }

    /// Densities on the exact posterior's grid.
    pub fn density_grid(&self) -> Vec<GridPoint> {
        let beta = Beta::new(self.adm.alpha, self.adm.beta_param).ok();
        let normal = Normal::new(self.laplace.mean, self.laplace.variance.sqrt()).ok();
        self.exact
            .grid
            .iter()
            .map(|&(b, exact_density)| GridPoint {
                b,
                exact_density,
                adm_density: beta
                    .as_ref()
                    .map(|d| d.pdf(b))
                    .filter(|v| v.is_finite())
                    .unwrap_or(0.0),
                laplace_density: normal.as_ref().map(|d| d.pdf(b)).unwrap_or(0.0),
            })
            .collect()
    }
}

/// Runs the three approximations for every area (in parallel; the output
/// order is the area order and does not depend on the thread count).
pub fn compare_all(data: &Dataset, prior: PriorSpec) -> Result<Vec<ShrinkageComparison>> {
    let ctx = PosteriorContext::new(data, prior)?;
    let mode = laplace::posterior_mode(&ctx)?;
    (0..data.k())
        .into_par_iter()
        .map(|i| {
            Ok(ShrinkageComparison {
                exact: exact::exact_in(&ctx, i)?,
                adm: adm::adm_in(&ctx, i, AdmAdjustment::default())?,
                laplace: laplace::laplace_in(&ctx, &mode, i)?,
            })
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::dataset::{Area, Dataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// `k` areas, intercept plus one covariate, unequal variances.
    pub fn random_dataset(seed: u64, k: usize, a_true: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas = (0..k)
            .map(|i| {
                let v: f64 = rng.random_range(0.3..3.0);
                let z: f64 = rng.random_range(-1.0..1.0);
                let u: f64 = StandardNormal.sample(&mut rng);
                let e: f64 = StandardNormal.sample(&mut rng);
                Area {
                    id: format!("s{i}"),
                    y: 1.0 + 2.0 * z + a_true.sqrt() * u + v.sqrt() * e,
                    v,
                    x: vec![1.0, z],
                }
            })
            .collect();
        Dataset::new(areas).unwrap()
    }

    pub fn balanced(y: &[f64], v: f64) -> Dataset {
        Dataset::new(
            y.iter()
                .enumerate()
                .map(|(i, &y)| Area {
                    id: format!("b{i}"),
                    y,
                    v,
                    x: vec![1.0],
                })
                .collect(),
        )
        .unwrap()
    }
}
