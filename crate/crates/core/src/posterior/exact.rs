use crate::dataset::Dataset;
use crate::error::{FhError, Result};
use crate::gml::{maximize_gml, GmlConfig, LikelihoodBase};
use crate::model::{gls_beta, Evaluation};
use crate::quadrature;

use super::adm::{adm_in, AdmAdjustment};
use super::{log_post, PosteriorContext, PriorSpec, QUAD_MAX_PANELS, QUAD_REL_TOL};

/// Points on the emitted density grid (`b = j / GRID_INTERVALS`).
pub const GRID_INTERVALS: usize = 400;

#[derive(Debug, Clone)]
pub struct ExactShrinkagePosterior {
    pub area_index: usize,
    /// `(b, density)` pairs in increasing `b`; endpoints where the density
    /// is unbounded are omitted.
    pub grid: Vec<(f64, f64)>,
    pub mean: f64,
    pub variance: f64,
    /// `|∫ density db − 1|` with the density normalised on the `A` scale.
    pub norm_residual: f64,
}

/// Density of `B_i` at `b`: `p_A(V_i(1 − b)/b) · V_i / b²`.
pub(crate) fn b_density(ctx: &PosteriorContext<'_>, v: f64, b: f64) -> f64 {
    if b <= 0.0 {
        let df = (ctx.data.k() - ctx.data.r()) as f64;
        // p_B(b) ~ b^{df/2 - p - 2} as b → 0
        let power = df / 2.0 - ctx.prior.exponent - 2.0;
        return if power > 0.0 { 0.0 } else { f64::INFINITY };
    }
    if b >= 1.0 {
        return ctx.density(0.0) * v;
    }
    let a = v * (1.0 - b) / b;
    match Evaluation::new(ctx.data, a) {
        Ok(ev) => (log_post(&ev, &ctx.prior, a) - ctx.log_norm).exp() * v / (b * b),
        Err(_) => 0.0,
    }
}

pub(crate) fn exact_in(ctx: &PosteriorContext<'_>, area_index: usize) -> Result<ExactShrinkagePosterior> {
    ctx.data.check_index(area_index)?;
    let v = ctx.data.v()[area_index];
    let res = quadrature::integrate(
        |b, out| {
            let p = b_density(ctx, v, b);
            out[0] = p;
            out[1] = b * p;
            out[2] = b * b * p;
        },
        0.0,
        1.0,
        3,
        QUAD_REL_TOL,
        QUAD_MAX_PANELS,
    )?;
    let [norm, m1, m2] = [res.values[0], res.values[1], res.values[2]];
    let norm_residual = (norm - 1.0).abs();
    if !(norm_residual <= 1e-6) {
        return Err(FhError::QuadratureNotConverged {
            panels: res.panels,
            error: norm_residual,
        });
    }
    let mean = m1 / norm;
    let variance = m2 / norm - mean * mean;
    let grid = (0..=GRID_INTERVALS)
        .map(|j| {
            let b = j as f64 / GRID_INTERVALS as f64;
            (b, b_density(ctx, v, b))
        })
        .filter(|(_, d)| d.is_finite())
        .collect();
    Ok(ExactShrinkagePosterior {
        area_index,
        grid,
        mean,
        variance,
        norm_residual,
    })
}

/// Exact posterior of `B_i` by one-dimensional quadrature on the b scale.
pub fn posterior_b_exact(data: &Dataset, prior: PriorSpec, area_index: usize) -> Result<ExactShrinkagePosterior> {
    data.check_index(area_index)?;
    let ctx = PosteriorContext::new(data, prior)?;
    exact_in(&ctx, area_index)
}

pub(crate) fn theta_exact_in(ctx: &PosteriorContext<'_>, area_index: usize) -> Result<(f64, f64)> {
    theta_exact_between(ctx, area_index, 0.0, 1.0)
}

/// Moments with the posterior of `A` restricted to `t ∈ [t_lo, t_hi]`.
pub(crate) fn theta_exact_between(
    ctx: &PosteriorContext<'_>,
    area_index: usize,
    t_lo: f64,
    t_hi: f64,
) -> Result<(f64, f64)> {
    ctx.data.check_index(area_index)?;
    let y = ctx.data.y()[area_index];
    // centred at y_i to limit cancellation in the variance
    let m = ctx.expect_between(t_lo, t_hi, 2, |ev, _, out| {
        let (mean, var) = ev.conditional_moments(area_index);
        let d = mean - y;
        out[0] = d;
        out[1] = var + d * d;
    })?;
    Ok((y + m[0], m[1] - m[0] * m[0]))
}

/// Posterior mean and variance of θ_i, integrating the conditional moments
/// over the posterior of `A`.
pub fn theta_posterior_exact(data: &Dataset, prior: PriorSpec, area_index: usize) -> Result<(f64, f64)> {
    data.check_index(area_index)?;
    let ctx = PosteriorContext::new(data, prior)?;
    theta_exact_in(&ctx, area_index)
}

pub(crate) fn theta_adm_in(ctx: &PosteriorContext<'_>, area_index: usize) -> Result<(f64, f64)> {
    let fit = adm_in(ctx, area_index, AdmAdjustment::default())?;
    let est = maximize_gml(
        ctx.data,
        &GmlConfig::new(1.0 + ctx.prior.exponent(), LikelihoodBase::Residual),
    )?;
    theta_from_shrinkage(ctx.data, area_index, est.a_hat, fit.mean, fit.variance)
}

/// θ_i moments with the shrinkage moments plugged into the conditional
/// formulas; β and its covariance are taken at `a_hat`.
pub(crate) fn theta_from_shrinkage(
    data: &Dataset,
    area_index: usize,
    a_hat: f64,
    b_mean: f64,
    b_var: f64,
) -> Result<(f64, f64)> {
    let gls = gls_beta(data, a_hat)?;
    let xi = data.x_row(area_index);
    let y = data.y()[area_index];
    let v = data.v()[area_index];
    let resid = y - xi.dot(&gls.beta_hat);
    let mean = y - b_mean * resid;
    let var = v * (1.0 - b_mean) + b_var * resid * resid + b_mean * b_mean * xi.dot(&(&gls.beta_cov * &xi));
    Ok((mean, var))
}

/// ADM approximation to the posterior moments of θ_i.
pub fn theta_posterior_adm(data: &Dataset, prior: PriorSpec, area_index: usize) -> Result<(f64, f64)> {
    data.check_index(area_index)?;
    let ctx = PosteriorContext::new(data, prior)?;
    theta_adm_in(&ctx, area_index)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::model::conditional_theta_moments;
    use approx::assert_relative_eq;

    #[test]
    fn normalises_and_matches_a_scale() {
        for seed in 0..5 {
            let d = random_dataset(seed, 12, 1.0);
            let ctx = PosteriorContext::new(&d, PriorSpec::uniform()).unwrap();
            for i in 0..d.k() {
                let ex = exact_in(&ctx, i).unwrap();
                assert!(ex.norm_residual <= 1e-6);
                assert!(ex.mean > 0.0 && ex.mean < 1.0);
                assert!(ex.variance > 0.0);
                assert!(ex.grid.iter().all(|&(_, p)| p >= 0.0));
                let (m, var) = ctx.shrinkage_moments_a_scale(i).unwrap();
                assert!((m - ex.mean).abs() < 1e-5);
                assert!((var - ex.variance).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn prior_moves_shrinkage_up() {
        for seed in 10..14 {
            let d = random_dataset(seed, 10, 0.8);
            for i in 0..d.k() {
                let flat = posterior_b_exact(&d, PriorSpec::uniform(), i).unwrap();
                let inv = posterior_b_exact(&d, PriorSpec::inverse_sqrt(), i).unwrap();
                assert!(inv.mean >= flat.mean - 1e-12);
            }
        }
    }

    #[test]
    fn singular_prior_still_normalises() {
        let d = random_dataset(33, 8, 0.3);
        let ex = posterior_b_exact(&d, PriorSpec::inverse_sqrt(), 0).unwrap();
        assert!(ex.norm_residual <= 1e-6);
        // density unbounded at b = 1, so the grid stops short of it
        assert!(ex.grid.last().unwrap().0 < 1.0);
    }

    #[test]
    fn narrow_bracket_reduces_to_conditional() {
        let d = random_dataset(2, 10, 1.0);
        let ctx = PosteriorContext::new(&d, PriorSpec::uniform()).unwrap();
        let a0 = 0.9;
        let t0 = ctx.t_of_a(a0);
        let (m, v) = theta_exact_between(&ctx, 3, t0 - 1e-9, t0 + 1e-9).unwrap();
        let (cm, cv) = conditional_theta_moments(&d, a0, 3).unwrap();
        assert_relative_eq!(m, cm, max_relative = 1e-6);
        assert_relative_eq!(v, cv, max_relative = 1e-6);
    }

    #[test]
    fn total_variance_exceeds_mean_conditional_variance() {
        let d = random_dataset(7, 15, 1.5);
        let ctx = PosteriorContext::new(&d, PriorSpec::uniform()).unwrap();
        for i in 0..d.k() {
            let (_, var) = theta_exact_in(&ctx, i).unwrap();
            let ev = ctx.expect(1, |e, _, out| out[0] = e.conditional_moments(i).1).unwrap();
            assert!(var >= ev[0] - 1e-12);
        }
    }

    #[test]
    fn adm_theta_with_degenerate_shrinkage() {
        let d = random_dataset(9, 12, 1.0);
        let a_hat = 0.7;
        let b = d.v()[2] / (d.v()[2] + a_hat);
        let (m, v) = theta_from_shrinkage(&d, 2, a_hat, b, 0.0).unwrap();
        let (cm, cv) = conditional_theta_moments(&d, a_hat, 2).unwrap();
        assert_relative_eq!(m, cm, epsilon = 1e-12);
        assert_relative_eq!(v, cv, epsilon = 1e-12);
    }

    #[test]
    fn adm_theta_tracks_exact() {
        for seed in 40..43 {
            let d = random_dataset(seed, 30, 1.0);
            let ctx = PosteriorContext::new(&d, PriorSpec::uniform()).unwrap();
            for i in 0..d.k() {
                let (em, ev) = theta_exact_in(&ctx, i).unwrap();
                let (am, av) = theta_adm_in(&ctx, i).unwrap();
                assert!(av > 0.0);
                assert!((am - em).abs() < 0.25 * ev.sqrt(), "seed {seed} area {i}: {am} vs {em}");
            }
        }
    }
}
