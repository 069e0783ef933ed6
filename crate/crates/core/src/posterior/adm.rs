//! Beta approximation to a density on `(0, 1)` by adjusted density
//! maximisation.
//!
//! The density is multiplied by `b^{c₁}(1 − b)^{c₂}` (default `c₁ = c₂ = 1`)
//! and the mode `B̂` and curvature `I = −g''(B̂)` of the adjusted log-density
//! `g` are matched to those of the same adjustment applied to a
//! `Beta(α, β)` density. With the default adjustment this gives
//! `α + β = I·B̂(1 − B̂)` and `α/(α + β) = B̂`, i.e. the adjusted mode is the
//! fitted mean. Both identities are exact when the input is itself Beta.

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{FhError, Result};
use crate::model::Evaluation;
use crate::optimize::{bisect_decreasing, golden_section};

use super::{log_post, log_post_score, PosteriorContext, PriorSpec};

/// A (possibly unnormalised) log-density on `(0, 1)`.
pub trait BScaleDensity {
    fn log_density(&self, b: f64) -> f64;

    /// Derivative of `log_density`; the default is a Richardson-extrapolated
    /// central difference.
    fn d_log_density(&self, b: f64) -> f64 {
        let h = 1e-5 * b.min(1.0 - b);
        let d = |h: f64| (self.log_density(b + h) - self.log_density(b - h)) / (2.0 * h);
        (4.0 * d(0.5 * h) - d(h)) / 3.0
    }
}

/// Exponents of the adjustment factor `b^{c₁}(1 − b)^{c₂}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmAdjustment {
    pub b_exponent: f64,
    pub complement_exponent: f64,
}

impl Default for AdmAdjustment {
    fn default() -> Self {
        Self {
            b_exponent: 1.0,
            complement_exponent: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaFit {
    pub area_index: usize,
    pub alpha: f64,
    pub beta_param: f64,
    pub mean: f64,
    pub variance: f64,
    /// Mode of the adjusted density.
    pub mode_of_adjusted: f64,
}

/// Fits `Beta(α, β)` to `density`; returns `(α, β, adjusted mode)`.
pub fn fit_adjusted_beta<D: BScaleDensity + ?Sized>(
    density: &D,
    adjustment: AdmAdjustment,
) -> Result<(f64, f64, f64)> {
    let (c1, c2) = (adjustment.b_exponent, adjustment.complement_exponent);
    let g = |b: f64| {
        let v = c1 * b.ln() + c2 * (1.0 - b).ln() + density.log_density(b);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let dg = |b: f64| c1 / b - c2 / (1.0 - b) + density.d_log_density(b);

    // scan in logit space; b = 1/(1 + e^{-u})
    const N: usize = 241;
    let grid: Vec<f64> = (0..N)
        .map(|j| {
            let u = -30.0 + 60.0 * j as f64 / (N - 1) as f64;
            1.0 / (1.0 + (-u).exp())
        })
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&b| g(b)).collect();
    let mut best = 0;
    for j in 1..N {
        if vals[j] > vals[best] {
            best = j;
        }
    }
    if best == 0 || best == N - 1 || !vals[best].is_finite() {
        return Err(FhError::AdjustedModeNotInterior);
    }
    let (lo, hi) = (grid[best - 1], grid[best + 1]);
    let mode = if dg(lo) > 0.0 && dg(hi) < 0.0 {
        bisect_decreasing(&dg, lo, hi, 0.0).0
    } else {
        golden_section(&g, lo, hi, 1e-12 * lo.min(1.0 - hi).max(1e-300)).0
    };

    // I = -g''(B̂) from central differences of g' with one Richardson step
    let h = 1e-4 * mode.min(1.0 - mode);
    let d2 = |h: f64| (dg(mode + h) - dg(mode - h)) / (2.0 * h);
    let curvature = -(4.0 * d2(0.5 * h) - d2(h)) / 3.0;
    if !(curvature > 0.0) || !curvature.is_finite() {
        return Err(FhError::NegativeCurvature(-curvature));
    }
    // adjusted Beta has exponents (α - 1 + c₁, β - 1 + c₂)
    let n = curvature * mode * (1.0 - mode);
    let alpha = mode * n + 1.0 - c1;
    let beta = (1.0 - mode) * n + 1.0 - c2;
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(FhError::AdjustedModeNotInterior);
    }
    Ok((alpha, beta, mode))
}

/// Unnormalised posterior density of `B_i` for a Fay-Herriot dataset.
pub(crate) struct ShrinkageDensity<'a> {
    pub(crate) data: &'a Dataset,
    pub(crate) prior: PriorSpec,
    pub(crate) v: f64,
}

impl BScaleDensity for ShrinkageDensity<'_> {
    fn log_density(&self, b: f64) -> f64 {
        let a = self.v * (1.0 - b) / b;
        match Evaluation::new(self.data, a) {
            Ok(ev) => log_post(&ev, &self.prior, a) + self.v.ln() - 2.0 * b.ln(),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn d_log_density(&self, b: f64) -> f64 {
        let a = self.v * (1.0 - b) / b;
        match Evaluation::new(self.data, a) {
            Ok(ev) => -log_post_score(&ev, &self.prior, a) * self.v / (b * b) - 2.0 / b,
            Err(_) => f64::NAN,
        }
    }
}

pub(crate) fn adm_in(ctx: &PosteriorContext<'_>, area_index: usize, adjustment: AdmAdjustment) -> Result<BetaFit> {
    ctx.data.check_index(area_index)?;
    let density = ShrinkageDensity {
        data: ctx.data,
        prior: ctx.prior,
        v: ctx.data.v()[area_index],
    };
    beta_fit(&density, area_index, adjustment)
}

fn beta_fit<D: BScaleDensity>(density: &D, area_index: usize, adjustment: AdmAdjustment) -> Result<BetaFit> {
    let (alpha, beta_param, mode) = fit_adjusted_beta(density, adjustment)?;
    let total = alpha + beta_param;
    let mean = if adjustment == AdmAdjustment::default() {
        mode
    } else {
        alpha / total
    };
    Ok(BetaFit {
        area_index,
        alpha,
        beta_param,
        mean,
        variance: mean * (1.0 - mean) / (total + 1.0),
        mode_of_adjusted: mode,
    })
}

/// ADM Beta approximation to the posterior of `B_i`.
///
/// Only the unnormalised density is needed, so no quadrature is run.
pub fn adm_fit(data: &Dataset, prior: PriorSpec, area_index: usize, adjustment: AdmAdjustment) -> Result<BetaFit> {
    data.check_index(area_index)?;
    let density = ShrinkageDensity {
        data,
        prior,
        v: data.v()[area_index],
    };
    beta_fit(&density, area_index, adjustment)
}
