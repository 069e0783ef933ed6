//! First-order Laplace (normal) approximation to the posterior of `B_i`.
//!
//! The mean is `B_i` evaluated at the posterior mode of `A`; the variance is
//! the delta-method transform of the inverse observed information at that
//! mode. At a boundary mode (`A = 0`) the information is taken from one-sided
//! differences of the likelihood score, and a non-positive value is reported
//! through `curvature_ok = false` with `|J|` used in the variance.

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::gml::{maximize_gml, GmlConfig};
use crate::model::Evaluation;

use super::{PosteriorContext, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalFit {
    pub area_index: usize,
    pub mean: f64,
    pub variance: f64,
    pub a_mode: f64,
    pub boundary_mode: bool,
    /// `J > 0` at the mode.
    pub curvature_ok: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PosteriorMode {
    pub a: f64,
    /// `J = −d²/dA² log p(A | y)` at the mode.
    pub information: f64,
}

fn score(data: &Dataset, a: f64) -> f64 {
    Evaluation::new(data, a)
        .map(|ev| ev.residual_score())
        .unwrap_or(f64::NAN)
}

/// −d²ℓ_R/dA² at `a` from differences of the analytic score.
fn residual_information(data: &Dataset, a: f64, h: f64) -> f64 {
    if a >= h {
        let d = |h: f64| (score(data, a + h) - score(data, a - h)) / (2.0 * h);
        -(4.0 * d(0.5 * h) - d(h)) / 3.0
    } else {
        // second-order forward difference, then one Richardson step
        let d = |h: f64| (-3.0 * score(data, a) + 4.0 * score(data, a + h) - score(data, a + 2.0 * h)) / (2.0 * h);
        -(4.0 * d(0.5 * h) - d(h)) / 3.0
    }
}

pub(crate) fn mode_information(data: &Dataset, prior: &PriorSpec, a: f64) -> f64 {
    let h = 1e-4 * data.median_v();
    let j = residual_information(data, a, h);
    if a > 0.0 && prior.exponent() != 0.0 {
        // −d²/dA² (p log A) = p / A²
        j + prior.exponent() / (a * a)
    } else {
        j
    }
}

pub(crate) fn posterior_mode(ctx: &PosteriorContext<'_>) -> Result<PosteriorMode> {
    let data = ctx.data();
    let a = if ctx.prior().exponent() < 0.0 {
        // A^p is unbounded at 0
        0.0
    } else {
        maximize_gml(data, &GmlConfig::reml())?.a_hat
    };
    Ok(PosteriorMode {
        a,
        information: mode_information(data, ctx.prior(), a),
    })
}

pub(crate) fn laplace_in(ctx: &PosteriorContext<'_>, mode: &PosteriorMode, area_index: usize) -> Result<NormalFit> {
    ctx.data().check_index(area_index)?;
    Ok(normal_fit(ctx.data(), mode, area_index))
}

fn normal_fit(data: &Dataset, mode: &PosteriorMode, area_index: usize) -> NormalFit {
    let v = data.v()[area_index];
    let a = mode.a;
    let db_da = -v / ((v + a) * (v + a));
    let j = mode.information;
    NormalFit {
        area_index,
        mean: v / (v + a),
        variance: db_da * db_da / j.abs(),
        a_mode: a,
        boundary_mode: a == 0.0,
        curvature_ok: j > 0.0,
    }
}

/// Laplace approximation to the posterior of `B_i`.
///
/// Needs only the posterior mode, so the posterior is never normalised.
pub fn laplace_fit(data: &Dataset, prior: PriorSpec, area_index: usize) -> Result<NormalFit> {
    data.check_index(area_index)?;
    let a = if prior.exponent() < 0.0 {
        0.0
    } else {
        maximize_gml(data, &GmlConfig::reml())?.a_hat
    };
    let mode = PosteriorMode {
        a,
        information: mode_information(data, &prior, a),
    };
    Ok(normal_fit(data, &mode, area_index))
}
