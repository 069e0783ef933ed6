//! EBLUP prediction and parametric bootstrap intervals for area means.
//!
//! The bootstrap pivot for area `i` is `(θ*_i − θ̂*_i) / √g1(Â*)` with
//! `g1(A) = A·V_i / (A + V_i)`. The pivot is undefined at `Â* = 0`, which is
//! why a zero estimate either has to be truncated to a positive value or
//! avoided altogether by an estimator with `q > 0`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{FhError, Result};
use crate::gml::{maximize_gml, GmlConfig, Method};
use crate::model::{shrinkage, Evaluation};
use crate::posterior::{theta_posterior_adm, PriorSpec};
use crate::rng::{self, domain};
use crate::stats::quantile_sorted;

/// EBLUP of θ_i: `y_i − B_i(Â)(y_i − x_i'β̂(Â))`.
pub fn eblup_point(data: &Dataset, a_hat: f64, area_index: usize) -> Result<f64> {
    data.check_index(area_index)?;
    Ok(Evaluation::new(data, a_hat)?.conditional_moments(area_index).0)
}

/// `g1(A) = A·V / (A + V)`.
pub fn g1(a: f64, v: f64) -> f64 {
    a * v / (a + v)
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionResult {
    pub area_index: usize,
    pub point: f64,
    pub naive_sd: f64,
    pub adm_variance: f64,
    pub method: Method,
}

/// EBLUPs under `estimator`, with plug-in and ADM uncertainty measures.
pub fn predict(data: &Dataset, estimator: &GmlConfig, prior: PriorSpec) -> Result<Vec<PredictionResult>> {
    let est = maximize_gml(data, estimator)?;
    let ev = Evaluation::new(data, est.a_hat)?;
    (0..data.k())
        .map(|i| {
            let v = data.v()[i];
            Ok(PredictionResult {
                area_index: i,
                point: ev.conditional_moments(i).0,
                naive_sd: g1(est.a_hat, v).sqrt(),
                adm_variance: theta_posterior_adm(data, prior, i)?.1,
                method: est.method,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub level: f64,
    pub seed: u64,
    pub estimator: GmlConfig,
    /// Floor applied to zero estimates; `0` disables truncation.
    pub truncation_epsilon: f64,
}

impl BootstrapConfig {
    pub fn new(estimator: GmlConfig, reps: usize, level: f64, seed: u64) -> Self {
        Self {
            reps,
            level,
            seed,
            estimator,
            truncation_epsilon: 0.0,
        }
    }

    pub fn with_truncation(mut self, epsilon: f64) -> Self {
        self.truncation_epsilon = epsilon;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.reps < 100 {
            return Err(FhError::InvalidArgument(format!(
                "at least 100 bootstrap replicates are required, got {}",
                self.reps
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(FhError::InvalidArgument(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if !(self.truncation_epsilon >= 0.0) || !self.truncation_epsilon.is_finite() {
            return Err(FhError::InvalidArgument("truncation epsilon must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalResult {
    pub area_index: usize,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub pivot_quantiles: (f64, f64),
    /// Replicates whose estimate was zero before truncation.
    pub degenerate_reps: usize,
    /// Replicates that produced a pivot.
    pub effective_reps: usize,
}

impl IntervalResult {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

struct Replicate {
    /// One pivot per area; `None` when re-estimation failed or the pivot is
    /// undefined.
    pivots: Option<Vec<f64>>,
    degenerate: bool,
}

fn run_replicate(
    data: &Dataset,
    cfg: &BootstrapConfig,
    a_hat: f64,
    synthetic: &[f64],
    key: u64,
    index: usize,
) -> Result<Replicate> {
    let mut rng = rng::stream(key, index as u64);
    let sd_u = a_hat.sqrt();
    let mut theta = Vec::with_capacity(data.k());
    let mut y = Vec::with_capacity(data.k());
    for (i, &fit) in synthetic.iter().enumerate() {
        let u: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        let t = fit + sd_u * u;
        theta.push(t);
        y.push(t + data.v()[i].sqrt() * e);
    }
    let star = data.with_y(&y)?;
    let est = match maximize_gml(&star, &cfg.estimator) {
        Ok(est) => est,
        Err(FhError::NoInteriorMax { .. }) => {
            return Ok(Replicate {
                pivots: None,
                degenerate: false,
            })
        }
        Err(e) => return Err(e),
    };
    let degenerate = est.a_hat == 0.0;
    let a_star = est.a_hat.max(cfg.truncation_epsilon);
    if a_star == 0.0 {
        return Ok(Replicate {
            pivots: None,
            degenerate,
        });
    }
    let ev = Evaluation::new(&star, a_star)?;
    let pivots = (0..data.k())
        .map(|i| {
            let (pred, _) = ev.conditional_moments(i);
            (theta[i] - pred) / g1(a_star, data.v()[i]).sqrt()
        })
        .collect();
    Ok(Replicate {
        pivots: Some(pivots),
        degenerate,
    })
}

/// Parametric bootstrap intervals for every area from one set of replicates.
pub fn bootstrap_intervals(data: &Dataset, cfg: &BootstrapConfig) -> Result<Vec<IntervalResult>> {
    cfg.validate()?;
    let est = maximize_gml(data, &cfg.estimator)?;
    let a_hat = est.a_hat.max(cfg.truncation_epsilon);
    if a_hat == 0.0 {
        return Err(FhError::ZeroVarianceEstimate);
    }
    let ev = Evaluation::new(data, a_hat)?;
    let synthetic: Vec<f64> = (0..data.k())
        .map(|i| ev.fitted(i)).collect();
    let key = rng::derive_key(&[cfg.seed, domain::BOOTSTRAP]);

    let reps: Vec<Replicate> = (0..cfg.reps)
        .into_par_iter()
        .map(|b| run_replicate(data, cfg, a_hat, &synthetic, key, b))
        .collect::<Result<_>>()?;

    let failed = reps.iter().filter(|r| r.pivots.is_none()).count();
    if failed * 100 > cfg.reps {
        return Err(FhError::TooManyFailedReplicates {
            failed,
            reps: cfg.reps,
        });
    }
    let degenerate = reps.iter().filter(|r| r.degenerate).count();
    let effective = cfg.reps - failed;
    let p_lo = 0.5 * (1.0 - cfg.level);
    let p_hi = 0.5 * (1.0 + cfg.level);

    Ok((0..data.k())
        .map(|i| {
            let mut pivots: Vec<f64> = reps
                .iter()
                .filter_map(|r| r.pivots.as_ref().map(|p| p[i]))
                .collect();
            pivots.sort_by(f64::total_cmp);
            let q_lo = quantile_sorted(&pivots, p_lo);
            let q_hi = quantile_sorted(&pivots, p_hi);
            let point = ev.conditional_moments(i).0;
            let scale = g1(a_hat, data.v()[i]).sqrt();
            IntervalResult {
                area_index: i,
                point,
                lower: point + q_lo * scale,
                upper: point + q_hi * scale,
                pivot_quantiles: (q_lo, q_hi),
                degenerate_reps: degenerate,
                effective_reps: effective,
            }
        })
        .collect())
}

/// Parametric bootstrap interval for one area.
pub fn bootstrap_interval(data: &Dataset, cfg: &BootstrapConfig, area_index: usize) -> Result<IntervalResult> {
    data.check_index(area_index)?;
    let mut all = bootstrap_intervals(data, cfg)?;
    Ok(all.swap_remove(area_index))
}

/// Shrinkage factors at an estimate, for reporting.
pub fn shrinkage_factors(data: &Dataset, a_hat: f64) -> Vec<f64> {
    data.v().iter().map(|&v| shrinkage(v, a_hat)).collect()
}
