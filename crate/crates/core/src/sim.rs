//! Monte Carlo studies of the variance estimators under a known truth.
//!
//! Each replicate draws `y` from the model with `(β, A)` held fixed. The draw
//! for replicate `j` comes from stream `j` of a key derived from the design
//! seed, so every estimator in a study sees the same replicate data and the
//! results do not depend on thread count or on the order of `q_list`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Area, Dataset};
use crate::error::{FhError, Result};
use crate::gml::{asymptotic_variance_bhat_balanced, bias_variance_ratio, maximize_gml, GmlConfig, LikelihoodBase};
use crate::prediction::{bootstrap_intervals, BootstrapConfig};
use crate::rng::{self, domain};
use crate::stats::mean_and_se;

#[derive(Debug, Clone, PartialEq)]
pub enum Variances {
    /// Common sampling variance.
    Balanced(f64),
    /// One sampling variance per area.
    Pattern(Vec<f64>),
}

/// Exponent of the `A^q` multiplier in a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QChoice {
    Fixed(f64),
    /// `q = 1 − b_true`.
    Oracle,
}

impl QChoice {
    pub fn resolve(self, b_true: f64) -> f64 {
        match self {
            QChoice::Fixed(q) => q,
            QChoice::Oracle => 1.0 - b_true,
        }
    }

    pub fn label(self) -> String {
        match self {
            QChoice::Fixed(q) => format!("q={q}"),
            QChoice::Oracle => "oracle".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub k: usize,
    pub variances: Variances,
    /// True shrinkage at the reference variance; `A = v(1 − b)/b`.
    pub b_true: f64,
    /// First entry is the intercept; further covariates are drawn once per
    /// design from the seed.
    pub beta_true: Vec<f64>,
    pub q_list: Vec<QChoice>,
    pub reps: usize,
    pub seed: u64,
    pub base: LikelihoodBase,
}

impl SimDesign {
    pub fn balanced(k: usize, v: f64, b_true: f64, q_list: Vec<QChoice>, reps: usize, seed: u64) -> Self {
        Self {
            k,
            variances: Variances::Balanced(v),
            b_true,
            beta_true: vec![0.0],
            q_list,
            reps,
            seed,
            base: LikelihoodBase::Residual,
        }
    }

    /// Reference variance defining `A`: the common value, or the median of
    /// the pattern.
    pub fn reference_v(&self) -> f64 {
        match &self.variances {
            Variances::Balanced(v) => *v,
            Variances::Pattern(p) => {
                let mut s = p.clone();
                s.sort_by(f64::total_cmp);
                let n = s.len();
                if n % 2 == 1 {
                    s[n / 2]
                } else {
                    0.5 * (s[n / 2 - 1] + s[n / 2])
                }
            }
        }
    }

    pub fn a_true(&self) -> f64 {
        let v = self.reference_v();
        v * (1.0 - self.b_true) / self.b_true
    }

    fn v_of(&self, i: usize) -> f64 {
        match &self.variances {
            Variances::Balanced(v) => *v,
            Variances::Pattern(p) => p[i],
        }
    }

    fn validate(&self, min_reps: usize) -> Result<()> {
        let r = self.beta_true.len();
        if r == 0 {
            return Err(FhError::InvalidArgument("beta_true must contain the intercept".into()));
        }
        if self.k < r + 2 {
            return Err(FhError::TooFewAreas { k: self.k, needed: r + 2 });
        }
        if !(self.b_true > 0.0 && self.b_true < 1.0) {
            return Err(FhError::InvalidArgument(format!("b_true must lie in (0, 1), got {}", self.b_true)));
        }
        if self.reps < min_reps {
            return Err(FhError::InvalidArgument(format!(
                "this study needs at least {min_reps} replicates, got {}",
                self.reps
            )));
        }
        match &self.variances {
            Variances::Balanced(v) if !(*v > 0.0) => {
                return Err(FhError::InvalidArgument("sampling variance must be positive".into()))
            }
            Variances::Pattern(p) if p.len() != self.k || p.iter().any(|v| !(*v > 0.0)) => {
                return Err(FhError::InvalidArgument(
                    "variance pattern needs k positive entries".into(),
                ))
            }
            _ => {}
        }
        for q in &self.q_list {
            let q = q.resolve(self.b_true);
            if !(q >= 0.0) || !q.is_finite() {
                return Err(FhError::InvalidArgument(format!("q must be >= 0, got {q}")));
            }
        }
        Ok(())
    }

    /// Design with `y = 0`; replicates replace `y`.
    fn template(&self) -> Result<Dataset> {
        let r = self.beta_true.len();
        let mut rng = rng::stream(rng::derive_key(&[self.seed, domain::DESIGN]), 0);
        let areas = (0..self.k)
            .map(|i| {
                let mut x = vec![1.0];
                x.extend((1..r).map(|_| rng.sample::<f64, _>(StandardNormal)));
                Area {
                    id: format!("sim{}", i + 1),
                    y: 0.0,
                    v: self.v_of(i),
                    x,
                }
            })
            .collect();
        Dataset::new(areas)
    }

    fn means(&self, template: &Dataset) -> Vec<f64> {
        (0..self.k)
            .map(|i| {
                template
                    .x_row(i)
                    .iter()
                    .zip(&self.beta_true)
                    .map(|(x, b)| x * b)
                    .sum()
            })
            .collect()
    }
}

/// One draw of `(θ, y)` from stream `index`.
fn draw(design: &SimDesign, means: &[f64], key: u64, index: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng::stream(key, index as u64);
    let sd_u = design.a_true().sqrt();
    let mut theta = Vec::with_capacity(means.len());
    let mut y = Vec::with_capacity(means.len());
    for (i, m) in means.iter().enumerate() {
        let u: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        let t = m + sd_u * u;
        theta.push(t);
        y.push(t + design.v_of(i).sqrt() * e);
    }
    (theta, y)
}

/// Estimates of `A`, indexed `[rep][q]`.
fn estimates(design: &SimDesign, domain: u64) -> Result<Vec<Vec<f64>>> {
    let template = design.template()?;
    let means = design.means(&template);
    let key = rng::derive_key(&[design.seed, domain]);
    let configs: Vec<GmlConfig> = design
        .q_list
        .iter()
        .map(|q| GmlConfig::new(q.resolve(design.b_true), design.base))
        .collect();
    (0..design.reps)
        .into_par_iter()
        .map(|j| {
            let (_, y) = draw(design, &means, key, j);
            let data = template.with_y(&y)?;
            configs
                .iter()
                .map(|cfg| maximize_gml(&data, cfg).map(|e| e.a_hat))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasRow {
    pub q: f64,
    pub label: String,
    pub b_true: f64,
    pub k: usize,
    pub empirical_bias: f64,
    pub mc_se: f64,
    /// First-order bias; present only for balanced residual-likelihood designs.
    pub theoretical_bias: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasTable {
    pub rows: Vec<BiasRow>,
}

/// Bias of `B̂ = v/(v + Â)` about `b_true` for every entry of `q_list`.
///
/// In unbalanced designs `B̂` is taken at the reference variance.
pub fn run_bias_study(design: &SimDesign) -> Result<BiasTable> {
    design.validate(1000)?;
    let est = estimates(design, domain::BIAS)?;
    let v = design.reference_v();
    let balanced = matches!(design.variances, Variances::Balanced(_)) && design.base == LikelihoodBase::Residual;
    let rows = design
        .q_list
        .iter()
        .enumerate()
        .map(|(c, choice)| {
            let q = choice.resolve(design.b_true);
            let b_hat: Vec<f64> = est.iter().map(|row| v / (v + row[c])).collect();
            let (mean, se) = mean_and_se(&b_hat);
            BiasRow {
                q,
                label: choice.label(),
                b_true: design.b_true,
                k: design.k,
                empirical_bias: mean - design.b_true,
                mc_se: se,
                theoretical_bias: balanced.then(|| {
                    asymptotic_variance_bhat_balanced(design.b_true, design.k) * bias_variance_ratio(design.b_true, q)
                }),
            }
        })
        .collect();
    Ok(BiasTable { rows })
}

/// Shrinkage values of the default bias grid.
pub const FIGURE3_B: [f64; 5] = [0.2, 0.35, 0.5, 0.65, 0.8];
pub const FIGURE3_K: usize = 15;
pub const FIGURE3_REPS: usize = 10_000;

pub fn figure3_q_list() -> Vec<QChoice> {
    vec![QChoice::Fixed(0.0), QChoice::Fixed(0.5), QChoice::Fixed(1.0), QChoice::Oracle]
}

/// Default balanced bias grid: five shrinkage values by four multipliers,
/// `k = 15`, unit sampling variance.
pub fn run_figure3(seed: u64, reps: usize) -> Result<BiasTable> {
    let mut rows = Vec::new();
    for b in FIGURE3_B {
        let design = SimDesign::balanced(FIGURE3_K, 1.0, b, figure3_q_list(), reps, seed);
        rows.extend(run_bias_study(&design)?.rows);
    }
    Ok(BiasTable { rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroFrequencyRow {
    pub q: f64,
    pub label: String,
    pub b_true: f64,
    pub k: usize,
    pub fraction_zero: f64,
    pub mc_se: f64,
}

/// Fraction of replicates in which `Â = 0`, for every entry of `q_list`.
pub fn run_zero_frequency_study(design: &SimDesign) -> Result<Vec<ZeroFrequencyRow>> {
    design.validate(1)?;
    let est = estimates(design, domain::BIAS)?;
    let n = est.len() as f64;
    Ok(design
        .q_list
        .iter()
        .enumerate()
        .map(|(c, choice)| {
            let zeros = est.iter().filter(|row| row[c] == 0.0).count() as f64;
            let p = zeros / n;
            ZeroFrequencyRow {
                q: choice.resolve(design.b_true),
                label: choice.label(),
                b_true: design.b_true,
                k: design.k,
                fraction_zero: p,
                mc_se: (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect())
}

/// One interval method in a coverage study.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageArm {
    pub label: String,
    pub estimator: GmlConfig,
    pub truncation_epsilon: f64,
}

impl CoverageArm {
    pub fn new(label: impl Into<String>, estimator: GmlConfig, truncation_epsilon: f64) -> Self {
        Self {
            label: label.into(),
            estimator,
            truncation_epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageRow {
    pub label: String,
    pub b_true: f64,
    pub k: usize,
    pub empirical_coverage: f64,
    pub coverage_se: f64,
    pub mean_length: f64,
    pub length_se: f64,
    /// Bootstrap replicates with a zero estimate, summed over outer replicates.
    pub degenerate_reps: usize,
}

/// Coverage of bootstrap intervals for the realised θ, averaged over areas.
///
/// `boot` supplies the replicate count, level and seed; its estimator and
/// truncation are replaced by each arm's. All arms share the outer draws and
/// the bootstrap streams.
pub fn run_coverage_study(design: &SimDesign, boot: &BootstrapConfig, arms: &[CoverageArm]) -> Result<Vec<CoverageRow>> {
    design.validate(200)?;
    let template = design.template()?;
    let means = design.means(&template);
    let key = rng::derive_key(&[design.seed, domain::COVERAGE]);
    let k = design.k as f64;

    // [rep][arm] -> (covered fraction, mean length, degenerate)
    let per_rep: Vec<Vec<(f64, f64, usize)>> = (0..design.reps)
        .into_par_iter()
        .map(|j| {
            let (theta, y) = draw(design, &means, key, j);
            let data = template.with_y(&y)?;
            let seed = rng::derive_key(&[boot.seed, key, j as u64]);
            arms.iter()
                .map(|arm| {
                    let cfg = BootstrapConfig {
                        estimator: arm.estimator,
                        truncation_epsilon: arm.truncation_epsilon,
                        seed,
                        ..*boot
                    };
                    let out = bootstrap_intervals(&data, &cfg)?;
                    let covered = out
                        .iter()
                        .zip(&theta)
                        .filter(|(r, t)| r.lower <= **t && **t <= r.upper)
                        .count() as f64;
                    let length = out.iter().map(|r| r.length()).sum::<f64>() / k;
                    Ok((covered / k, length, out[0].degenerate_reps))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    Ok(arms
        .iter()
        .enumerate()
        .map(|(c, arm)| {
            let cov: Vec<f64> = per_rep.iter().map(|r| r[c].0).collect();
            let len: Vec<f64> = per_rep.iter().map(|r| r[c].1).collect();
            let (coverage, coverage_se) = mean_and_se(&cov);
            let (mean_length, length_se) = mean_and_se(&len);
            CoverageRow {
                label: arm.label.clone(),
                b_true: design.b_true,
                k: design.k,
                empirical_coverage: coverage,
                coverage_se,
                mean_length,
                length_se,
                degenerate_reps: per_rep.iter().map(|r| r[c].2).sum(),
            }
        })
        .collect())
}
