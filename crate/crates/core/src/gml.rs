//! Adjusted likelihood estimators of the variance component.
//!
//! Every estimator maximises `q·log A + ℓ(A)` where `ℓ` is either the
//! residual or the profile log-likelihood:
//!
//! | method | q | base     |
//! |--------|---|----------|
//! | REML   | 0 | residual |
//! | ML     | 0 | profile  |
//! | ALM    | 1 | residual |
//! | AML    | 1 | profile  |
//!
//! AML is equivalently the residual likelihood times `A·|X'D⁻¹X|^{1/2}`.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{FhError, Result};
use crate::model::Evaluation;
use crate::optimize::{self, ScanError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodBase {
    Residual,
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmlConfig {
    pub q: f64,
    pub base: LikelihoodBase,
    /// Upper search bound; `None` means `10⁴ · max V_i`.
    pub a_max: Option<f64>,
    /// Absolute tolerance on `A`; `None` means `10⁻⁸ · median V_i`.
    pub tol: Option<f64>,
}

impl GmlConfig {
    pub fn new(q: f64, base: LikelihoodBase) -> Self {
        Self {
            q,
            base,
            a_max: None,
            tol: None,
        }
    }

    pub fn reml() -> Self {
        Self::new(0.0, LikelihoodBase::Residual)
    }

    pub fn ml() -> Self {
        Self::new(0.0, LikelihoodBase::Profile)
    }

    pub fn alm() -> Self {
        Self::new(1.0, LikelihoodBase::Residual)
    }

    pub fn aml() -> Self {
        Self::new(1.0, LikelihoodBase::Profile)
    }

    pub fn with_a_max(mut self, a_max: f64) -> Self {
        self.a_max = Some(a_max);
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub fn method(&self) -> Method {
        match (self.q, self.base) {
            (q, LikelihoodBase::Residual) if q == 0.0 => Method::Reml,
            (q, LikelihoodBase::Profile) if q == 0.0 => Method::Ml,
            (q, LikelihoodBase::Residual) if q == 1.0 => Method::Alm,
            (q, LikelihoodBase::Profile) if q == 1.0 => Method::Aml,
            (q, base) => Method::Gml { q, base },
        }
    }

    /// Resolved `(a_max, tol)` for a dataset.
    pub fn bounds(&self, data: &Dataset) -> Result<(f64, f64)> {
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return Err(FhError::InvalidArgument(format!("q must be >= 0, got {}", self.q)));
        }
        let a_max = self.a_max.unwrap_or(1e4 * data.max_v());
        let tol = self.tol.unwrap_or(1e-8 * data.median_v());
        if !(a_max > 0.0) || !(tol > 0.0) || tol >= a_max {
            return Err(FhError::InvalidArgument(format!(
                "need 0 < tol < a_max, got tol = {tol}, a_max = {a_max}"
            )));
        }
        Ok((a_max, tol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Method {
    Reml,
    Ml,
    Alm,
    Aml,
    Gml { q: f64, base: LikelihoodBase },
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Reml => f.write_str("REML"),
            Method::Ml => f.write_str("ML"),
            Method::Alm => f.write_str("ALM"),
            Method::Aml => f.write_str("AML"),
            Method::Gml { q, base } => {
                let b = match base {
                    LikelihoodBase::Residual => "residual",
                    LikelihoodBase::Profile => "profile",
                };
                write!(f, "GML(q={q},{b})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub a_hat: f64,
    pub method: Method,
    pub objective_at_max: f64,
    /// `a_hat == 0`
    pub boundary: bool,
    pub iterations: usize,
}

/// Adjusted log-likelihood `q·log a + ℓ_base(a)`.
pub fn gml_objective(data: &Dataset, cfg: &GmlConfig, a: f64) -> Result<f64> {
    let ev = Evaluation::new(data, a)?;
    Ok(objective(&ev, cfg, a))
}

fn objective(ev: &Evaluation<'_>, cfg: &GmlConfig, a: f64) -> f64 {
    let base = match cfg.base {
        LikelihoodBase::Residual => ev.log_residual(),
        LikelihoodBase::Profile => ev.log_profile(),
    };
    if cfg.q == 0.0 {
        base
    } else {
        cfg.q * a.ln() + base
    }
}

fn score(ev: &Evaluation<'_>, cfg: &GmlConfig, a: f64) -> f64 {
    let base = match cfg.base {
        LikelihoodBase::Residual => ev.residual_score(),
        LikelihoodBase::Profile => ev.profile_score(),
    };
    if cfg.q == 0.0 {
        base
    } else {
        cfg.q / a + base
    }
}

/// Maximises the adjusted likelihood over `[0, a_max]`.
pub fn maximize_gml(data: &Dataset, cfg: &GmlConfig) -> Result<VarianceEstimate> {
    let (a_max, tol) = cfg.bounds(data)?;
    let value = |a: f64| {
        Evaluation::new(data, a)
            .map(|ev| objective(&ev, cfg, a))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let grad = |a: f64| {
        Evaluation::new(data, a)
            .map(|ev| score(&ev, cfg, a))
            .unwrap_or(f64::NAN)
    };
    let found = optimize::maximize_on_half_line(value, grad, cfg.q == 0.0, a_max, tol)
        .map_err(|ScanError::AtUpperBound| FhError::NoInteriorMax { a_max })?;
    Ok(VarianceEstimate {
        a_hat: found.x,
        method: cfg.method(),
        objective_at_max: found.value,
        boundary: found.boundary,
        iterations: found.iterations,
    })
}

pub fn reml(data: &Dataset) -> Result<VarianceEstimate> {
    maximize_gml(data, &GmlConfig::reml())
}

pub fn ml(data: &Dataset) -> Result<VarianceEstimate> {
    maximize_gml(data, &GmlConfig::ml())
}

pub fn alm(data: &Dataset) -> Result<VarianceEstimate> {
    maximize_gml(data, &GmlConfig::alm())
}

pub fn aml(data: &Dataset) -> Result<VarianceEstimate> {
    maximize_gml(data, &GmlConfig::aml())
}

/// Leading-order `Bias(B̂)/Var(B̂) ≈ (1/B)(1 − q/(1 − B))` for `h(A) = A^q`.
pub fn bias_variance_ratio(b: f64, q: f64) -> f64 {
    (1.0 - q / (1.0 - b)) / b
}

/// Delta-method variance of `B̂` in the balanced case.
///
/// With `Var(Â) ≈ 2(V+A)²/k` and `dB/dA = −B²/V` this is `2B²/k`.
pub fn asymptotic_variance_bhat_balanced(b: f64, k: usize) -> f64 {
    2.0 * b * b / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Area;
    use crate::model::{log_det_information, log_residual_likelihood};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(y: &[f64], v: &[f64]) -> Dataset {
        Dataset::new(
            y.iter()
                .zip(v)
                .enumerate()
                .map(|(i, (&y, &v))| Area {
                    id: format!("a{i}"),
                    y,
                    v,
                    x: vec![1.0],
                })
                .collect(),
        )
        .unwrap()
    }

    fn spread(y: &[f64]) -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|y| (y - m).powi(2)).sum()
    }

    #[test]
    fn balanced_reml_closed_form() {
        let y = [0.0, 4.0, -2.0, 3.0, 5.0, -1.0, 2.2];
        let v = 1.5;
        let d = intercept_only(&y, &[v; 7]);
        let want = (spread(&y) / 6.0 - v).max(0.0);
        let est = reml(&d).unwrap();
        assert!((est.a_hat - want).abs() <= 1e-8 * v);
        assert_eq!(est.method, Method::Reml);
        assert!(!est.boundary);
        // grid oracle: no point of a fine scan beats the estimate
        let best = est.objective_at_max;
        for j in 0..100_000 {
            let a = 20.0 * j as f64 / 100_000.0;
            assert!(log_residual_likelihood(&d, a).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn balanced_alm_solves_stationarity() {
        let y = [0.0, 4.0, -2.0, 3.0, 5.0, -1.0, 2.2];
        let v = 1.5;
        let k = 7.0;
        let d = intercept_only(&y, &[v; 7]);
        let s = spread(&y);
        let stationarity = |a: f64| 1.0 / a - (k - 1.0) / (2.0 * (v + a)) + s / (2.0 * (v + a).powi(2));
        // independent bisection oracle on the stationarity equation
        let (mut lo, mut hi) = (1e-9, 1e4);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if stationarity(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let est = alm(&d).unwrap();
        assert_relative_eq!(est.a_hat, 0.5 * (lo + hi), epsilon = 1e-8);
        assert!(est.a_hat > 0.0);
    }

    #[test]
    fn equal_responses() {
        let d = intercept_only(&[1.0; 6], &[0.5, 1.0, 2.0, 0.7, 1.1, 0.9]);
        let est = reml(&d).unwrap();
        assert_eq!(est.a_hat, 0.0);
        assert!(est.boundary);
        let est = alm(&d).unwrap();
        assert!(est.a_hat > 0.0);
        assert!(!est.boundary);
    }

    #[test]
    fn method_tags() {
        assert_eq!(GmlConfig::reml().method(), Method::Reml);
        assert_eq!(GmlConfig::ml().method(), Method::Ml);
        assert_eq!(GmlConfig::alm().method(), Method::Alm);
        assert_eq!(GmlConfig::aml().method(), Method::Aml);
        assert_eq!(
            GmlConfig::new(0.5, LikelihoodBase::Residual).method().to_string(),
            "GML(q=0.5,residual)"
        );
    }

    #[test]
    fn upper_bound_maximum_is_an_error() {
        let y = [0.0, 40.0, -20.0, 30.0, 50.0, -10.0];
        let d = intercept_only(&y, &[1.0; 6]);
        let err = maximize_gml(&d, &GmlConfig::reml().with_a_max(10.0)).unwrap_err();
        assert_eq!(err, FhError::NoInteriorMax { a_max: 10.0 });
    }

    #[test]
    fn invalid_config() {
        let d = intercept_only(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]);
        assert!(maximize_gml(&d, &GmlConfig::new(-0.5, LikelihoodBase::Residual)).is_err());
        assert!(maximize_gml(&d, &GmlConfig::reml().with_tol(0.0)).is_err());
    }

    #[test]
    fn aml_two_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let k = 12;
            let areas: Vec<Area> = (0..k)
                .map(|i| Area {
                    id: i.to_string(),
                    y: rng.random_range(-3.0..3.0),
                    v: rng.random_range(0.2..2.0),
                    x: vec![1.0, rng.random_range(-1.0..1.0)],
                })
                .collect();
            let d = Dataset::new(areas).unwrap();
            let est = aml(&d).unwrap();
            let (a_max, tol) = GmlConfig::aml().bounds(&d).unwrap();
            // residual route: log a + ½ log det M + ℓ_R, maximised by golden section only
            let f = |a: f64| {
                a.ln() + 0.5 * log_det_information(&d, a).unwrap() + log_residual_likelihood(&d, a).unwrap()
            };
            let g = crate::optimize::maximize_on_half_line(f, |_| f64::NAN, false, a_max, tol).unwrap();
            assert!((g.x - est.a_hat).abs() < 1e-5 * (1.0 + est.a_hat), "{} vs {}", g.x, est.a_hat);
            assert_relative_eq!(f(est.a_hat), est.objective_at_max, epsilon = 1e-10);
        }
    }

    #[test]
    fn ratio_values() {
        assert_eq!(bias_variance_ratio(0.5, 0.5), 0.0);
        assert_eq!(bias_variance_ratio(0.5, 0.0), 2.0);
        assert_eq!(bias_variance_ratio(0.5, 1.0), -2.0);
        for b in [0.1, 0.3, 0.77] {
            assert!(bias_variance_ratio(b, 1.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn asymptotic_variance_values() {
        assert_eq!(asymptotic_variance_bhat_balanced(0.5, 8), 0.0625);
        assert_relative_eq!(
            asymptotic_variance_bhat_balanced(0.3, 20),
            0.5 * asymptotic_variance_bhat_balanced(0.3, 10)
        );
        assert!(asymptotic_variance_bhat_balanced(1e-9, 10) < 1e-17);
    }

    #[test]
    fn deterministic() {
        let d = intercept_only(&[0.3, 2.0, -1.0, 4.1, 0.2, 1.7], &[0.5, 1.0, 2.0, 0.7, 1.1, 0.9]);
        for cfg in [GmlConfig::reml(), GmlConfig::alm(), GmlConfig::new(0.37, LikelihoodBase::Profile)] {
            let a = maximize_gml(&d, &cfg).unwrap().a_hat;
            let b = maximize_gml(&d, &cfg).unwrap().a_hat;
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn positive_for_any_adjustment(
            y in proptest::collection::vec(-5.0f64..5.0, 5..15),
            v0 in 0.1f64..5.0,
            q in 0.05f64..1.5,
            profile in any::<bool>(),
            flat in any::<bool>(),
        ) {
            let y: Vec<f64> = if flat { vec![y[0]; y.len()] } else { y };
            let v: Vec<f64> = (0..y.len()).map(|i| v0 * (1.0 + 0.3 * (i % 3) as f64)).collect();
            let d = intercept_only(&y, &v);
            let base = if profile { LikelihoodBase::Profile } else { LikelihoodBase::Residual };
            let est = maximize_gml(&d, &GmlConfig::new(q, base)).unwrap();
            prop_assert!(est.a_hat > 0.0);
            prop_assert!(!est.boundary);
        }

        #[test]
        fn balanced_reml_matches_closed_form(
            y in proptest::collection::vec(-5.0f64..5.0, 4..30),
            v in 0.1f64..5.0,
        ) {
            let d = intercept_only(&y, &vec![v; y.len()]);
            let want = (spread(&y) / (y.len() - 1) as f64 - v).max(0.0);
            let est = reml(&d).unwrap();
            prop_assert!((est.a_hat - want).abs() <= 1e-8 * v, "{} vs {}", est.a_hat, want);
            prop_assert_eq!(est.boundary, est.a_hat == 0.0);
        }

        #[test]
        fn nondecreasing_in_q(
            y in proptest::collection::vec(-5.0f64..5.0, 5..20),
            v in 0.1f64..3.0,
        ) {
            let d = intercept_only(&y, &vec![v; y.len()]);
            let mut last = -1.0;
            for q in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let a = maximize_gml(&d, &GmlConfig::new(q, LikelihoodBase::Residual)).unwrap().a_hat;
                prop_assert!(a >= last - 1e-8 * v);
                last = a;
            }
        }
    }
}
