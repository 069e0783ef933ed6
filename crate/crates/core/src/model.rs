//! GLS regression, residual and profile likelihoods, and conditional moments
//! of the area means for a fixed variance component `A`.
//!
//! With `D = diag(V_i + A)` and `M = X'D⁻¹X`, the retained log-likelihoods are
//!
//! ```text
//! ℓ_P(A) = -½ Σ log(V_i + A) - ½ Σ (y_i - x_i'β̂(A))² / (V_i + A)
//! ℓ_R(A) = ℓ_P(A) - ½ log det M
//! ```
//!
//! with every `2π` term dropped. Only differences and argmaxes are used.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::Dataset;
use crate::error::{FhError, Result};

/// Regression coefficients and variance component.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub beta: DVector<f64>,
    pub a: f64,
}

impl Hyperparams {
    pub fn new(beta: DVector<f64>, a: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(FhError::InvalidArgument(format!("A must be >= 0, got {a}")));
        }
        Ok(Self { beta, a })
    }
}

/// GLS estimate of β for a fixed `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlsFit {
    pub beta_hat: DVector<f64>,
    /// `(X'D⁻¹X)⁻¹`
    pub beta_cov: DMatrix<f64>,
    pub a_used: f64,
}

/// Everything the likelihood, its score and the conditional moments need at
/// one value of `A`. Built once per evaluation point.
pub(crate) struct Evaluation<'a> {
    data: &'a Dataset,
    a: f64,
    weights: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    beta: DVector<f64>,
    residuals: DVector<f64>,
}

impl<'a> Evaluation<'a> {
    pub(crate) fn new(data: &'a Dataset, a: f64) -> Result<Self> {
        check_a(a)?;
        let x = data.x();
        let (k, r) = (data.k(), data.r());
        let weights: Vec<f64> = data.v().iter().map(|v| 1.0 / (v + a)).collect();
        let mut m = DMatrix::zeros(r, r);
        let mut xty = DVector::zeros(r);
        for i in 0..k {
            let w = weights[i];
            for p in 0..r {
                let xp = w * x[(i, p)];
                xty[p] += xp * data.y()[i];
                for q in 0..=p {
                    m[(p, q)] += xp * x[(i, q)];
                }
            }
        }
        for p in 0..r {
            for q in 0..p {
                m[(q, p)] = m[(p, q)];
            }
        }
        let chol = Cholesky::new(m).ok_or(FhError::SingularSystem)?;
        let beta = chol.solve(&xty);
        let residuals = data.y() - x * &beta;
        Ok(Self {
            data,
            a,
            weights,
            chol,
            beta,
            residuals,
        })
    }

    pub(crate) fn beta_cov(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub(crate) fn log_det_m(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub(crate) fn log_profile(&self) -> f64 {
        let mut s = 0.0;
        for (w, e) in self.weights.iter().zip(self.residuals.iter()) {
            s += -w.ln() + w * e * e;
        }
        -0.5 * s
    }

    pub(crate) fn log_residual(&self) -> f64 {
        self.log_profile() - 0.5 * self.log_det_m()
    }

    /// dℓ_P/dA = -½ Σ w_i + ½ Σ w_i² e_i²
    pub(crate) fn profile_score(&self) -> f64 {
        let mut s = 0.0;
        for (w, e) in self.weights.iter().zip(self.residuals.iter()) {
            s += -w + (w * e) * (w * e);
        }
        0.5 * s
    }

    /// dℓ_R/dA = dℓ_P/dA + ½ Σ w_i² x_i'M⁻¹x_i
    pub(crate) fn residual_score(&self) -> f64 {
        let mut tr = 0.0;
        for i in 0..self.data.k() {
            let xi = self.data.x_row(i);
            let z = self.chol.solve(&xi);
            tr += self.weights[i] * self.weights[i] * xi.dot(&z);
        }
        self.profile_score() + 0.5 * tr
    }

    pub(crate) fn fitted(&self, i: usize) -> f64 {
        self.data.y()[i] - self.residuals[i]
    }

    /// x_i'(X'D⁻¹X)⁻¹x_i
    pub(crate) fn leverage(&self, i: usize) -> f64 {
        let xi = self.data.x_row(i);
        xi.dot(&self.chol.solve(&xi))
    }

    pub(crate) fn conditional_moments(&self, i: usize) -> (f64, f64) {
        let v = self.data.v()[i];
        let b = shrinkage(v, self.a);
        let y = self.data.y()[i];
        let mean = y - b * (y - self.fitted(i));
        let var = v * (1.0 - b) + b * b * self.leverage(i);
        (mean, var)
    }
}

fn check_a(a: f64) -> Result<()> {
    if a >= 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(FhError::InvalidArgument(format!(
            "variance component must be finite and >= 0, got {a}"
        )))
    }
}

/// GLS coefficients `(X'D⁻¹X)⁻¹X'D⁻¹y` with `D = diag(V_i + a)`.
pub fn gls_beta(data: &Dataset, a: f64) -> Result<GlsFit> {
    let ev = Evaluation::new(data, a)?;
    Ok(GlsFit {
        beta_cov: ev.beta_cov(),
        beta_hat: ev.beta,
        a_used: a,
    })
}

/// Residual (REML) log-likelihood, see the module docs for the constant.
pub fn log_residual_likelihood(data: &Dataset, a: f64) -> Result<f64> {
    Ok(Evaluation::new(data, a)?.log_residual())
}

/// ML log-likelihood with β profiled out.
pub fn log_profile_likelihood(data: &Dataset, a: f64) -> Result<f64> {
    Ok(Evaluation::new(data, a)?.log_profile())
}

/// `log det(X'D⁻¹X)`.
pub fn log_det_information(data: &Dataset, a: f64) -> Result<f64> {
    Ok(Evaluation::new(data, a)?.log_det_m())
}

/// Shrinkage factor `B = V / (V + A)`.
pub fn shrinkage(v: f64, a: f64) -> f64 {
    v / (v + a)
}

/// Mean and variance of θ_i given y and the variance component, with β
/// integrated out under a flat prior.
pub fn conditional_theta_moments(data: &Dataset, a: f64, area_index: usize) -> Result<(f64, f64)> {
    data.check_index(area_index)?;
    Ok(Evaluation::new(data, a)?.conditional_moments(area_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Area;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn intercept_only(y: &[f64], v: &[f64]) -> Dataset {
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

    fn two_covariates(y: &[f64], v: &[f64], z: &[f64]) -> Dataset {
        Dataset::new(
            (0..y.len())
                .map(|i| Area {
                    id: format!("a{i}"),
                    y: y[i],
                    v: v[i],
                    x: vec![1.0, z[i]],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_gls() {
        let d = intercept_only(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]);
        let fit = gls_beta(&d, 0.0).unwrap();
        assert_relative_eq!(fit.beta_hat[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(fit.beta_cov[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn balanced_gls_is_sample_mean() {
        let y = [0.3, -1.2, 4.0, 2.2, 0.9];
        let d = intercept_only(&y, &[2.0; 5]);
        let mean = y.iter().sum::<f64>() / 5.0;
        for a in [0.0, 0.7, 13.0, 1e6] {
            assert_relative_eq!(gls_beta(&d, a).unwrap().beta_hat[0], mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn huge_a_gives_ols() {
        let y = [1.0, 2.5, 2.0, 4.5, 3.9, 6.1];
        let z = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let v = [0.5, 3.0, 1.0, 0.2, 2.0, 1.5];
        let d = two_covariates(&y, &v, &z);
        // OLS by normal equations
        let (n, sz, szz) = (6.0, z.iter().sum::<f64>(), z.iter().map(|z| z * z).sum::<f64>());
        let sy: f64 = y.iter().sum();
        let szy: f64 = z.iter().zip(&y).map(|(z, y)| z * y).sum();
        let det = n * szz - sz * sz;
        let b0 = (szz * sy - sz * szy) / det;
        let b1 = (n * szy - sz * sy) / det;
        let fit = gls_beta(&d, 1e8 * 3.0).unwrap();
        assert_relative_eq!(fit.beta_hat[0], b0, max_relative = 1e-4);
        assert_relative_eq!(fit.beta_hat[1], b1, max_relative = 1e-4);
    }

    #[test]
    fn balanced_residual_likelihood_closed_form() {
        let y = [0.81, -0.44, 2.13, 1.07, -1.62];
        let v = 1.3;
        let d = intercept_only(&y, &[v; 5]);
        let ybar = y.iter().sum::<f64>() / 5.0;
        let s: f64 = y.iter().map(|y| (y - ybar).powi(2)).sum();
        let k = 5.0;
        for a in [0.0, 0.1, 1.0, 3.7, 250.0] {
            let closed = -((k - 1.0) / 2.0) * (v + a).ln() - s / (2.0 * (v + a)) - 0.5 * k.ln();
            assert_relative_eq!(log_residual_likelihood(&d, a).unwrap(), closed, epsilon = 1e-10);
            let closed_p = -(k / 2.0) * (v + a).ln() - s / (2.0 * (v + a));
            assert_relative_eq!(log_profile_likelihood(&d, a).unwrap(), closed_p, epsilon = 1e-10);
        }
    }

    #[test]
    fn residual_likelihood_is_unimodal_on_dispersed_data() {
        let y = [-3.0, 2.5, 0.1, 4.2, -1.8, 0.7, 3.3, -2.9];
        let d = intercept_only(&y, &[0.5, 1.0, 0.7, 1.2, 0.9, 0.4, 1.1, 0.8]);
        let grid: Vec<f64> = (0..200).map(|j| 0.1 * j as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&a| log_residual_likelihood(&d, a).unwrap()).collect();
        let peak = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(peak > 0 && peak < vals.len() - 1);
        assert!(vals[..=peak].windows(2).all(|w| w[1] > w[0]));
        assert!(vals[peak..].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn profile_minus_residual_is_half_log_det() {
        let y = [1.0, 2.5, 2.0, 4.5, 3.9, 6.1];
        let z = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let d = two_covariates(&y, &[0.5, 3.0, 1.0, 0.2, 2.0, 1.5], &z);
        for j in 0..20 {
            let a = 0.25 * j as f64;
            let diff = log_profile_likelihood(&d, a).unwrap() - log_residual_likelihood(&d, a).unwrap();
            assert_relative_eq!(diff, 0.5 * log_det_information(&d, a).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn balanced_ml_maximiser_below_reml() {
        let y = [0.0, 4.0, -2.0, 3.0, 5.0, -1.0];
        let v = 1.0;
        let d = intercept_only(&y, &[v; 6]);
        let ybar = y.iter().sum::<f64>() / 6.0;
        let s: f64 = y.iter().map(|y| (y - ybar).powi(2)).sum();
        let reml = s / 5.0 - v;
        let ml = s / 6.0 - v;
        assert!(ml <= reml);
        // scores vanish at the closed-form maximisers
        assert!(Evaluation::new(&d, reml).unwrap().residual_score().abs() < 1e-12);
        assert!(Evaluation::new(&d, ml).unwrap().profile_score().abs() < 1e-12);
    }

    #[test]
    fn scores_match_finite_differences() {
        let y = [1.0, 2.5, 2.0, 4.5, 3.9, 6.1, 0.4];
        let z = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 2.5];
        let d = two_covariates(&y, &[0.5, 3.0, 1.0, 0.2, 2.0, 1.5, 0.9], &z);
        for a in [0.3, 1.0, 4.0] {
            let h = 1e-5;
            let fd_r = (log_residual_likelihood(&d, a + h).unwrap()
                - log_residual_likelihood(&d, a - h).unwrap())
                / (2.0 * h);
            let fd_p = (log_profile_likelihood(&d, a + h).unwrap()
                - log_profile_likelihood(&d, a - h).unwrap())
                / (2.0 * h);
            let ev = Evaluation::new(&d, a).unwrap();
            assert_relative_eq!(ev.residual_score(), fd_r, max_relative = 1e-6);
            assert_relative_eq!(ev.profile_score(), fd_p, max_relative = 1e-6);
        }
    }

    #[test]
    fn shrinkage_values() {
        assert_eq!(shrinkage(1.0, 0.0), 1.0);
        assert_eq!(shrinkage(2.3, 2.3), 0.5);
        for v in [0.1, 1.0, 4.0] {
            assert_eq!(shrinkage(v, 1.7), v / (v + 1.7));
        }
    }

    #[test]
    fn conditional_moments_at_boundary_and_infinity() {
        let y = [1.0, 2.5, 2.0, 4.5, 3.9, 6.1];
        let z = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let v = [0.5, 3.0, 1.0, 0.2, 2.0, 1.5];
        let d = two_covariates(&y, &v, &z);
        let fit = gls_beta(&d, 0.0).unwrap();
        for i in 0..6 {
            let xi = d.x_row(i);
            let (m, s2) = conditional_theta_moments(&d, 0.0, i).unwrap();
            assert_relative_eq!(m, xi.dot(&fit.beta_hat), epsilon = 1e-12);
            assert_relative_eq!(s2, xi.dot(&(&fit.beta_cov * &xi)), epsilon = 1e-12);
            let (m, s2) = conditional_theta_moments(&d, 1e8 * v[i], i).unwrap();
            assert_relative_eq!(m, y[i], max_relative = 1e-4);
            assert_relative_eq!(s2, v[i], max_relative = 1e-4);
        }
    }

    #[test]
    fn conditional_moments_hand_case() {
        let d = intercept_only(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]);
        let (m, s2) = conditional_theta_moments(&d, 1.0, 0).unwrap();
        assert_relative_eq!(m, 1.5, epsilon = 1e-14);
        // V(1-B) + B² x'cov x = 0.5 + 0.25 * (2/3)
        assert_relative_eq!(s2, 0.5 + 0.25 * 2.0 / 3.0, epsilon = 1e-14);
        assert!(conditional_theta_moments(&d, 1.0, 3).is_err());
    }

    #[test]
    fn likelihoods_finite_over_wide_range() {
        let y = [1.0, 2.5, 2.0, 4.5, 3.9, 6.1];
        let z = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let d = two_covariates(&y, &[0.5, 3.0, 1.0, 0.2, 2.0, 1.5], &z);
        let top = 1e12 * d.max_v();
        for j in 0..=40 {
            let a = if j == 0 { 0.0 } else { top * 10f64.powf(-(40 - j) as f64 * 0.5) };
            let r1 = log_residual_likelihood(&d, a).unwrap();
            let r2 = log_residual_likelihood(&d, a).unwrap();
            assert!(r1.is_finite());
            assert_eq!(r1.to_bits(), r2.to_bits());
            assert!(log_profile_likelihood(&d, a).unwrap().is_finite());
        }
        assert!(log_residual_likelihood(&d, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn shrinkage_monotone(v in 0.01f64..100.0, a in 0.0f64..100.0, da in 0.01f64..10.0) {
            prop_assert!(shrinkage(v, a + da) < shrinkage(v, a));
            prop_assert!(shrinkage(v + da, a + 0.01) > shrinkage(v, a + 0.01));
        }

        #[test]
        fn gls_permutation_invariant(
            y in proptest::collection::vec(-10.0f64..10.0, 7),
            v in proptest::collection::vec(0.1f64..5.0, 7),
            a in 0.0f64..5.0,
            rot in 1usize..7,
        ) {
            let z: Vec<f64> = (0..7).map(|i| (i as f64).sqrt()).collect();
            let d = two_covariates(&y, &v, &z);
            let perm: Vec<usize> = (0..7).map(|i| (i + rot) % 7).collect();
            let pick = |s: &[f64]| perm.iter().map(|&i| s[i]).collect::<Vec<_>>();
            let dp = two_covariates(&pick(&y), &pick(&v), &pick(&z));
            let b1 = gls_beta(&d, a).unwrap().beta_hat;
            let b2 = gls_beta(&dp, a).unwrap().beta_hat;
            for j in 0..2 {
                prop_assert!((b1[j] - b2[j]).abs() <= 1e-9 * (1.0 + b1[j].abs()));
            }
        }

        #[test]
        fn affine_equivariance(
            y in proptest::collection::vec(-10.0f64..10.0, 6),
            v in proptest::collection::vec(0.1f64..5.0, 6),
            a in 0.0f64..5.0,
            c0 in -5.0f64..5.0,
            c1 in -5.0f64..5.0,
        ) {
            let z = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
            let d = two_covariates(&y, &v, &z);
            let shifted: Vec<f64> = (0..6).map(|i| y[i] + c0 + c1 * z[i]).collect();
            let ds = two_covariates(&shifted, &v, &z);
            let l1 = log_residual_likelihood(&d, a).unwrap();
            let l2 = log_residual_likelihood(&ds, a).unwrap();
            prop_assert!((l1 - l2).abs() < 1e-9 * (1.0 + l1.abs()));
            let b1 = gls_beta(&d, a).unwrap().beta_hat;
            let b2 = gls_beta(&ds, a).unwrap().beta_hat;
            prop_assert!((b2[0] - b1[0] - c0).abs() < 1e-9 * (1.0 + b1[0].abs() + c0.abs()));
            prop_assert!((b2[1] - b1[1] - c1).abs() < 1e-9 * (1.0 + b1[1].abs() + c1.abs()));
        }
    }
}
