//! Posterior densities for the treatment-effect models and the derived ATE
//! quantities.
//!
//! Every posterior works on standardized log outcomes internally and reports
//! parameters on the original `log(y + 1)` scale.

mod dim;
mod fit;
mod ps;
mod psc;
mod zi;

use serde::{Deserialize, Serialize};

pub use dim::{dim_posterior, DimPosterior};
pub use fit::{fit, fit_with_baseline, posterior, BaselineComparison, Fit, FitReport, ModelKind};
pub use ps::{ps_ate_draws, ps_loglik, ps_posterior, PsPosterior};
pub use psc::{mnl_strata_probs, psc_loglik, psc_posterior, PscPosterior};
pub use zi::{zi_posterior, ZiPosterior};

use crate::data::ExperimentDataset;
use crate::diagnostics::expected_lognormal_mean;
use crate::error::{Error, Result};
use crate::stats::{mean, std_dev};

/// Parameters of the principal-stratification model without covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrataParams {
    /// Shares of the always-buy, influenced and never-buy strata.
    pub pi: [f64; 3],
    pub mu_a0: f64,
    pub mu_a1: f64,
    pub mu_i1: f64,
    pub sigma: f64,
}

impl StrataParams {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.pi.iter().sum();
        if self.pi.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("strata shares {:?} are not a simplex", self.pi)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if ![self.mu_a0, self.mu_a1, self.mu_i1].iter().all(|m| m.is_finite()) {
            return Err(Error::InvalidParameter("cell means must be finite".into()));
        }
        Ok(())
    }

    pub fn ate_log(&self) -> f64 {
        ate_log(self.pi[0], self.pi[1], self.mu_a0, self.mu_a1, self.mu_i1)
    }

    pub fn ate_dollar(&self) -> f64 {
        ate_dollar(self.pi[0], self.pi[1], self.mu_a0, self.mu_a1, self.mu_i1, self.sigma)
    }
}

/// Stratified ATE on the log scale; the never-buy stratum contributes zero.
pub fn ate_log(pi_a: f64, pi_i: f64, mu_a0: f64, mu_a1: f64, mu_i1: f64) -> f64 {
    pi_a * (mu_a1 - mu_a0) + pi_i * mu_i1
}

/// Stratified ATE in currency units using lognormal cell means.
pub fn ate_dollar(pi_a: f64, pi_i: f64, mu_a0: f64, mu_a1: f64, mu_i1: f64, sigma: f64) -> f64 {
    let m = |mu| expected_lognormal_mean(mu, sigma);
    pi_a * (m(mu_a1) - m(mu_a0)) + pi_i * m(mu_i1)
}

/// Parameters of the multinomial-logit strata model. Coefficient vectors
/// start with the intercept; the always-buy stratum is the base category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovStrataParams {
    pub beta_i: Vec<f64>,
    pub beta_n: Vec<f64>,
    pub mu_a0: f64,
    pub mu_a1: f64,
    pub mu_i1: f64,
    pub sigma: f64,
}

impl CovStrataParams {
    pub fn validate(&self) -> Result<()> {
        if self.beta_i.len() != self.beta_n.len() || self.beta_i.is_empty() {
            return Err(Error::InvalidParameter("beta_i and beta_n must have the same non-zero length".into()));
        }
        if !self.beta_i.iter().chain(&self.beta_n).all(|b| b.is_finite()) {
            return Err(Error::InvalidParameter("coefficients must be finite".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Strata shares for a covariate vector without the leading 1.
    pub fn strata_probs(&self, covariates: &[f64]) -> Result<[f64; 3]> {
        let mut x = Vec::with_capacity(covariates.len() + 1);
        x.push(1.0);
        x.extend_from_slice(covariates);
        mnl_strata_probs(&self.beta_i, &self.beta_n, &x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroInflatedParams {
    pub q0: f64,
    pub q1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub constrained: bool,
}

impl ZeroInflatedParams {
    pub fn tau(&self) -> f64 {
        self.q1 * self.beta - self.q0 * self.alpha
    }

    pub fn tau_dollar(&self) -> f64 {
        self.q1 * expected_lognormal_mean(self.beta, self.sigma) - self.q0 * expected_lognormal_mean(self.alpha, self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffMeansParams {
    pub alpha: f64,
    pub tau_d: f64,
    pub sigma: f64,
}

/// Affine map between original and standardized log outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Self = Self { center: 0.0, scale: 1.0 };

    /// Center and scale from a sample; a degenerate spread falls back to 1.
    pub fn from_sample(xs: &[f64]) -> Self {
        let center = if xs.is_empty() { 0.0 } else { mean(xs) };
        let sd = std_dev(xs);
        let scale = if sd.is_finite() && sd > 1e-8 { sd } else { 1.0 };
        Self { center, scale }
    }

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    #[inline]
    pub fn location(&self, z: f64) -> f64 {
        self.center + self.scale * z
    }

    #[inline]
    pub fn spread(&self, z: f64) -> f64 {
        self.scale * z
    }
}

/// Arm-level counts and positive outcomes shared by the stratified and
/// zero-inflated models. Positive values are on the standardized scale.
#[derive(Debug, Clone)]
pub(crate) struct PurchaseData {
    pub std: Standardization,
    pub treated_pos: Vec<f64>,
    pub treated_zero: usize,
    pub control_pos_n: usize,
    pub control_pos_sum: f64,
    pub control_pos_sumsq: f64,
    pub control_zero: usize,
    /// Raw moments used for initialization.
    pub treated_pos_mean: f64,
    pub treated_pos_sd: f64,
}

impl PurchaseData {
    pub fn new(data: &ExperimentDataset, standardize: bool) -> Self {
        let control = data.positive_log_outcomes(false);
        let treated = data.positive_log_outcomes(true);
        let std = if standardize { Standardization::from_sample(&control) } else { Standardization::IDENTITY };
        let c: Vec<f64> = control.iter().map(|&x| std.forward(x)).collect();
        let sd = std_dev(&treated);
        Self {
            std,
            treated_pos: treated.iter().map(|&x| std.forward(x)).collect(),
            treated_zero: data.n1() - treated.len(),
            control_pos_n: c.len(),
            control_pos_sum: c.iter().sum(),
            control_pos_sumsq: c.iter().map(|x| x * x).sum(),
            control_zero: data.n0() - control.len(),
            treated_pos_mean: if treated.is_empty() { f64::NAN } else { mean(&treated) },
            treated_pos_sd: if sd.is_finite() { sd } else { 0.0 },
        }
    }

    pub fn n1(&self) -> usize {
        self.treated_pos.len() + self.treated_zero
    }

    pub fn n0(&self) -> usize {
        self.control_pos_n + self.control_zero
    }

    /// `sum log N(x | mu, sigma)` over control purchasers plus its partial
    /// derivatives in `mu` and `log sigma`.
    pub fn control_normal(&self, mu: f64, sigma: f64) -> (f64, f64, f64) {
        let n = self.control_pos_n as f64;
        let ss = self.control_pos_sumsq - 2.0 * mu * self.control_pos_sum + n * mu * mu;
        let s2 = sigma * sigma;
        let lp = -n * (sigma.ln() + crate::stats::LN_SQRT_2PI) - 0.5 * ss / s2;
        (lp, (self.control_pos_sum - n * mu) / s2, ss / s2 - n)
    }
}

/// Errors unless both arms contain at least one purchaser.
pub(crate) fn require_purchasers(data: &ExperimentDataset) -> Result<()> {
    data.require_both_arms()?;
    if !data.arm(false).any(|r| r.purchased()) {
        return Err(Error::Identification(
            "no control purchasers: the always-buy control mean and sigma are not identified".into(),
        ));
    }
    if !data.arm(true).any(|r| r.purchased()) {
        return Err(Error::Identification(
            "no treated purchasers: the treated cell means are not identified".into(),
        ));
    }
    Ok(())
}

/// log N(x | 0, sd) and its derivative.
#[inline]
pub(crate) fn normal_prior(x: f64, sd: f64) -> (f64, f64) {
    (crate::stats::normal_lpdf(x, 0.0, sd), -x / (sd * sd))
}

/// log half-N(sigma | 0, sd) with its derivative in `log sigma`.
#[inline]
pub(crate) fn half_normal_prior_log(sigma: f64, sd: f64) -> (f64, f64) {
    (std::f64::consts::LN_2 + crate::stats::normal_lpdf(sigma, 0.0, sd), -sigma * sigma / (sd * sd))
}

pub(crate) const MU_PRIOR_SD: f64 = 20.0;
pub(crate) const SIGMA_PRIOR_SD: f64 = 1.0;

#[cfg(test)]
mod tests {
    use super::*;

    fn table_a1() -> StrataParams {
        StrataParams { pi: [0.2, 0.01, 0.79], mu_a0: 4.6, mu_a1: 4.7, mu_i1: 3.1, sigma: 1.1 }
    }

    #[test]
    fn ate_at_table_a1_truth() {
        let t = table_a1();
        assert!((t.ate_log() - 0.051).abs() < 1e-12);
        // independent evaluation of the lognormal arithmetic
        let m = |mu: f64| (mu + 0.5 * 1.1f64 * 1.1).exp() - 1.0;
        let expect = 0.2 * (m(4.7) - m(4.6)) + 0.01 * m(3.1);
        assert!((t.ate_dollar() - expect).abs() < 1e-12);
        assert!((t.ate_dollar() - 4.239).abs() < 0.02, "{}", t.ate_dollar());
    }

    #[test]
    fn no_effect_no_ate() {
        let t = StrataParams { pi: [0.3, 0.0, 0.7], mu_a0: 2.0, mu_a1: 2.0, mu_i1: 5.0, sigma: 1.0 };
        assert_eq!(t.ate_log(), 0.0);
        assert_eq!(t.ate_dollar(), 0.0);
    }

    #[test]
    fn simplex_validation() {
        assert!(table_a1().validate().is_ok());
        let bad = StrataParams { pi: [0.5, 0.5, 0.5], ..table_a1() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn symmetric_zero_inflated_has_no_effect() {
        let p = ZeroInflatedParams { q0: 0.2, q1: 0.2, alpha: 4.0, beta: 4.0, sigma: 1.0, constrained: false };
        assert_eq!(p.tau(), 0.0);
        assert_eq!(p.tau_dollar(), 0.0);
    }

    #[test]
    fn standardization_round_trip() {
        let s = Standardization::from_sample(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s.location(s.forward(3.7)) - 3.7).abs() < 1e-12);
        assert_eq!(Standardization::from_sample(&[2.0]).scale, 1.0);
    }
}
