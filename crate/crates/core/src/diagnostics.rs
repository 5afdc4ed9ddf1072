//! Plug-in diagnostics computed before any model is fitted.
//!
//! Strata shares come straight from arm incidences: every control purchaser
//! is an always-buyer, and the excess treated incidence is the influenced
//! share. Sorting the treated purchasers then bounds the two unidentified
//! treated means, which gives a conservative estimate of the variance saved
//! by stratifying.

use serde::{Deserialize, Serialize};

use crate::data::ExperimentDataset;
use crate::error::{Error, Result};
use crate::stats::{mean, normal_cdf, normal_quantile, variance};

/// Estimated strata shares (always-buy, influenced, never-buy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrataProportions {
    pub pi_a: f64,
    pub pi_i: f64,
    pub pi_n: f64,
    /// Treated minus control incidence before clamping at zero.
    pub raw_pi_i: f64,
}

pub fn estimate_strata_proportions(data: &ExperimentDataset) -> Result<StrataProportions> {
    data.require_both_arms()?;
    let incidence = |treated: bool, n: usize| data.arm(treated).filter(|r| r.purchased()).count() as f64 / n as f64;
    let pi_a = incidence(false, data.n0());
    let raw_pi_i = incidence(true, data.n1()) - pi_a;
    let pi_i = raw_pi_i.max(0.0);
    Ok(StrataProportions { pi_a, pi_i, pi_n: 1.0 - pi_a - pi_i, raw_pi_i })
}

/// Conservative treated means: the lowest `floor(n1 * pi_a)` treated
/// purchasers bound the always-buyer mean from below, the rest bound the
/// influenced mean from above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingMeans {
    pub mu_a1_min: f64,
    pub mu_i1_max: f64,
}

pub fn bounding_means(data: &ExperimentDataset, pi_a: f64) -> Result<BoundingMeans> {
    if !(0.0..=1.0).contains(&pi_a) {
        return Err(Error::InvalidParameter(format!("pi_a = {pi_a} is not a probability")));
    }
    let mut positives = data.positive_log_outcomes(true);
    if positives.is_empty() {
        return Err(Error::Precondition(
            "no treated purchasers: bounding means and the benefit check are undefined".into(),
        ));
    }
    positives.sort_by(f64::total_cmp);
    let k = (data.n1() as f64 * pi_a).floor() as usize;
    let (mu_a1_min, mu_i1_max) = if k == 0 {
        (0.0, mean(&positives))
    } else if k >= positives.len() {
        (mean(&positives), 0.0)
    } else {
        (mean(&positives[..k]), mean(&positives[k..]))
    };
    Ok(BoundingMeans { mu_a1_min, mu_i1_max })
}

/// True when stratification is expected to reduce the variance of the ATE.
pub fn benefit_condition(mu_a1_min: f64, mu_i1_max: f64, p: &StrataProportions) -> bool {
    if mu_i1_max <= 0.0 {
        return mu_a1_min > 0.0;
    }
    let denom = p.pi_i + p.pi_n;
    let rhs = if denom > 0.0 { p.pi_i / denom } else { 0.0 };
    mu_a1_min / mu_i1_max > rhs
}

fn check_n(n: f64) -> Result<()> {
    if n > 0.0 && n.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("sample size must be positive, got {n}")))
    }
}

/// Reduction in sampling variance from stratifying on known strata under
/// equal allocation: `4 pi_a mu_a0 ((1 - pi_a) mu_a1 - pi_i mu_i1) / n`.
pub fn variance_gain(pi_a: f64, pi_i: f64, mu_a0: f64, mu_a1: f64, mu_i1: f64, n: f64) -> Result<f64> {
    check_n(n)?;
    Ok(4.0 * pi_a * mu_a0 * ((1.0 - pi_a) * mu_a1 - pi_i * mu_i1) / n)
}

/// [`variance_gain`] evaluated at the conservative bounding means.
///
/// The influenced-mean bound is the treated-arm one; no control-arm bound
/// exists because influenced customers never purchase under control.
pub fn variance_gain_lower_bound(
    p: &StrataProportions,
    mu_a0_hat: f64,
    mu_a1_min: f64,
    mu_i1_max: f64,
    n: f64,
) -> Result<f64> {
    variance_gain(p.pi_a, p.pi_i, mu_a0_hat, mu_a1_min, mu_i1_max, n)
}

/// Mean of `exp(L) - 1` for `L ~ N(mu, sigma)`: currency-scale mean of a
/// log(y + 1) normal cell.
pub fn expected_lognormal_mean(mu: f64, sigma: f64) -> f64 {
    (mu + 0.5 * sigma * sigma).exp() - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n1: usize,
    pub n0: usize,
    pub proportions: StrataProportions,
    /// Mean log(y + 1) of control purchasers (0 when there are none).
    pub mu_a0_hat: f64,
    pub mu_a1_min: f64,
    pub mu_i1_max: f64,
    pub benefit_condition: bool,
    pub delta_min: f64,
    pub predicted_var_reduction_lb: f64,
    /// Estimated variance of the difference-in-means estimate, `s1^2/n1 + s0^2/n0`.
    pub var_tau_d: f64,
}

pub fn diagnose(data: &ExperimentDataset) -> Result<DiagnosticsReport> {
    let proportions = estimate_strata_proportions(data)?;
    let bounds = bounding_means(data, proportions.pi_a)?;
    let control_pos = data.positive_log_outcomes(false);
    let mu_a0_hat = if control_pos.is_empty() { 0.0 } else { mean(&control_pos) };
    let n = data.len() as f64;
    let delta_min = variance_gain_lower_bound(&proportions, mu_a0_hat, bounds.mu_a1_min, bounds.mu_i1_max, n)?;

    let arm_var = |treated: bool, n_arm: usize| {
        let l: Vec<f64> = data.arm(treated).map(|r| r.log_outcome()).collect();
        let v = variance(&l);
        if v.is_finite() {
            v / n_arm as f64
        } else {
            0.0
        }
    };
    let var_tau_d = arm_var(true, data.n1()) + arm_var(false, data.n0());
    let predicted_var_reduction_lb = if var_tau_d > 0.0 { delta_min / var_tau_d } else { 0.0 };
    Ok(DiagnosticsReport {
        n1: data.n1(),
        n0: data.n0(),
        proportions,
        mu_a0_hat,
        mu_a1_min: bounds.mu_a1_min,
        mu_i1_max: bounds.mu_i1_max,
        benefit_condition: benefit_condition(bounds.mu_a1_min, bounds.mu_i1_max, &proportions),
        delta_min,
        predicted_var_reduction_lb,
        var_tau_d,
    })
}

/// How the two arm variances enter the standard error of the ATE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmVariance {
    /// `var/n0 + var/(total_n - n0)`: control and treatment share a fixed total.
    #[default]
    TwoArm,
    /// `var/n0`: required size is linear in the per-unit variance, the
    /// treated mean being treated as known from the full campaign.
    ControlOnly,
}

/// Inputs of the ROI sample-size calculator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    pub total_n: usize,
    pub cost_per_unit: f64,
    pub roi_null: f64,
    pub roi_alt: f64,
    pub power: f64,
    /// One-sided significance level.
    pub alpha: f64,
    /// Mean control sales per customer, currency units.
    pub mean_sales: f64,
    /// Log-scale outcome standard deviation; `outcome_sd^2` is the default per-unit variance.
    pub outcome_sd: f64,
    #[serde(default)]
    pub arm_variance: ArmVariance,
}

impl PowerSpec {
    fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power < 1.0) {
            return Err(Error::InvalidParameter(format!("power {} outside (0, 1)", self.power)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidParameter(format!("alpha {} outside (0, 0.5)", self.alpha)));
        }
        if self.total_n < 2 || self.cost_per_unit <= 0.0 || self.mean_sales < 0.0 {
            return Err(Error::InvalidParameter("total_n >= 2, cost > 0 and mean sales >= 0 required".into()));
        }
        Ok(())
    }

    /// Log-scale ATE implied by a given ROI: the treated mean exceeds the
    /// control mean by `cost * (1 + roi)`.
    pub fn log_effect(&self, roi: f64) -> f64 {
        let base = 1.0 + self.mean_sales;
        (base + self.cost_per_unit * (1.0 + roi)).ln() - base.ln()
    }

    /// Distance between the alternative and null hypotheses on the log scale.
    pub fn effect_size(&self) -> f64 {
        self.log_effect(self.roi_alt) - self.log_effect(self.roi_null)
    }

    pub fn per_unit_variance(&self) -> f64 {
        self.outcome_sd * self.outcome_sd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "n0")]
pub enum SampleSize {
    Feasible(usize),
    Infeasible,
}

/// Power of the one-sided test at control size `n0`.
pub fn power_at(spec: &PowerSpec, var_tau: f64, n0: usize) -> f64 {
    let n0f = n0 as f64;
    let se2 = match spec.arm_variance {
        ArmVariance::TwoArm => {
            let n1 = spec.total_n.saturating_sub(n0) as f64;
            if n1 <= 0.0 || n0f <= 0.0 {
                return 0.0;
            }
            var_tau / n0f + var_tau / n1
        }
        ArmVariance::ControlOnly => {
            if n0f <= 0.0 {
                return 0.0;
            }
            var_tau / n0f
        }
    };
    normal_cdf(spec.effect_size() / se2.sqrt() - normal_quantile(1.0 - spec.alpha))
}

/// Smallest control-group size reaching the requested power, found by
/// integer bisection over the range where power increases with `n0`.
pub fn required_control_size(spec: &PowerSpec, var_tau: f64) -> Result<SampleSize> {
    spec.validate()?;
    if !(var_tau > 0.0 && var_tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("per-unit variance must be positive, got {var_tau}")));
    }
    if spec.effect_size() <= 0.0 {
        return Ok(SampleSize::Infeasible);
    }
    let hi_limit = match spec.arm_variance {
        ArmVariance::TwoArm => spec.total_n / 2,
        ArmVariance::ControlOnly => spec.total_n,
    };
    if power_at(spec, var_tau, hi_limit) < spec.power {
        return Ok(SampleSize::Infeasible);
    }
    let (mut lo, mut hi) = (0usize, hi_limit);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if power_at(spec, var_tau, mid) >= spec.power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SampleSize::Feasible(hi))
}
