//! Zero-inflated normal benchmark: per-arm purchase incidence times a
//! normal model for positive log spend.
//!
//! Unconstrained layout: `logit q0`, then either `logit q1` or, in the
//! positive-lift variant, `logit u` with `q1 = q0 + (1 - q0) u`; then
//! `alpha`, `beta` (standardized) and `log sigma`.

use super::{
    half_normal_prior_log, normal_prior, require_purchasers, PurchaseData, Standardization, ZeroInflatedParams,
    MU_PRIOR_SD, SIGMA_PRIOR_SD,
};
use crate::data::ExperimentDataset;
use crate::error::Result;
use crate::inference::transform::{log_logistic, logistic, logit};
use crate::inference::TargetDensity;

#[derive(Debug, Clone)]
pub struct ZiPosterior {
    constrained: bool,
    k1: f64,
    n1: f64,
    k0: f64,
    n0: f64,
    /// Treated positives: count, sum, sum of squares (standardized).
    t_stats: (f64, f64, f64),
    control: PurchaseData,
    init: Vec<f64>,
}

/// Uniform priors on the incidences (restricted to `q1 >= q0` when
/// constrained), N(0, 20) on the means and half-N(0, 1) on sigma.
pub fn zi_posterior(data: &ExperimentDataset, constrained: bool) -> Result<ZiPosterior> {
    require_purchasers(data)?;
    let d = PurchaseData::new(data, true);
    let k1 = d.treated_pos.len() as f64;
    let k0 = d.control_pos_n as f64;
    let (n1, n0) = (d.n1() as f64, d.n0() as f64);
    let t_stats = (k1, d.treated_pos.iter().sum(), d.treated_pos.iter().map(|x| x * x).sum());

    let clamp = |q: f64| q.clamp(1e-3, 1.0 - 1e-3);
    let (q0, q1) = (clamp(k0 / n0), clamp(k1 / n1));
    let second = if constrained { logit(clamp((q1 - q0).max(0.0) / (1.0 - q0))) } else { logit(q1) };
    let init = vec![logit(q0), second, 0.0, t_stats.1 / k1, 0.0];
    Ok(ZiPosterior { constrained, k1, n1, k0, n0, t_stats, control: d, init })
}

impl ZiPosterior {
    pub fn standardization(&self) -> Standardization {
        self.control.std
    }

    pub fn is_constrained(&self) -> bool {
        self.constrained
    }

    fn incidences(&self, v: &[f64]) -> (f64, f64) {
        let q0 = logistic(v[0]);
        let q1 = if self.constrained { q0 + (1.0 - q0) * logistic(v[1]) } else { logistic(v[1]) };
        (q0, q1)
    }

    pub fn params(&self, v: &[f64]) -> ZeroInflatedParams {
        let (q0, q1) = self.incidences(v);
        let s = self.control.std;
        ZeroInflatedParams {
            q0,
            q1,
            alpha: s.location(v[2]),
            beta: s.location(v[3]),
            sigma: s.spread(v[4].exp()),
            constrained: self.constrained,
        }
    }
}

impl TargetDensity for ZiPosterior {
    fn dim(&self) -> usize {
        5
    }

    fn logp_grad(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        // log q and log(1 - q) in terms of the logits, for stability
        let (lq0, l1q0) = (log_logistic(v[0]), log_logistic(-v[0]));
        let q0 = logistic(v[0]);
        let (n1z, n0z) = (self.n1 - self.k1, self.n0 - self.k0);

        let mut lp = self.k0 * lq0 + n0z * l1q0;
        grad[0] = self.k0 * (1.0 - q0) - n0z * q0;
        if self.constrained {
            let u = logistic(v[1]);
            let (lu, l1u) = (log_logistic(v[1]), log_logistic(-v[1]));
            let q1 = q0 + (1.0 - q0) * u;
            // 1 - q1 = (1 - q0)(1 - u)
            lp += self.k1 * q1.ln() + n1z * (l1q0 + l1u);
            grad[0] += self.k1 * q0 * (1.0 - q0) * (1.0 - u) / q1 - n1z * q0;
            grad[1] = self.k1 * (1.0 - q0) * u * (1.0 - u) / q1 - n1z * u;
            // Jacobian of (v0, v1) -> (q0, q1)
            lp += lq0 + 2.0 * l1q0 + lu + l1u;
            grad[0] += 1.0 - 2.0 * q0 - q0;
            grad[1] += 1.0 - 2.0 * u;
        } else {
            let q1 = logistic(v[1]);
            lp += self.k1 * log_logistic(v[1]) + n1z * log_logistic(-v[1]);
            grad[1] = self.k1 * (1.0 - q1) - n1z * q1;
            lp += lq0 + l1q0 + log_logistic(v[1]) + log_logistic(-v[1]);
            grad[0] += 1.0 - 2.0 * q0;
            grad[1] += 1.0 - 2.0 * q1;
        }

        let sigma = v[4].exp();
        let s2 = sigma * sigma;
        let (lc, g_alpha, g_ls_c) = self.control.control_normal(v[2], sigma);
        let (n, sum, sumsq) = self.t_stats;
        let ss = sumsq - 2.0 * v[3] * sum + n * v[3] * v[3];
        let lt = -n * (sigma.ln() + crate::stats::LN_SQRT_2PI) - 0.5 * ss / s2;
        lp += lc + lt;
        grad[2] = g_alpha;
        grad[3] = (sum - n * v[3]) / s2;
        grad[4] = g_ls_c + ss / s2 - n;

        for k in 2..4 {
            let (l, d) = normal_prior(v[k], MU_PRIOR_SD);
            lp += l;
            grad[k] += d;
        }
        let (l, d) = half_normal_prior_log(sigma, SIGMA_PRIOR_SD);
        lp += l + v[4];
        grad[4] += d + 1.0;
        lp
    }

    fn param_names(&self) -> Vec<String> {
        ["q0", "q1", "alpha", "beta", "sigma"].map(String::from).to_vec()
    }

    fn constrain(&self, v: &[f64]) -> Vec<f64> {
        let p = self.params(v);
        vec![p.q0, p.q1, p.alpha, p.beta, p.sigma]
    }

    fn derived_names(&self) -> Vec<String> {
        vec!["ate_log".into(), "ate_dollar".into()]
    }

    fn derived(&self, p: &[f64]) -> Vec<f64> {
        let z = ZeroInflatedParams { q0: p[0], q1: p[1], alpha: p[2], beta: p[3], sigma: p[4], constrained: self.constrained };
        vec![z.tau(), z.tau_dollar()]
    }

    fn unconstrained_names(&self) -> Vec<String> {
        let second = if self.constrained { "logit_u" } else { "logit_q1" };
        ["logit_q0", second, "alpha_std", "beta_std", "log_sigma_std"].map(String::from).to_vec()
    }

    fn initial_point(&self) -> Vec<f64> {
        self.init.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExperimentRecord;
    use crate::inference::gradient_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(seed: u64) -> ExperimentDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..2000)
            .map(|i| {
                let treated = i % 2 == 0;
                let p = if treated { 0.25 } else { 0.2 };
                let y = if rng.random_bool(p) { rng.random_range(5.0..300.0) } else { 0.0 };
                ExperimentRecord::new(format!("c{i}"), treated, y)
            })
            .collect();
        ExperimentDataset::new(records, vec![]).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = dataset(1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for constrained in [false, true] {
            let post = zi_posterior(&d, constrained).unwrap();
            let base = post.initial_point();
            for _ in 0..100 {
                let v: Vec<f64> = base.iter().map(|b| b + rng.random_range(-1.0..1.0)).collect();
                let e = gradient_error(&post, &v, 1e-5);
                assert!(e < 1e-6, "constrained={constrained}: {e}");
            }
        }
    }

    #[test]
    fn constrained_keeps_order() {
        let post = zi_posterior(&dataset(2), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
            let p = post.params(&v);
            assert!(p.q1 >= p.q0);
        }
    }

    #[test]
    fn derived_tau_matches_params() {
        let post = zi_posterior(&dataset(3), false).unwrap();
        let v = [-1.0, -0.8, 0.1, 0.3, -0.2];
        let p = post.params(&v);
        let d = post.derived(&post.constrain(&v));
        assert!((d[0] - (p.q1 * p.beta - p.q0 * p.alpha)).abs() < 1e-12);
    }
}
