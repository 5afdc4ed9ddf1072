//! Principal stratification without covariates.
//!
//! Unconstrained layout: two simplex logits (A and I against N), the three
//! cell means, then `log sigma`, all on the standardized scale.

use super::{
    ate_dollar, ate_log, half_normal_prior_log, normal_prior, require_purchasers, PurchaseData, Standardization,
    StrataParams, MU_PRIOR_SD, SIGMA_PRIOR_SD,
};
use crate::data::ExperimentDataset;
use crate::error::{Error, Result};
use crate::inference::transform::{simplex, simplex_inverse, simplex_pullback};
use crate::inference::{PosteriorDraws, TargetDensity};
use crate::stats::{log_sum_exp2, LN_SQRT_2PI};

/// Log likelihood contributions and their gradient.
struct Terms {
    lp: f64,
    /// d/d(pi_a, pi_i, pi_n)
    g_pi: [f64; 3],
    g_a0: f64,
    g_a1: f64,
    g_i1: f64,
    /// d/d log sigma
    g_log_sigma: f64,
}

/// Marginal likelihood over the four observed (arm, purchase) groups.
fn loglik_terms(d: &PurchaseData, pi: &[f64; 3], mu_a0: f64, mu_a1: f64, mu_i1: f64, sigma: f64) -> Terms {
    let [pa, pi_i, pn] = *pi;
    let (ln_a, ln_i, ln_n) = (pa.ln(), pi_i.ln(), pn.ln());
    let s2 = sigma * sigma;
    let mut t = Terms { lp: 0.0, g_pi: [0.0; 3], g_a0: 0.0, g_a1: 0.0, g_i1: 0.0, g_log_sigma: 0.0 };

    // treated purchasers: A or I mixture
    let (mut wa_sum, mut wi_sum, mut sq) = (0.0, 0.0, 0.0);
    let norm = sigma.ln() + LN_SQRT_2PI;
    let (ca, ci) = (ln_a - norm, ln_i - norm);
    let half_prec = 0.5 / s2;
    for &x in &d.treated_pos {
        let (da, di) = (x - mu_a1, x - mu_i1);
        let la = ca - half_prec * da * da;
        let li = ci - half_prec * di * di;
        let l = log_sum_exp2(la, li);
        let wa = (la - l).exp();
        let wi = (li - l).exp();
        t.lp += l;
        wa_sum += wa;
        wi_sum += wi;
        t.g_a1 += wa * da;
        t.g_i1 += wi * di;
        sq += wa * da * da + wi * di * di;
    }
    t.g_a1 /= s2;
    t.g_i1 /= s2;
    t.g_log_sigma += sq / s2 - d.treated_pos.len() as f64;
    t.g_pi[0] += wa_sum / pa;
    t.g_pi[1] += wi_sum / pi_i;

    // treated non-purchasers are never-buyers
    let n1z = d.treated_zero as f64;
    t.lp += n1z * ln_n;
    t.g_pi[2] += n1z / pn;

    // control purchasers are always-buyers
    let m = d.control_pos_n as f64;
    let (lp_c, g_mu, g_ls) = d.control_normal(mu_a0, sigma);
    t.lp += m * ln_a + lp_c;
    t.g_pi[0] += m / pa;
    t.g_a0 += g_mu;
    t.g_log_sigma += g_ls;

    // control non-purchasers are influenced or never-buyers
    let n0z = d.control_zero as f64;
    if n0z > 0.0 {
        let rest = pi_i + pn;
        t.lp += n0z * rest.ln();
        t.g_pi[1] += n0z / rest;
        t.g_pi[2] += n0z / rest;
    }
    t
}

/// Log likelihood of the stratified model on the original scale.
pub fn ps_loglik(params: &StrataParams, data: &ExperimentDataset) -> Result<f64> {
    params.validate()?;
    let d = PurchaseData::new(data, false);
    Ok(loglik_terms(&d, &params.pi, params.mu_a0, params.mu_a1, params.mu_i1, params.sigma).lp)
}

/// Posterior of the stratified model with Dirichlet(2,2,2), N(0, 20) and
/// half-N(0, 1) priors on the standardized scale.
#[derive(Debug, Clone)]
pub struct PsPosterior {
    data: PurchaseData,
    init: Vec<f64>,
}

pub fn ps_posterior(data: &ExperimentDataset) -> Result<PsPosterior> {
    require_purchasers(data)?;
    let d = PurchaseData::new(data, true);
    let init = initial_point(&d);
    Ok(PsPosterior { data: d, init })
}

/// Plug-in shares, control moments for the always-buy cell, and the treated
/// purchaser mean split so the influenced mean starts 1.5 sd lower.
fn initial_point(d: &PurchaseData) -> Vec<f64> {
    let inc1 = d.treated_pos.len() as f64 / d.n1() as f64;
    let inc0 = d.control_pos_n as f64 / d.n0() as f64;
    let floor = 1e-3;
    let mut pi = [inc0.max(floor), (inc1 - inc0).max(floor), (1.0 - inc1).max(floor)];
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    let s = d.std;
    let mu_a1 = s.forward(d.treated_pos_mean);
    let mu_i1 = mu_a1 - 1.5 * d.treated_pos_sd / s.scale;
    let mut v = simplex_inverse(&pi);
    v.extend([0.0, mu_a1, mu_i1, 0.0]);
    v
}

impl PsPosterior {
    pub fn standardization(&self) -> Standardization {
        self.data.std
    }

    fn unpack(&self, v: &[f64]) -> StrataParams {
        let (p, _) = simplex(&v[..2]);
        let s = self.data.std;
        StrataParams {
            pi: [p[0], p[1], p[2]],
            mu_a0: s.location(v[2]),
            mu_a1: s.location(v[3]),
            mu_i1: s.location(v[4]),
            sigma: s.spread(v[5].exp()),
        }
    }
}

impl TargetDensity for PsPosterior {
    fn dim(&self) -> usize {
        6
    }

    fn logp_grad(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        let (p, log_jac) = simplex(&v[..2]);
        let pi = [p[0], p[1], p[2]];
        let sigma = v[5].exp();
        let t = loglik_terms(&self.data, &pi, v[2], v[3], v[4], sigma);

        // Dirichlet(2,2,2): ln 120 + sum ln p; plus the simplex Jacobian
        let mut lp = t.lp + 120f64.ln() + pi.iter().map(|x| x.ln()).sum::<f64>() + log_jac;
        let mut g_pi = t.g_pi;
        for (g, x) in g_pi.iter_mut().zip(&pi) {
            *g += 2.0 / x;
        }
        simplex_pullback(&pi, &g_pi, &mut grad[..2]);

        let mut g_mu = [t.g_a0, t.g_a1, t.g_i1];
        for (k, g) in g_mu.iter_mut().enumerate() {
            let (l, d) = normal_prior(v[2 + k], MU_PRIOR_SD);
            lp += l;
            *g += d;
        }
        grad[2..5].copy_from_slice(&g_mu);

        let (l, d) = half_normal_prior_log(sigma, SIGMA_PRIOR_SD);
        lp += l + v[5];
        grad[5] = t.g_log_sigma + d + 1.0;
        lp
    }

    fn param_names(&self) -> Vec<String> {
        ["pi_a", "pi_i", "pi_n", "mu_a0", "mu_a1", "mu_i1", "sigma"].map(String::from).to_vec()
    }

    fn constrain(&self, v: &[f64]) -> Vec<f64> {
        let p = self.unpack(v);
        vec![p.pi[0], p.pi[1], p.pi[2], p.mu_a0, p.mu_a1, p.mu_i1, p.sigma]
    }

    fn derived_names(&self) -> Vec<String> {
        vec!["ate_log".into(), "ate_dollar".into()]
    }

    fn derived(&self, p: &[f64]) -> Vec<f64> {
        vec![ate_log(p[0], p[1], p[3], p[4], p[5]), ate_dollar(p[0], p[1], p[3], p[4], p[5], p[6])]
    }

    fn unconstrained_names(&self) -> Vec<String> {
        ["logit_a", "logit_i", "mu_a0_std", "mu_a1_std", "mu_i1_std", "log_sigma_std"].map(String::from).to_vec()
    }

    fn initial_point(&self) -> Vec<f64> {
        self.init.clone()
    }
}

/// Per-draw `(ate_log, ate_dollar)` recomputed from the parameter columns of
/// a stratified fit (with or without covariates).
pub fn ps_ate_draws(draws: &PosteriorDraws) -> Result<Vec<(f64, f64)>> {
    let col = |name: &str| {
        draws
            .pooled(name)
            .ok_or_else(|| Error::Precondition(format!("draws have no `{name}` column")))
    };
    let (pa, pi) = (col("pi_a")?, col("pi_i")?);
    let (a0, a1, i1, s) = (col("mu_a0")?, col("mu_a1")?, col("mu_i1")?, col("sigma")?);
    Ok((0..pa.len())
        .map(|k| (ate_log(pa[k], pi[k], a0[k], a1[k], i1[k]), ate_dollar(pa[k], pi[k], a0[k], a1[k], i1[k], s[k])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExperimentRecord;
    use crate::inference::gradient_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn params() -> StrataParams {
        StrataParams { pi: [0.162, 0.004, 0.834], mu_a0: 4.6, mu_a1: 4.7, mu_i1: 3.1, sigma: 1.1 }
    }

    fn dataset(n: usize, seed: u64) -> ExperimentDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.1).unwrap();
        let records = (0..n)
            .map(|i| {
                let treated = rng.random_bool(0.5);
                let u: f64 = rng.random();
                let mu = match (u < 0.2, u < 0.23, treated) {
                    (true, _, false) => Some(4.6),
                    (true, _, true) => Some(4.7),
                    (false, true, true) => Some(3.1),
                    _ => None,
                };
                let y = mu.map_or(0.0, |m| { let e: f64 = noise.sample(&mut rng); (m + e).max(0.05) }.exp() - 1.0);
                ExperimentRecord::new(format!("c{i}"), treated, y)
            })
            .collect();
        ExperimentDataset::new(records, vec![]).unwrap()
    }

    /// Unaggregated reference likelihood, one record at a time.
    fn naive(p: &StrataParams, data: &ExperimentDataset) -> f64 {
        let phi = |x: f64, m: f64| {
            (-(x - m).powi(2) / (2.0 * p.sigma * p.sigma)).exp() / (p.sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        data.records()
            .iter()
            .map(|r| {
                let l = r.log_outcome();
                match (r.treated, r.purchased()) {
                    (true, true) => (p.pi[0] * phi(l, p.mu_a1) + p.pi[1] * phi(l, p.mu_i1)).ln(),
                    (true, false) => p.pi[2].ln(),
                    (false, true) => (p.pi[0] * phi(l, p.mu_a0)).ln(),
                    (false, false) => (p.pi[1] + p.pi[2]).ln(),
                }
            })
            .sum()
    }

    #[test]
    fn single_control_non_purchaser() {
        let d = ExperimentDataset::new(vec![ExperimentRecord::new("a", false, 0.0)], vec![]).unwrap();
        assert!((ps_loglik(&params(), &d).unwrap() - 0.838f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_control_purchaser_at_mean() {
        let p = params();
        let y = p.mu_a0.exp() - 1.0;
        let d = ExperimentDataset::new(vec![ExperimentRecord::new("a", false, y)], vec![]).unwrap();
        let expect = p.pi[0].ln() - (p.sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((ps_loglik(&p, &d).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_reference() {
        let d = dataset(5000, 3);
        let p = params();
        let a = ps_loglik(&p, &d).unwrap();
        let b = naive(&p, &d);
        assert!(((a - b) / b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let post = ps_posterior(&dataset(2000, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = post.initial_point();
        for _ in 0..100 {
            let v: Vec<f64> = base.iter().map(|b| b + rng.random_range(-1.0..1.0)).collect();
            let e = gradient_error(&post, &v, 1e-5);
            assert!(e < 1e-6, "{e} at {v:?}");
        }
    }

    #[test]
    fn boundary_of_simplex_is_finite() {
        let post = ps_posterior(&dataset(2000, 6)).unwrap();
        let mut v = post.initial_point();
        v[1] = -30.0;
        let mut g = vec![0.0; 6];
        let lp = post.logp_grad(&v, &mut g);
        assert!(lp.is_finite() && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn log_density_falls_far_from_data() {
        let post = ps_posterior(&dataset(2000, 7)).unwrap();
        let centre = post.initial_point();
        let lp0 = post.logp(&centre);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let k = rng.random_range(2..5);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut v = centre.clone();
            // 10 sigma on the standardized scale
            v[k] += sign * 10.0 * centre[5].exp();
            assert!(post.logp(&v) < lp0);
        }
    }

    #[test]
    fn no_control_purchasers_is_identification_error() {
        let recs = vec![
            ExperimentRecord::new("a", false, 0.0),
            ExperimentRecord::new("b", true, 5.0),
            ExperimentRecord::new("c", true, 0.0),
        ];
        let d = ExperimentDataset::new(recs, vec![]).unwrap();
        assert!(matches!(ps_posterior(&d), Err(Error::Identification(_))));
    }

    #[test]
    fn constrain_back_transforms() {
        let post = ps_posterior(&dataset(1000, 9)).unwrap();
        let s = post.standardization();
        let v = [0.1, -2.0, 0.5, 0.2, -1.0, 0.3];
        let c = post.constrain(&v);
        assert!((c[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((c[3] - (s.center + s.scale * 0.5)).abs() < 1e-12);
        assert!((c[6] - s.scale * 0.3f64.exp()).abs() < 1e-12);
    }
}
