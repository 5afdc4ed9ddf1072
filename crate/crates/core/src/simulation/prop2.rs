//! Monte Carlo check that responsiveness and recency order customers by
//! their strata shares even when past exposure is targeted.
//!
//! Each period a customer's stratum is an independent categorical draw.
//! Exposure is Bernoulli with a probability that depends on whether the
//! drawn stratum would buy when exposed (A or I), tuned so that the
//! exposure indicator has marginal rate `exposure_prob` and correlation
//! `rho` with that event. The customer purchases when always-buy, or when
//! influenced and exposed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariates::{recency, responsiveness};
use crate::data::PanelRecord;
use crate::error::{Error, Result};
use crate::stats::{mean, std_dev};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop2Customer {
    pub pi_a: f64,
    pub pi_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Config {
    /// The first customer is expected to be the more responsive one.
    pub customers: [Prop2Customer; 2],
    pub rho: f64,
    pub exposure_prob: f64,
    pub periods: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for Prop2Config {
    fn default() -> Self {
        Self {
            customers: [Prop2Customer { pi_a: 0.3, pi_i: 0.1 }, Prop2Customer { pi_a: 0.1, pi_i: 0.02 }],
            rho: 0.3,
            exposure_prob: 0.5,
            periods: 13,
            reps: 100_000,
            seed: 1,
        }
    }
}

/// Per-customer sample moments. Undefined Q (never or always exposed) and
/// undefined R (no purchase) are excluded and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Moments {
    pub mean_q: f64,
    pub se_q: f64,
    pub q_undefined: usize,
    pub mean_r: f64,
    pub se_r: f64,
    pub r_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Result {
    pub config: Prop2Config,
    pub moments: [Prop2Moments; 2],
    /// `(E[Q1] - E[Q2]) / se`, positive when the ordering holds.
    pub q_z: f64,
    /// `(E[R2] - E[R1]) / se`, positive when the ordering holds.
    pub r_z: f64,
}

impl Prop2Result {
    pub fn orderings_hold(&self, k: f64) -> bool {
        self.q_z > k && self.r_z > k
    }
}

/// Exposure probabilities given a buy-if-exposed stratum and otherwise.
fn exposure_probs(c: &Prop2Customer, p: f64, rho: f64) -> Result<(f64, f64)> {
    let q = c.pi_a + c.pi_i;
    if !(c.pi_a >= 0.0 && c.pi_i >= 0.0 && q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("strata shares {c:?} must leave 0 < pi_a + pi_i < 1")));
    }
    let v = p * (1.0 - p);
    let hi = p + rho * ((1.0 - q) * v / q).sqrt();
    let lo = p - rho * (q * v / (1.0 - q)).sqrt();
    if !((0.0..=1.0).contains(&hi) && (0.0..=1.0).contains(&lo)) {
        return Err(Error::InvalidParameter(format!(
            "correlation {rho} is not attainable with exposure rate {p} for {c:?}"
        )));
    }
    Ok((hi, lo))
}

fn simulate_history(c: &Prop2Customer, probs: (f64, f64), periods: usize, rng: &mut ChaCha8Rng) -> Vec<PanelRecord> {
    (1..=periods)
        .map(|t| {
            let u: f64 = rng.random();
            let always = u < c.pi_a;
            let influenced = !always && u < c.pi_a + c.pi_i;
            let exposed = rng.random_bool(if always || influenced { probs.0 } else { probs.1 });
            PanelRecord { t, purchased: always || (influenced && exposed), exposed }
        })
        .collect()
}

fn moments(c: &Prop2Customer, cfg: &Prop2Config, stream: u64) -> Result<Prop2Moments> {
    let probs = exposure_probs(c, cfg.exposure_prob, cfg.rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let (mut qs, mut rs) = (Vec::with_capacity(cfg.reps), Vec::with_capacity(cfg.reps));
    for _ in 0..cfg.reps {
        let h = simulate_history(c, probs, cfg.periods, &mut rng);
        if let Some(q) = responsiveness(&h)? {
            qs.push(q);
        }
        if let Some(r) = recency(&h) {
            rs.push(r as f64);
        }
    }
    let se = |x: &[f64]| std_dev(x) / (x.len() as f64).sqrt();
    Ok(Prop2Moments {
        mean_q: mean(&qs),
        se_q: se(&qs),
        q_undefined: cfg.reps - qs.len(),
        mean_r: mean(&rs),
        se_r: se(&rs),
        r_undefined: cfg.reps - rs.len(),
    })
}

pub fn prop2_monte_carlo(config: &Prop2Config) -> Result<Prop2Result> {
    if config.periods < 2 || config.reps < 2 {
        return Err(Error::InvalidParameter("need at least 2 periods and 2 replications".into()));
    }
    if !(config.exposure_prob > 0.0 && config.exposure_prob < 1.0) || !(0.0..1.0).contains(&config.rho) {
        return Err(Error::InvalidParameter("exposure rate must lie in (0, 1) and rho in [0, 1)".into()));
    }
    let m1 = moments(&config.customers[0], config, 1)?;
    let m2 = moments(&config.customers[1], config, 2)?;
    let q_z = (m1.mean_q - m2.mean_q) / m1.se_q.hypot(m2.se_q);
    let r_z = (m2.mean_r - m1.mean_r) / m1.se_r.hypot(m2.se_r);
    Ok(Prop2Result { config: config.clone(), moments: [m1, m2], q_z, r_z })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exposure_model_has_target_marginal_and_correlation() {
        let c = Prop2Customer { pi_a: 0.3, pi_i: 0.1 };
        let (p, rho) = (0.5, 0.3);
        let (hi, lo) = exposure_probs(&c, p, rho).unwrap();
        let q: f64 = 0.4;
        let marginal = q * hi + (1.0 - q) * lo;
        assert!((marginal - p).abs() < 1e-12);
        // corr of two Bernoullis from the joint cell P(buy-if-exposed, exposed)
        let cov = q * hi - q * p;
        let corr = cov / (q * (1.0 - q) * p * (1.0 - p)).sqrt();
        assert!((corr - rho).abs() < 1e-12);
    }

    #[test]
    fn realized_purchase_rate_matches_model() {
        let cfg = Prop2Config { reps: 20_000, ..Prop2Config::default() };
        let c = cfg.customers[0];
        let probs = exposure_probs(&c, cfg.exposure_prob, cfg.rho).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut buys, mut total) = (0usize, 0usize);
        for _ in 0..cfg.reps {
            let h = simulate_history(&c, probs, cfg.periods, &mut rng);
            buys += h.iter().filter(|r| r.purchased).count();
            total += h.len();
        }
        let expect = c.pi_a + c.pi_i * probs.0;
        let rate = buys as f64 / total as f64;
        let se = (expect * (1.0 - expect) / total as f64).sqrt();
        assert!((rate - expect).abs() < 4.0 * se, "{rate} vs {expect}");
    }

    #[test]
    fn orderings_hold_without_targeting() {
        let r = prop2_monte_carlo(&Prop2Config { rho: 0.0, reps: 20_000, ..Prop2Config::default() }).unwrap();
        assert!(r.orderings_hold(3.0), "{r:?}");
    }

    #[test]
    fn unattainable_correlation_rejected() {
        let cfg = Prop2Config {
            customers: [Prop2Customer { pi_a: 0.01, pi_i: 0.0 }, Prop2Customer { pi_a: 0.1, pi_i: 0.02 }],
            rho: 0.9,
            ..Prop2Config::default()
        };
        assert!(prop2_monte_carlo(&cfg).is_err());
    }
}
