//! Bayesian difference in means: `log(y + 1) = alpha + tau_d z + e`.
//!
//! All customers enter, zeros included. Outcomes are standardized by the
//! pooled mean and sd; priors are N(0, 20) on the location terms and
//! half-N(0, 5) on sigma.

use super::{half_normal_prior_log, normal_prior, DiffMeansParams, Standardization, MU_PRIOR_SD};
use crate::data::ExperimentDataset;
use crate::error::Result;
use crate::inference::TargetDensity;
use crate::stats::LN_SQRT_2PI;

const DIM_SIGMA_PRIOR_SD: f64 = 5.0;

/// Sufficient statistics of one arm: count, sum, sum of squares.
#[derive(Debug, Clone, Copy)]
struct ArmStats {
    n: f64,
    sum: f64,
    sumsq: f64,
}

#[derive(Debug, Clone)]
pub struct DimPosterior {
    std: Standardization,
    control: ArmStats,
    treated: ArmStats,
    init: Vec<f64>,
}

pub fn dim_posterior(data: &ExperimentDataset) -> Result<DimPosterior> {
    data.require_both_arms()?;
    let all: Vec<f64> = data.records().iter().map(|r| r.log_outcome()).collect();
    let std = Standardization::from_sample(&all);
    let stats = |treated: bool| {
        let xs: Vec<f64> = data.arm(treated).map(|r| std.forward(r.log_outcome())).collect();
        ArmStats { n: xs.len() as f64, sum: xs.iter().sum(), sumsq: xs.iter().map(|x| x * x).sum() }
    };
    let (control, treated) = (stats(false), stats(true));
    let a = control.sum / control.n;
    let init = vec![a, treated.sum / treated.n - a, 0.0];
    Ok(DimPosterior { std, control, treated, init })
}

impl DimPosterior {
    pub fn standardization(&self) -> Standardization {
        self.std
    }

    pub fn params(&self, v: &[f64]) -> DiffMeansParams {
        DiffMeansParams {
            alpha: self.std.location(v[0]),
            tau_d: self.std.spread(v[1]),
            sigma: self.std.spread(v[2].exp()),
        }
    }
}

impl TargetDensity for DimPosterior {
    fn dim(&self) -> usize {
        3
    }

    fn logp_grad(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        let sigma = v[2].exp();
        let s2 = sigma * sigma;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut lp = 0.0;
        for (arm, shift) in [(self.control, 0.0), (self.treated, 1.0)] {
            let mu = v[0] + shift * v[1];
            let ss = arm.sumsq - 2.0 * mu * arm.sum + arm.n * mu * mu;
            lp += -arm.n * (v[2] + LN_SQRT_2PI) - 0.5 * ss / s2;
            let g_mu = (arm.sum - arm.n * mu) / s2;
            grad[0] += g_mu;
            grad[1] += shift * g_mu;
            grad[2] += ss / s2 - arm.n;
        }
        for k in 0..2 {
            let (l, d) = normal_prior(v[k], MU_PRIOR_SD);
            lp += l;
            grad[k] += d;
        }
        let (l, d) = half_normal_prior_log(sigma, DIM_SIGMA_PRIOR_SD);
        lp += l + v[2];
        grad[2] += d + 1.0;
        lp
    }

    fn param_names(&self) -> Vec<String> {
        ["alpha", "tau_d", "sigma"].map(String::from).to_vec()
    }

    fn constrain(&self, v: &[f64]) -> Vec<f64> {
        let p = self.params(v);
        vec![p.alpha, p.tau_d, p.sigma]
    }

    fn derived_names(&self) -> Vec<String> {
        vec!["ate_log".into()]
    }

    fn derived(&self, p: &[f64]) -> Vec<f64> {
        vec![p[1]]
    }

    fn unconstrained_names(&self) -> Vec<String> {
        ["alpha_std", "tau_d_std", "log_sigma_std"].map(String::from).to_vec()
    }

    fn initial_point(&self) -> Vec<f64> {
        self.init.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExperimentRecord;
    use crate::inference::{gradient_error, sample, SamplerConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(seed: u64, n: usize, lift: f64) -> ExperimentDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let treated = i % 2 == 1;
                let p = if treated { 0.2 + lift } else { 0.2 };
                let y = if rng.random_bool(p) { rng.random_range(1.0..200.0) } else { 0.0 };
                ExperimentRecord::new(format!("c{i}"), treated, y)
            })
            .collect();
        ExperimentDataset::new(records, vec![]).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let post = dim_posterior(&dataset(1, 2000, 0.05)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            assert!(gradient_error(&post, &v, 1e-5) < 1e-6);
        }
    }

    #[test]
    fn posterior_mean_tracks_ols() {
        // Each comparison is itself a 2-MCSE interval check, so about one in
        // twenty misses by chance; require most to pass and none to be far off.
        let config = SamplerConfig { warmup_iters: 400, sampling_iters: 500, ..Default::default() };
        let mut within = 0;
        for seed in 0..20 {
            let data = dataset(100 + seed, 1000, 0.03);
            let ols = crate::data::summarize(&data).unwrap().diff_in_means();
            let draws = sample(&dim_posterior(&data).unwrap(), &SamplerConfig { seed, ..config.clone() }).unwrap();
            let conv = crate::inference::convergence(&draws).unwrap();
            let mcse = conv.iter().find(|c| c.name == "tau_d").unwrap().mcse_mean;
            let m = crate::stats::mean(&draws.pooled("tau_d").unwrap());
            let z = (m - ols).abs() / mcse;
            assert!(z < 4.0, "seed {seed}: {m} vs {ols}");
            within += usize::from(z < 2.0);
        }
        assert!(within >= 17, "{within}/20 within 2 MCSE");
    }
}
