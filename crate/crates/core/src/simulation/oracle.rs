//! Frequentist estimators that see the true strata (simulation only).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Stratum;
use crate::data::ExperimentDataset;
use crate::error::{Error, Result};

/// Difference-in-means and known-strata post-stratified estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub tau_d: f64,
    pub tau_ps: f64,
    /// Regression coefficients, aligned with `coefficient_names`.
    pub coefficients: Vec<f64>,
    pub coefficient_names: Vec<String>,
    /// Sample shares of the always-buy and influenced strata used for centering.
    pub x_bar: [f64; 2],
}

fn check_labels(data: &ExperimentDataset, strata: &[Stratum]) -> Result<()> {
    if strata.len() != data.len() {
        return Err(Error::Validation(format!("{} labels for {} customers", strata.len(), data.len())));
    }
    data.require_both_arms()
}

/// Least-squares fit of log(y + 1) on treatment, centered stratum
/// indicators and their treatment interactions. The coefficient on the
/// treatment indicator is the post-stratified estimate.
///
/// Indicator columns that are constant (stratum absent or universal) are
/// dropped. A present stratum missing from one arm leaves the design rank
/// deficient and is reported as a `Precondition` error.
pub fn oracle_estimates(data: &ExperimentDataset, strata: &[Stratum]) -> Result<OracleFit> {
    check_labels(data, strata)?;
    let n = data.len() as f64;
    let share = |s: Stratum| strata.iter().filter(|&&l| l == s).count() as f64 / n;
    let x_bar = [share(Stratum::A), share(Stratum::I)];

    let mut names = vec!["intercept".to_string(), "z".to_string()];
    let mut used = Vec::new();
    for (k, (s, label)) in [(Stratum::A, "a"), (Stratum::I, "i")].into_iter().enumerate() {
        if x_bar[k] > 0.0 && x_bar[k] < 1.0 {
            used.push((k, s));
            names.push(format!("s_{label}"));
        }
    }
    for &(k, _) in &used {
        names.push(format!("z:s_{}", if k == 0 { "a" } else { "i" }));
    }
    let p = names.len();

    // accumulate the normal equations row by row
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    let (mut sum1, mut sum0) = (0.0, 0.0);
    for (r, &s) in data.records().iter().zip(strata) {
        let z = if r.treated { 1.0 } else { 0.0 };
        let y = r.log_outcome();
        if r.treated {
            sum1 += y;
        } else {
            sum0 += y;
        }
        row[0] = 1.0;
        row[1] = z;
        for (j, &(k, stratum)) in used.iter().enumerate() {
            let centered = if s == stratum { 1.0 } else { 0.0 } - x_bar[k];
            row[2 + j] = centered;
            row[2 + used.len() + j] = z * centered;
        }
        for a in 0..p {
            xty[a] += row[a] * y;
            for b in a..p {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }

    let svd = xtx.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&v| v > max_sv * 1e-12).count();
    if rank < p {
        return Err(Error::Precondition(format!(
            "oracle design has rank {rank} < {p}: a stratum is missing from one arm"
        )));
    }
    let beta = xtx
        .cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| Error::Precondition("oracle normal equations are not positive definite".into()))?;

    Ok(OracleFit {
        tau_d: sum1 / data.n1() as f64 - sum0 / data.n0() as f64,
        tau_ps: beta[1],
        coefficients: beta.iter().copied().collect(),
        coefficient_names: names,
        x_bar,
    })
}

/// Share-weighted average of within-stratum arm differences, computed from
/// cell means.
pub fn plug_in_estimate(data: &ExperimentDataset, strata: &[Stratum]) -> Result<f64> {
    check_labels(data, strata)?;
    let n = data.len() as f64;
    let mut total = 0.0;
    for s in [Stratum::A, Stratum::I, Stratum::N] {
        let (mut s1, mut c1, mut s0, mut c0) = (0.0, 0usize, 0.0, 0usize);
        for (r, &l) in data.records().iter().zip(strata) {
            if l != s {
                continue;
            }
            if r.treated {
                s1 += r.log_outcome();
                c1 += 1;
            } else {
                s0 += r.log_outcome();
                c0 += 1;
            }
        }
        if c1 + c0 == 0 {
            continue;
        }
        if c1 == 0 || c0 == 0 {
            return Err(Error::Precondition(format!("stratum {s:?} is missing from one arm")));
        }
        total += (c1 + c0) as f64 / n * (s1 / c1 as f64 - s0 / c0 as f64);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExperimentRecord;
    use crate::models::StrataParams;
    use crate::simulation::{generate, GeneratorSpec, Truth};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn expt2() -> StrataParams {
        StrataParams { pi: [0.162, 0.004, 0.834], mu_a0: 4.616, mu_a1: 4.691, mu_i1: 3.078, sigma: 1.101 }
    }

    #[test]
    fn matches_plug_in_on_random_datasets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for rep in 0..100 {
            let pi_a = rng.random_range(0.05..0.5);
            let pi_i = rng.random_range(0.02..0.3);
            let truth = StrataParams {
                pi: [pi_a, pi_i, 1.0 - pi_a - pi_i],
                mu_a0: rng.random_range(1.0..5.0),
                mu_a1: rng.random_range(1.0..5.0),
                mu_i1: rng.random_range(1.0..5.0),
                sigma: rng.random_range(0.3..2.0),
            };
            let treat_frac = rng.random_range(0.2..0.8);
            let spec = GeneratorSpec { truth: Truth::Strata(truth), n: 400, treat_frac, seed: rep };
            let (d, s) = generate(&spec).unwrap();
            let (Ok(fit), Ok(plug)) = (oracle_estimates(&d, &s), plug_in_estimate(&d, &s)) else {
                continue;
            };
            assert!((fit.tau_ps - plug).abs() < 1e-10, "{} vs {plug}", fit.tau_ps);
            checked += 1;
        }
        assert!(checked >= 95, "{checked}");
    }

    #[test]
    fn single_stratum_collapses_to_diff_in_means() {
        let truth = StrataParams { pi: [1.0, 0.0, 0.0], ..expt2() };
        let (d, s) = generate(&GeneratorSpec { truth: Truth::Strata(truth), n: 500, treat_frac: 0.5, seed: 1 }).unwrap();
        let fit = oracle_estimates(&d, &s).unwrap();
        assert!((fit.tau_ps - fit.tau_d).abs() < 1e-12);
        assert_eq!(fit.coefficient_names.len(), 2);
    }

    #[test]
    fn stratum_missing_from_an_arm_is_singular() {
        let recs = vec![
            ExperimentRecord::new("a", true, 10.0),
            ExperimentRecord::new("b", false, 12.0),
            ExperimentRecord::new("c", true, 3.0),
            ExperimentRecord::new("d", false, 0.0),
        ];
        let d = ExperimentDataset::new(recs, vec![]).unwrap();
        let s = [Stratum::A, Stratum::A, Stratum::I, Stratum::N];
        assert!(matches!(oracle_estimates(&d, &s), Err(Error::Precondition(_))));
        assert!(plug_in_estimate(&d, &s).is_err());
    }

    #[test]
    fn null_effect_estimators_are_centered() {
        let truth = StrataParams { pi: [0.3, 0.0, 0.7], mu_a0: 3.0, mu_a1: 3.0, mu_i1: 3.0, sigma: 1.0 };
        let (mut d_est, mut ps_est) = (Vec::new(), Vec::new());
        for rep in 0..500 {
            let spec = GeneratorSpec { truth: Truth::Strata(truth), n: 2000, treat_frac: 0.5, seed: 1000 + rep };
            let (d, s) = generate(&spec).unwrap();
            let fit = oracle_estimates(&d, &s).unwrap();
            d_est.push(fit.tau_d);
            ps_est.push(fit.tau_ps);
        }
        for est in [&d_est, &ps_est] {
            let se = crate::stats::std_dev(est) / (est.len() as f64).sqrt();
            let m = crate::stats::mean(est);
            assert!(m.abs() < 3.0 * se, "mean {m}, se {se}");
        }
    }
}
