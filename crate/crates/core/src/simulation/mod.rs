//! Synthetic experiments with known strata, frequentist oracle estimators,
//! and the replication studies built on them.

mod harness;
mod oracle;
mod prop2;
mod recover;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use harness::{
    proportion_bias_study, replicate_fig2, replicate_fig3, variance_gap_study, write_fig2_csv, write_fig3_csv,
    BatchCheck, Fig2Row, Fig3Row, GridConfig, ProportionBias, VarianceGapReport,
};
pub use oracle::{oracle_estimates, plug_in_estimate, OracleFit};
pub use prop2::{prop2_monte_carlo, Prop2Config, Prop2Customer, Prop2Moments, Prop2Result};
pub use recover::{recover, RecoveryReport, RecoveryRow};

use crate::data::{ExperimentDataset, ExperimentRecord};
use crate::error::{Error, Result};
use crate::models::{CovStrataParams, StrataParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stratum {
    A,
    I,
    N,
}

/// Joint distribution of binary covariates as a list of cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDesign {
    pub names: Vec<String>,
    pub cells: Vec<(Vec<u8>, f64)>,
}

impl CovariateDesign {
    /// Independent flags with the given marginal probabilities.
    pub fn independent(names: Vec<String>, probs: &[f64]) -> Result<Self> {
        if names.len() != probs.len() {
            return Err(Error::InvalidParameter("one probability per covariate required".into()));
        }
        let k = probs.len();
        let cells = (0..1usize << k)
            .map(|mask| {
                let flags: Vec<u8> = (0..k).map(|j| ((mask >> j) & 1) as u8).collect();
                let p = flags.iter().zip(probs).map(|(&f, &p)| if f == 1 { p } else { 1.0 - p }).product();
                (flags, p)
            })
            .collect();
        let design = Self { names, cells };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.cells.iter().map(|c| c.1).sum();
        if self.cells.iter().any(|(f, p)| f.len() != self.names.len() || !(0.0..=1.0).contains(p))
            || (total - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidParameter("covariate design must be a distribution over flag vectors".into()));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (flags, p) in &self.cells {
            acc += p;
            if u < acc {
                return flags.clone();
            }
        }
        self.cells.last().map(|c| c.0.clone()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Strata(StrataParams),
    Covariates { params: CovStrataParams, design: CovariateDesign },
}

impl Truth {
    pub fn validate(&self) -> Result<()> {
        match self {
            Truth::Strata(p) => p.validate(),
            Truth::Covariates { params, design } => {
                params.validate()?;
                design.validate()?;
                if params.beta_i.len() != design.names.len() + 1 {
                    return Err(Error::InvalidParameter("coefficient length must be 1 + number of covariates".into()));
                }
                Ok(())
            }
        }
    }

    /// Cell means and sigma shared by both truth kinds.
    fn response(&self) -> (f64, f64, f64, f64) {
        match self {
            Truth::Strata(p) => (p.mu_a0, p.mu_a1, p.mu_i1, p.sigma),
            Truth::Covariates { params: p, .. } => (p.mu_a0, p.mu_a1, p.mu_i1, p.sigma),
        }
    }

    /// Population strata shares (averaged over the covariate design).
    pub fn mean_shares(&self) -> [f64; 3] {
        match self {
            Truth::Strata(p) => p.pi,
            Truth::Covariates { params, design } => {
                let mut avg = [0.0; 3];
                for (flags, w) in &design.cells {
                    let x: Vec<f64> = flags.iter().map(|&f| f64::from(f)).collect();
                    let p = params.strata_probs(&x).expect("validated dimensions");
                    for k in 0..3 {
                        avg[k] += w * p[k];
                    }
                }
                avg
            }
        }
    }

    pub fn ate_log(&self) -> f64 {
        let [pa, pi, _] = self.mean_shares();
        let (a0, a1, i1, _) = self.response();
        crate::models::ate_log(pa, pi, a0, a1, i1)
    }

    pub fn ate_dollar(&self) -> f64 {
        let [pa, pi, _] = self.mean_shares();
        let (a0, a1, i1, s) = self.response();
        crate::models::ate_dollar(pa, pi, a0, a1, i1, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub truth: Truth,
    pub n: usize,
    pub treat_frac: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.treat_frac > 0.0 && self.treat_frac < 1.0) {
            return Err(Error::InvalidParameter(format!("treat_frac {} outside (0, 1)", self.treat_frac)));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter("need at least 2 customers".into()));
        }
        self.truth.validate()
    }
}

fn draw_stratum(p: &[f64; 3], rng: &mut ChaCha8Rng) -> Stratum {
    let u: f64 = rng.random();
    if u < p[0] {
        Stratum::A
    } else if u < p[0] + p[1] {
        Stratum::I
    } else {
        Stratum::N
    }
}

/// Positive log outcome: normal draws are redrawn until above zero so that
/// every purchaser has `y > 0`.
fn draw_positive(cell: &Normal<f64>, rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let l = cell.sample(rng);
        if l > 0.0 {
            return l;
        }
    }
}

/// Draws one synthetic experiment and the true stratum of every customer.
pub fn generate(spec: &GeneratorSpec) -> Result<(ExperimentDataset, Vec<Stratum>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (a0, a1, i1, sigma) = spec.truth.response();
    let cell = |mu: f64| Normal::new(mu, sigma).map_err(|e| Error::InvalidParameter(e.to_string()));
    let (cell_a0, cell_a1, cell_i1) = (cell(a0)?, cell(a1)?, cell(i1)?);

    let mut records = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    let (names, design) = match &spec.truth {
        Truth::Strata(_) => (Vec::new(), None),
        Truth::Covariates { params, design } => (design.names.clone(), Some((params, design))),
    };
    // shares per design cell, computed once
    let cell_shares: Vec<[f64; 3]> = match design {
        Some((params, d)) => d
            .cells
            .iter()
            .map(|(f, _)| params.strata_probs(&f.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    for i in 0..spec.n {
        let (flags, shares) = match (&spec.truth, design) {
            (Truth::Strata(p), _) => (Vec::new(), p.pi),
            (_, Some((_, d))) => {
                let flags = d.draw(&mut rng);
                let idx = d.cells.iter().position(|c| c.0 == flags).expect("drawn from the design");
                (flags, cell_shares[idx])
            }
            _ => unreachable!("covariate truth always carries a design"),
        };
        let stratum = draw_stratum(&shares, &mut rng);
        let treated = rng.random_bool(spec.treat_frac);
        let ell = match (stratum, treated) {
            (Stratum::A, false) => draw_positive(&cell_a0, &mut rng),
            (Stratum::A, true) => draw_positive(&cell_a1, &mut rng),
            (Stratum::I, true) => draw_positive(&cell_i1, &mut rng),
            _ => 0.0,
        };
        records.push(ExperimentRecord::new(format!("c{i}"), treated, ell.exp_m1()).with_covariates(flags));
        labels.push(stratum);
    }
    Ok((ExperimentDataset::new(records, names)?, labels))
}

/// Independent seed for replication `rep` of a study seeded with `seed`.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    // SplitMix64 finalizer over the pair
    let mut z = seed ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_a1() -> StrataParams {
        StrataParams { pi: [0.2, 0.01, 0.79], mu_a0: 4.6, mu_a1: 4.7, mu_i1: 3.1, sigma: 1.1 }
    }

    fn spec(truth: Truth, n: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec { truth, n, treat_frac: 0.5, seed }
    }

    #[test]
    fn never_buyers_only() {
        let t = StrataParams { pi: [0.0, 0.0, 1.0], ..table_a1() };
        let (d, labels) = generate(&spec(Truth::Strata(t), 500, 1)).unwrap();
        assert!(d.records().iter().all(|r| r.y == 0.0));
        assert!(labels.iter().all(|&s| s == Stratum::N));
    }

    #[test]
    fn control_incidence_matches_truth() {
        let (d, _) = generate(&spec(Truth::Strata(table_a1()), 140_000, 2)).unwrap();
        let n0 = d.n0() as f64;
        let inc = d.arm(false).filter(|r| r.purchased()).count() as f64 / n0;
        let se = (0.2 * 0.8 / n0).sqrt();
        assert!((inc - 0.2).abs() < 3.0 * se, "{inc}");
    }

    #[test]
    fn strata_shares_and_cell_means() {
        let t = table_a1();
        let (d, labels) = generate(&spec(Truth::Strata(t), 140_000, 3)).unwrap();
        let n = labels.len() as f64;
        for (k, s) in [Stratum::A, Stratum::I, Stratum::N].iter().enumerate() {
            let share = labels.iter().filter(|&&l| l == *s).count() as f64 / n;
            let se = (t.pi[k] * (1.0 - t.pi[k]) / n).sqrt();
            assert!((share - t.pi[k]).abs() < 3.0 * se, "{s:?}: {share}");
        }
        for (s, treated, mu) in [(Stratum::A, false, t.mu_a0), (Stratum::A, true, t.mu_a1), (Stratum::I, true, t.mu_i1)] {
            let cell: Vec<f64> = d
                .records()
                .iter()
                .zip(&labels)
                .filter(|(r, l)| **l == s && r.treated == treated)
                .map(|(r, _)| r.log_outcome())
                .collect();
            let se = t.sigma / (cell.len() as f64).sqrt();
            let m = crate::stats::mean(&cell);
            assert!((m - mu).abs() < 3.0 * se, "{s:?}/{treated}: {m}");
        }
    }

    #[test]
    fn seed_determinism() {
        let s = spec(Truth::Strata(table_a1()), 2000, 9);
        let (a, la) = generate(&s).unwrap();
        let (b, lb) = generate(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn covariate_truth_population_ate() {
        let params = CovStrataParams {
            beta_i: vec![-3.0, 1.7, 0.0],
            beta_n: vec![1.0, 1.6, 0.3],
            mu_a0: 4.6,
            mu_a1: 4.7,
            mu_i1: 3.5,
            sigma: 1.0,
        };
        let design = CovariateDesign::independent(vec!["r".into(), "q".into()], &[0.49, 0.58]).unwrap();
        let truth = Truth::Covariates { params, design };
        assert!((truth.ate_log() - 0.063).abs() < 0.0005, "{}", truth.ate_log());
        assert!((truth.ate_dollar() - 3.291).abs() < 0.02, "{}", truth.ate_dollar());
        let (d, _) = generate(&spec(truth, 1000, 1)).unwrap();
        assert_eq!(d.covariate_names().len(), 2);
    }

    #[test]
    fn replication_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|r| replication_seed(7, r)).collect();
        assert_eq!(s.len(), 1000);
    }
}
