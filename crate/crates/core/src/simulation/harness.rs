//! Replication studies comparing the difference-in-means and known-strata
//! estimators across sample sizes and allocations.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, oracle_estimates, replication_seed, GeneratorSpec, Truth};
use crate::diagnostics::{diagnose, estimate_strata_proportions, variance_gain};
use crate::error::{Error, Result};
use crate::models::StrataParams;
use crate::stats::{mean, std_dev, variance};

const MC_BATCHES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_grid: Vec<usize>,
    pub frac_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_grid: vec![2_000, 5_000, 10_000, 20_000], frac_grid: vec![0.1, 0.3, 0.5], reps: 500, seed: 1 }
    }
}

impl GridConfig {
    fn validate(&self) -> Result<()> {
        if self.reps < 100 {
            return Err(Error::InvalidParameter(format!("need at least 100 replications, got {}", self.reps)));
        }
        if self.n_grid.is_empty() || self.frac_grid.is_empty() {
            return Err(Error::InvalidParameter("empty simulation grid".into()));
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(usize, f64, u64)> {
        let mut out = Vec::new();
        for &n in &self.n_grid {
            for &f in &self.frac_grid {
                out.push((n, f, replication_seed(self.seed, 1_000_000 + out.len() as u64)));
            }
        }
        out
    }
}

/// One replication of the oracle comparison.
#[derive(Debug, Clone, Copy)]
struct Rep {
    tau_d: f64,
    tau_ps: f64,
    delta_min: f64,
    predicted_lb: f64,
}

/// Runs `reps` replications; singular replications are dropped and counted.
fn run_reps(truth: &StrataParams, n: usize, treat_frac: f64, reps: usize, seed: u64) -> Result<(Vec<Rep>, usize)> {
    let out: Vec<Result<Option<Rep>>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let spec = GeneratorSpec { truth: Truth::Strata(*truth), n, treat_frac, seed: replication_seed(seed, r) };
            let (data, strata) = generate(&spec)?;
            let fit = match oracle_estimates(&data, &strata) {
                Ok(f) => f,
                Err(Error::Precondition(_) | Error::Validation(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let diag = diagnose(&data)?;
            Ok(Some(Rep {
                tau_d: fit.tau_d,
                tau_ps: fit.tau_ps,
                delta_min: diag.delta_min,
                predicted_lb: diag.predicted_var_reduction_lb,
            }))
        })
        .collect();
    let mut kept = Vec::with_capacity(reps);
    for r in out {
        if let Some(rep) = r? {
            kept.push(rep);
        }
    }
    let singular = reps - kept.len();
    if singular > 0 {
        log::warn!("{singular} of {reps} replications had a singular oracle design and were dropped");
    }
    if kept.len() < 2 * MC_BATCHES {
        return Err(Error::Precondition(format!("only {} usable replications", kept.len())));
    }
    Ok((kept, singular))
}

/// Contiguous batches of `size` elements (the remainder is dropped).
fn batches<T: Copy>(xs: &[T], size: usize) -> impl Iterator<Item = &[T]> {
    xs.chunks_exact(size)
}

/// Standard error of `stat` over all reps, estimated from `MC_BATCHES`
/// equal batches.
fn batch_se(reps: &[Rep], stat: impl Fn(&[Rep]) -> f64) -> f64 {
    let size = reps.len() / MC_BATCHES;
    let vals: Vec<f64> = batches(reps, size).take(MC_BATCHES).map(stat).collect();
    std_dev(&vals) / (vals.len() as f64).sqrt()
}

fn var_of(reps: &[Rep], f: impl Fn(&Rep) -> f64) -> f64 {
    variance(&reps.iter().map(f).collect::<Vec<_>>())
}

fn gap(reps: &[Rep]) -> f64 {
    var_of(reps, |r| r.tau_d) - var_of(reps, |r| r.tau_ps)
}

fn reduction(reps: &[Rep]) -> f64 {
    let vd = var_of(reps, |r| r.tau_d);
    (vd - var_of(reps, |r| r.tau_ps)) / vd
}

/// One row per grid cell and estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row {
    pub n: usize,
    pub treat_frac: f64,
    pub estimator: String,
    pub reps_used: usize,
    pub singular: usize,
    pub mean: f64,
    pub mc_se_mean: f64,
    pub variance: f64,
    pub mc_se_variance: f64,
    pub true_ate: f64,
}

impl Fig2Row {
    /// Estimator mean within `k` Monte Carlo standard errors of the truth.
    pub fn unbiased_within(&self, k: f64) -> bool {
        (self.mean - self.true_ate).abs() <= k * self.mc_se_mean
    }
}

/// Sampling distribution of both estimators on every grid cell.
pub fn replicate_fig2(truth: &StrataParams, grid: &GridConfig) -> Result<Vec<Fig2Row>> {
    truth.validate()?;
    grid.validate()?;
    let mut rows = Vec::new();
    for (n, f, seed) in grid.cells() {
        let (reps, singular) = run_reps(truth, n, f, grid.reps, seed)?;
        for (name, get) in [("diff_in_means", (|r: &Rep| r.tau_d) as fn(&Rep) -> f64), ("post_stratified", |r| r.tau_ps)]
        {
            let vals: Vec<f64> = reps.iter().map(get).collect();
            rows.push(Fig2Row {
                n,
                treat_frac: f,
                estimator: name.into(),
                reps_used: reps.len(),
                singular,
                mean: mean(&vals),
                mc_se_mean: std_dev(&vals) / (vals.len() as f64).sqrt(),
                variance: variance(&vals),
                mc_se_variance: batch_se(&reps, |b| var_of(b, get)),
                true_ate: truth.ate_log(),
            });
        }
    }
    Ok(rows)
}

/// Realized relative variance reduction per grid cell against the
/// prediction from a single pilot replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub n: usize,
    pub treat_frac: f64,
    pub reps_used: usize,
    pub var_d: f64,
    pub var_ps: f64,
    pub realized_reduction: f64,
    pub mc_se_reduction: f64,
    /// `delta_min / var_d` estimated on the pilot replication.
    pub predicted_lower_bound: f64,
    /// Share of 10-replication batches whose realized reduction is at
    /// least the predicted bound.
    pub bound_hold_rate: f64,
}

pub fn replicate_fig3(truth: &StrataParams, grid: &GridConfig) -> Result<Vec<Fig3Row>> {
    truth.validate()?;
    grid.validate()?;
    let mut rows = Vec::new();
    for (n, f, seed) in grid.cells() {
        let (reps, _) = run_reps(truth, n, f, grid.reps, seed)?;
        let pilot = reps[0].predicted_lb;
        let checks: Vec<bool> = batches(&reps, 10).map(|b| reduction(b) >= pilot).collect();
        rows.push(Fig3Row {
            n,
            treat_frac: f,
            reps_used: reps.len(),
            var_d: var_of(&reps, |r| r.tau_d),
            var_ps: var_of(&reps, |r| r.tau_ps),
            realized_reduction: reduction(&reps),
            mc_se_reduction: batch_se(&reps, reduction),
            predicted_lower_bound: pilot,
            bound_hold_rate: checks.iter().filter(|&&c| c).count() as f64 / checks.len() as f64,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchCheck {
    pub realized_gap: f64,
    pub mean_delta_min: f64,
    pub holds: bool,
}

/// Realized variance gap between the two estimators against the closed
/// form and the conservative per-replication bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceGapReport {
    pub n: usize,
    pub treat_frac: f64,
    pub reps_used: usize,
    pub singular: usize,
    pub var_d: f64,
    pub var_ps: f64,
    pub realized_gap: f64,
    /// Batch-means standard error of the realized gap.
    pub gap_mc_se: f64,
    pub closed_form_gap: f64,
    /// `(realized - closed form) / gap_mc_se`
    pub z: f64,
    pub batch_size: usize,
    pub batches: Vec<BatchCheck>,
    pub bound_hold_rate: f64,
}

pub fn variance_gap_study(
    truth: &StrataParams,
    n: usize,
    treat_frac: f64,
    reps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<VarianceGapReport> {
    truth.validate()?;
    if batch_size < 2 {
        return Err(Error::InvalidParameter("batch size must be at least 2".into()));
    }
    let (kept, singular) = run_reps(truth, n, treat_frac, reps, seed)?;
    let realized_gap = gap(&kept);
    let gap_mc_se = batch_se(&kept, gap);
    let closed_form_gap = variance_gain(truth.pi[0], truth.pi[1], truth.mu_a0, truth.mu_a1, truth.mu_i1, n as f64)?;
    let checks: Vec<BatchCheck> = batches(&kept, batch_size)
        .map(|b| {
            let realized_gap = gap(b);
            let mean_delta_min = mean(&b.iter().map(|r| r.delta_min).collect::<Vec<_>>());
            BatchCheck { realized_gap, mean_delta_min, holds: mean_delta_min <= realized_gap }
        })
        .collect();
    let hold_rate = checks.iter().filter(|c| c.holds).count() as f64 / checks.len().max(1) as f64;
    Ok(VarianceGapReport {
        n,
        treat_frac,
        reps_used: kept.len(),
        singular,
        var_d: var_of(&kept, |r| r.tau_d),
        var_ps: var_of(&kept, |r| r.tau_ps),
        realized_gap,
        gap_mc_se,
        closed_form_gap,
        z: (realized_gap - closed_form_gap) / gap_mc_se,
        batch_size,
        batches: checks,
        bound_hold_rate: hold_rate,
    })
}

/// Bias of the incidence-based strata share estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionBias {
    pub n: usize,
    pub reps: usize,
    pub truth: [f64; 3],
    pub mean_estimate: [f64; 3],
    /// `|mean estimate - truth|` per component.
    pub abs_bias: [f64; 3],
    pub mc_se: [f64; 3],
    /// Mean of `|estimate - truth|` per component.
    pub mean_abs_error: [f64; 3],
}

pub fn proportion_bias_study(truth: &StrataParams, n: usize, reps: usize, seed: u64) -> Result<ProportionBias> {
    truth.validate()?;
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least 2 replications".into()));
    }
    let est: Vec<[f64; 3]> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let spec =
                GeneratorSpec { truth: Truth::Strata(*truth), n, treat_frac: 0.5, seed: replication_seed(seed, r) };
            let (data, _) = generate(&spec)?;
            let p = estimate_strata_proportions(&data)?;
            Ok([p.pi_a, p.pi_i, p.pi_n])
        })
        .collect::<Result<_>>()?;
    let mut out = ProportionBias {
        n,
        reps,
        truth: truth.pi,
        mean_estimate: [0.0; 3],
        abs_bias: [0.0; 3],
        mc_se: [0.0; 3],
        mean_abs_error: [0.0; 3],
    };
    for k in 0..3 {
        let v: Vec<f64> = est.iter().map(|e| e[k]).collect();
        out.mean_estimate[k] = mean(&v);
        out.abs_bias[k] = (out.mean_estimate[k] - truth.pi[k]).abs();
        out.mc_se[k] = std_dev(&v) / (reps as f64).sqrt();
        out.mean_abs_error[k] = mean(&v.iter().map(|x| (x - truth.pi[k]).abs()).collect::<Vec<_>>());
    }
    Ok(out)
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig2_csv<W: Write>(rows: &[Fig2Row], writer: W) -> Result<()> {
    write_rows(rows, writer)
}

pub fn write_fig3_csv<W: Write>(rows: &[Fig3Row], writer: W) -> Result<()> {
    write_rows(rows, writer)
}
