//! Split R-hat and bulk effective sample size.

use serde::{Deserialize, Serialize};

use super::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::stats::normal_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub name: String,
    /// NaN when every chain is constant.
    pub split_rhat: f64,
    pub ess_bulk: f64,
    /// ESS of the raw draws, used for the Monte Carlo error of the mean.
    pub ess_mean: f64,
    pub mcse_mean: f64,
}

const MIN_DRAWS: usize = 100;

pub fn convergence(draws: &PosteriorDraws) -> Result<Vec<Convergence>> {
    if draws.chains() < 2 {
        return Err(Error::Precondition(format!("need at least 2 chains, got {}", draws.chains())));
    }
    if draws.iters() < MIN_DRAWS {
        return Err(Error::Precondition(format!(
            "need at least {MIN_DRAWS} draws per chain, got {}",
            draws.iters()
        )));
    }
    Ok(draws
        .all_names()
        .into_iter()
        .map(|name| {
            let chains = draws.series(&name).expect("name comes from the draws");
            let ess_mean = ess(&split(&chains));
            let sd = pooled_sd(&chains);
            Convergence {
                split_rhat: split_rhat(&chains),
                ess_bulk: ess_bulk(&chains),
                mcse_mean: sd / ess_mean.sqrt(),
                ess_mean,
                name,
            }
        })
        .collect())
}

fn pooled_sd(chains: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    crate::stats::std_dev(&all)
}

/// Halves every chain, dropping the middle draw of odd-length chains.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..n].to_vec()])
        .collect()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let b_over_n = mean_var(&means).1;
    if w <= 0.0 {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Potential scale reduction computed on half-chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    rhat(&split(chains))
}

/// Multi-chain ESS with Geyer's initial monotone sequence.
fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { mean_var(&stats.iter().map(|s| s.0).collect::<Vec<_>>()).1 } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let centered: Vec<Vec<f64>> = chains
        .iter()
        .zip(&stats)
        .map(|(c, (mu, _))| c.iter().map(|v| v - mu).collect())
        .collect();
    let rho = |lag: usize| -> f64 {
        let acov = centered
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / nf)
            .sum::<f64>()
            / m as f64;
        1.0 - (w - acov) / var_plus
    };

    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / (m as f64 * nf).log10());
    m as f64 * nf / tau
}

/// Bulk ESS: rank-normalize the pooled draws, split the chains, then apply
/// the multi-chain ESS estimator.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    let sizes: Vec<usize> = chains.iter().map(Vec::len).collect();
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let total = pooled.len() as f64;
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let z: Vec<f64> = ranks.iter().map(|r| normal_quantile((r - 0.375) / (total + 0.25))).collect();
    let mut offset = 0;
    let normed: Vec<Vec<f64>> = sizes
        .iter()
        .map(|&s| {
            let c = z[offset..offset + s].to_vec();
            offset += s;
            c
        })
        .collect();
    ess(&split(&normed))
}
