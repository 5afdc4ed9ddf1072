use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::quantile_sorted;

/// Per-chain sampler bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub step_size: Vec<f64>,
    pub divergences: Vec<usize>,
    pub mean_accept: Vec<f64>,
    pub leapfrog_steps: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Post-warmup draws on the constrained scale, `chains x iters x params`,
/// plus derived quantities with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub derived_names: Vec<String>,
    pub draws: Vec<Vec<Vec<f64>>>,
    pub derived: Vec<Vec<Vec<f64>>>,
    pub stats: SamplerStats,
}

impl PosteriorDraws {
    pub fn chains(&self) -> usize {
        self.draws.len()
    }

    pub fn iters(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    /// All labels: parameters first, then derived quantities.
    pub fn all_names(&self) -> Vec<String> {
        self.names.iter().chain(&self.derived_names).cloned().collect()
    }

    /// Per-chain series for a parameter or derived quantity.
    pub fn series(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        if let Some(j) = self.names.iter().position(|n| n == name) {
            return Some(self.draws.iter().map(|c| c.iter().map(|d| d[j]).collect()).collect());
        }
        let j = self.derived_names.iter().position(|n| n == name)?;
        Some(self.derived.iter().map(|c| c.iter().map(|d| d[j]).collect()).collect())
    }

    /// Draws of one quantity pooled across chains.
    pub fn pooled(&self, name: &str) -> Option<Vec<f64>> {
        self.series(name).map(|s| s.into_iter().flatten().collect())
    }

    pub fn divergences(&self) -> usize {
        self.stats.divergences.iter().sum()
    }

    /// One row per draw: `chain,draw,<params...>,<derived...>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.all_names());
        wtr.write_record(&header)?;
        for (c, (chain, dchain)) in self.draws.iter().zip(&self.derived).enumerate() {
            for (i, (row, drow)) in chain.iter().zip(dchain).enumerate() {
                let mut rec = vec![c.to_string(), i.to_string()];
                rec.extend(row.iter().chain(drow).map(|v| format!("{v}")));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q97_5: f64,
}

impl ParamSummary {
    pub fn from_values(name: &str, values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            name: name.to_string(),
            mean,
            sd,
            q2_5: quantile_sorted(&sorted, 0.025),
            q97_5: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.q2_5 <= truth && truth <= self.q97_5
    }
}

/// Pooled mean, sd and central 95% interval for every parameter and derived quantity.
pub fn summarize_draws(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    draws
        .all_names()
        .iter()
        .filter_map(|name| draws.pooled(name).map(|v| ParamSummary::from_values(name, &v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(values: Vec<f64>) -> PosteriorDraws {
        PosteriorDraws {
            names: vec!["x".into()],
            derived_names: vec![],
            draws: vec![values.into_iter().map(|v| vec![v]).collect()],
            derived: vec![vec![]],
            stats: SamplerStats::default(),
        }
    }

    #[test]
    fn constant_draws() {
        let s = &summarize_draws(&single(vec![2.5; 50]))[0];
        assert_eq!((s.mean, s.sd, s.q2_5, s.q97_5), (2.5, 0.0, 2.5, 2.5));
    }

    #[test]
    fn grid_mean() {
        let s = &summarize_draws(&single((1..=100).map(f64::from).collect()))[0];
        assert!((s.mean - 50.5).abs() < 1e-12);
        assert!(s.covers(50.0));
        assert!(!s.covers(0.5));
    }

    #[test]
    fn csv_has_one_row_per_draw() {
        let mut d = single(vec![1.0, 2.0, 3.0]);
        d.derived_names = vec!["y".into()];
        d.derived = vec![vec![vec![10.0], vec![20.0], vec![30.0]]];
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "chain,draw,x,y");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "0,2,3,30");
    }
}
