//! Parameter recovery: simulate one experiment from a known truth, fit a
//! model, and check the posterior against the truth.

use serde::{Deserialize, Serialize};

use super::{generate, GeneratorSpec, Truth};
use crate::error::{Error, Result};
use crate::inference::{ParamSummary, SamplerConfig};
use crate::models::{fit, FitReport, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q97_5: f64,
    pub covered: bool,
}

impl RecoveryRow {
    fn new(s: &ParamSummary, truth: f64) -> Self {
        Self {
            name: s.name.clone(),
            truth,
            mean: s.mean,
            sd: s.sd,
            q2_5: s.q2_5,
            q97_5: s.q97_5,
            covered: s.covers(truth),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub model: ModelKind,
    pub n: usize,
    pub seed: u64,
    /// Model parameters with a known true value.
    pub parameters: Vec<RecoveryRow>,
    pub ate_log: RecoveryRow,
    pub ate_dollar: Option<RecoveryRow>,
    pub all_covered: bool,
    pub fit: FitReport,
}

impl RecoveryReport {
    pub fn row(&self, name: &str) -> Option<&RecoveryRow> {
        self.parameters.iter().find(|r| r.name == name)
    }
}

/// True values keyed by the model's parameter names.
fn truth_values(truth: &Truth, model: ModelKind, covariates: &[String]) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    match (truth, model) {
        (Truth::Strata(p), ModelKind::Ps) => {
            for (k, name) in ["pi_a", "pi_i", "pi_n"].iter().enumerate() {
                out.push((name.to_string(), p.pi[k]));
            }
        }
        (Truth::Covariates { .. }, ModelKind::Ps) => {
            // shares are only defined on average over the covariate design
        }
        (Truth::Covariates { params, .. }, ModelKind::PsCov) => {
            let labels: Vec<&str> = std::iter::once("intercept").chain(covariates.iter().map(String::as_str)).collect();
            for (prefix, beta) in [("beta_i", &params.beta_i), ("beta_n", &params.beta_n)] {
                for (label, b) in labels.iter().zip(beta.iter()) {
                    out.push((format!("{prefix}[{label}]"), *b));
                }
            }
        }
        (Truth::Strata(_), ModelKind::PsCov) => {
            return Err(Error::InvalidParameter("ps-cov recovery needs a covariate truth".into()));
        }
        // the benchmark models share no parameters with the strata truth
        _ => return Ok(out),
    }
    let (a0, a1, i1, s) = truth.response();
    out.extend([("mu_a0", a0), ("mu_a1", a1), ("mu_i1", i1), ("sigma", s)].map(|(n, v)| (n.to_string(), v)));
    Ok(out)
}

/// Generates `n` customers (equal allocation) from `truth` with `seed`, fits
/// `model`, and reports 95% interval coverage. The same `(truth, n, seed)`
/// always yields the same dataset, so several models can be compared on
/// matched data.
pub fn recover(
    truth: &Truth,
    n: usize,
    model: ModelKind,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<RecoveryReport> {
    let (data, _) = generate(&GeneratorSpec { truth: truth.clone(), n, treat_frac: 0.5, seed })?;
    let covariates = data.covariate_names().to_vec();
    let truths = truth_values(truth, model, &covariates)?;
    let fitted = fit(model, &data, &covariates, sampler)?;
    let report = fitted.report;

    let mut parameters = Vec::with_capacity(truths.len());
    for (name, value) in &truths {
        let s = report
            .parameters
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| Error::Validation(format!("model {model} has no parameter `{name}`")))?;
        parameters.push(RecoveryRow::new(s, *value));
    }
    let ate_log = RecoveryRow::new(&report.ate_log, truth.ate_log());
    let ate_dollar = report.ate_dollar.as_ref().map(|s| RecoveryRow::new(s, truth.ate_dollar()));
    Ok(RecoveryReport {
        model,
        n,
        seed,
        all_covered: parameters.iter().all(|r| r.covered),
        parameters,
        ate_log,
        ate_dollar,
        fit: report,
    })
}
