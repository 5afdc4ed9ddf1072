use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{dim_posterior, ps_posterior, psc_posterior, zi_posterior};
use crate::data::ExperimentDataset;
use crate::error::{Error, Result};
use crate::inference::{
    convergence, sample, summarize_draws, Convergence, ParamSummary, PosteriorDraws, SamplerConfig, SamplerStats,
    TargetDensity,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Dim,
    Zi,
    ZiPos,
    Ps,
    PsCov,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [Self::Dim, Self::Zi, Self::ZiPos, Self::Ps, Self::PsCov];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dim => "dim",
            Self::Zi => "zi",
            Self::ZiPos => "zi-pos",
            Self::Ps => "ps",
            Self::PsCov => "ps-cov",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown model `{s}` (expected dim, zi, zi-pos, ps or ps-cov)")))
    }
}

/// Builds the posterior for `kind`.
pub fn posterior(kind: ModelKind, data: &ExperimentDataset, covariates: &[String]) -> Result<Box<dyn TargetDensity>> {
    Ok(match kind {
        ModelKind::Dim => Box::new(dim_posterior(data)?),
        ModelKind::Zi => Box::new(zi_posterior(data, false)?),
        ModelKind::ZiPos => Box::new(zi_posterior(data, true)?),
        ModelKind::Ps => Box::new(ps_posterior(data)?),
        ModelKind::PsCov => {
            if covariates.is_empty() {
                return Err(Error::InvalidParameter("ps-cov needs at least one covariate column".into()));
            }
            Box::new(psc_posterior(data, covariates)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub model: ModelKind,
    pub ate_log: ParamSummary,
    /// `100 (1 - sd_model^2 / sd_baseline^2)`
    pub var_reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub n1: usize,
    pub n0: usize,
    pub parameters: Vec<ParamSummary>,
    pub ate_log: ParamSummary,
    pub ate_dollar: Option<ParamSummary>,
    pub convergence: Vec<Convergence>,
    pub sampler: SamplerStats,
    pub warnings: Vec<String>,
    pub baseline: Option<BaselineComparison>,
}

pub struct Fit {
    pub draws: PosteriorDraws,
    pub report: FitReport,
}

fn find(summaries: &[ParamSummary], name: &str) -> Option<ParamSummary> {
    summaries.iter().find(|s| s.name == name).cloned()
}

pub fn fit(
    kind: ModelKind,
    data: &ExperimentDataset,
    covariates: &[String],
    config: &SamplerConfig,
) -> Result<Fit> {
    let target = posterior(kind, data, covariates)?;
    let draws = sample(target.as_ref(), config)?;
    let summaries = summarize_draws(&draws);
    let conv = if draws.chains() >= 2 && draws.iters() >= 100 { convergence(&draws)? } else { Vec::new() };

    let mut warnings = draws.stats.warnings.clone();
    if conv.is_empty() {
        warnings.push("convergence diagnostics skipped: need 2+ chains and 100+ draws".into());
    }
    for c in &conv {
        if c.split_rhat > 1.01 {
            warnings.push(format!("{}: split R-hat {:.3} exceeds 1.01", c.name, c.split_rhat));
        }
    }
    let ate_log = find(&summaries, "ate_log").expect("every model derives ate_log");
    let report = FitReport {
        model: kind,
        n1: data.n1(),
        n0: data.n0(),
        parameters: summaries.iter().filter(|s| draws.names.contains(&s.name)).cloned().collect(),
        ate_dollar: find(&summaries, "ate_dollar"),
        ate_log,
        convergence: conv,
        sampler: draws.stats.clone(),
        warnings,
        baseline: None,
    };
    Ok(Fit { draws, report })
}

/// Fits `kind` and the difference-in-means baseline on the same data and
/// reports the reduction in posterior variance of the ATE.
pub fn fit_with_baseline(
    kind: ModelKind,
    data: &ExperimentDataset,
    covariates: &[String],
    config: &SamplerConfig,
) -> Result<(Fit, Fit)> {
    let mut main = fit(kind, data, covariates, config)?;
    let base = fit(ModelKind::Dim, data, &[], config)?;
    let sd_m = main.report.ate_log.sd;
    let sd_b = base.report.ate_log.sd;
    main.report.baseline = Some(BaselineComparison {
        model: ModelKind::Dim,
        ate_log: base.report.ate_log.clone(),
        var_reduction_pct: 100.0 * (1.0 - sd_m * sd_m / (sd_b * sd_b)),
    });
    Ok((main, base))
}
