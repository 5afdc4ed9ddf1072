//! Pre-randomization covariates built from a purchase/exposure panel.
//!
//! Responsiveness `Q` is the purchase rate in exposed periods minus the rate
//! in unexposed periods. Recency `R` counts periods back from the end of the
//! window: `R = T + 1 - t_last`, so a purchase in the latest period gives
//! `R = 1`. Both are binarized for the covariate model.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{ExperimentDataset, ExperimentRecord, PanelHistory, PanelRecord};
use crate::error::{Error, Result};

pub const DEFAULT_RECENCY_THRESHOLD: usize = 5;
pub const NO_RECENT_PURCHASE: &str = "no_recent_purchase";
pub const LOW_RESPONSIVENESS: &str = "low_responsiveness";

/// `None` when the customer was never exposed or always exposed.
pub fn responsiveness(history: &[PanelRecord]) -> Result<Option<f64>> {
    if history.is_empty() {
        return Err(Error::Precondition("responsiveness needs a non-empty history".into()));
    }
    let (mut buy_exp, mut n_exp, mut buy_unexp, mut n_unexp) = (0usize, 0usize, 0usize, 0usize);
    for r in history {
        if r.exposed {
            n_exp += 1;
            buy_exp += usize::from(r.purchased);
        } else {
            n_unexp += 1;
            buy_unexp += usize::from(r.purchased);
        }
    }
    if n_exp == 0 || n_unexp == 0 {
        return Ok(None);
    }
    Ok(Some(buy_exp as f64 / n_exp as f64 - buy_unexp as f64 / n_unexp as f64))
}

/// Periods since the last purchase, counting the latest period as 1.
/// `history` must be ordered by period; `None` means no purchase at all.
pub fn recency(history: &[PanelRecord]) -> Option<usize> {
    let t = history.len();
    history.iter().rposition(|r| r.purchased).map(|last| t - last)
}

fn check_prob(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("purchase probability {pi} outside (0, 1)")))
    }
}

/// `(1 - pi)^T` and `1 - (1 - pi)^T`, the latter without cancellation.
fn survival(pi: f64, periods: usize) -> (f64, f64) {
    let log_s = periods as f64 * (-pi).ln_1p();
    (log_s.exp(), -log_s.exp_m1())
}

/// Recency distribution of a customer who purchases each period with
/// probability `pi`, conditional on at least one purchase in `T` periods.
pub fn recency_pmf(k: usize, pi: f64, periods: usize) -> Result<f64> {
    check_prob(pi)?;
    if k == 0 || k > periods {
        return Err(Error::InvalidParameter(format!("recency {k} outside 1..={periods}")));
    }
    let (_, norm) = survival(pi, periods);
    Ok(pi * ((k - 1) as f64 * (-pi).ln_1p()).exp() / norm)
}

/// Mean of [`recency_pmf`]: `1/pi - T (1 - pi)^T / (1 - (1 - pi)^T)`.
pub fn expected_recency(pi: f64, periods: usize) -> Result<f64> {
    check_prob(pi)?;
    if periods == 0 {
        return Err(Error::InvalidParameter("need at least one period".into()));
    }
    let (s, norm) = survival(pi, periods);
    Ok(1.0 / pi - periods as f64 * s / norm)
}

/// `T / ((1 - pi)^T - 1) + 1/pi + T - 1`, the published closed form.
///
/// It is exactly `expected_recency(pi, T) - 1`: the mean of a recency that
/// counts the latest period as 0 rather than 1. Kept for comparison only.
pub fn expected_recency_zero_based(pi: f64, periods: usize) -> Result<f64> {
    check_prob(pi)?;
    let t = periods as f64;
    let (_, norm) = survival(pi, periods);
    Ok(-t / norm + 1.0 / pi + t - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerCovariates {
    pub q: Option<f64>,
    pub r: Option<usize>,
    pub no_recent_purchase: bool,
    pub low_responsiveness: bool,
}

impl CustomerCovariates {
    pub fn from_history(history: &[PanelRecord], r_threshold: usize) -> Result<Self> {
        let q = responsiveness(history)?;
        let r = recency(history);
        Ok(Self {
            q,
            r,
            no_recent_purchase: r.map_or(true, |r| r > r_threshold),
            low_responsiveness: q.map_or(true, |q| q < 0.0),
        })
    }

    /// Flags in the order of [`covariate_names`].
    pub fn flags(&self) -> Vec<u8> {
        vec![u8::from(self.no_recent_purchase), u8::from(self.low_responsiveness)]
    }
}

pub fn covariate_names() -> Vec<String> {
    vec![NO_RECENT_PURCHASE.to_string(), LOW_RESPONSIVENESS.to_string()]
}

/// Covariates for every customer in the panel, keyed by customer id.
pub fn build_covariates(panel: &PanelHistory, r_threshold: usize) -> Result<BTreeMap<String, CustomerCovariates>> {
    if panel.is_empty() {
        return Err(Error::Precondition("panel has no customers".into()));
    }
    panel
        .iter()
        .map(|(id, h)| Ok((id.to_string(), CustomerCovariates::from_history(h, r_threshold)?)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JoinReport {
    pub matched: usize,
    /// Experiment customers with no panel history; they are left out of the
    /// joined dataset.
    pub missing_from_panel: Vec<String>,
    /// Panel customers that are not in the experiment.
    pub panel_only: usize,
}

/// Attaches the two binary covariates to every experiment record that has
/// a panel history. Existing covariate columns are replaced.
pub fn join_covariates(
    data: &ExperimentDataset,
    covariates: &BTreeMap<String, CustomerCovariates>,
) -> Result<(ExperimentDataset, JoinReport)> {
    let mut report = JoinReport::default();
    let mut records = Vec::with_capacity(data.len());
    for r in data.records() {
        match covariates.get(&r.customer_id) {
            Some(c) => {
                records.push(ExperimentRecord::new(r.customer_id.clone(), r.treated, r.y).with_covariates(c.flags()));
                report.matched += 1;
            }
            None => report.missing_from_panel.push(r.customer_id.clone()),
        }
    }
    report.panel_only = covariates.len() - report.matched;
    Ok((ExperimentDataset::new(records, covariate_names())?, report))
}

/// CSV with columns `customer_id,q,r,no_recent_purchase,low_responsiveness`;
/// undefined `q` and `r` are written as empty fields.
pub fn write_covariates<W: Write>(covariates: &BTreeMap<String, CustomerCovariates>, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["customer_id", "q", "r", NO_RECENT_PURCHASE, LOW_RESPONSIVENESS])?;
    for (id, c) in covariates {
        wtr.write_record([
            id.clone(),
            c.q.map(|q| format!("{q}")).unwrap_or_default(),
            c.r.map(|r| r.to_string()).unwrap_or_default(),
            u8::from(c.no_recent_purchase).to_string(),
            u8::from(c.low_responsiveness).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
