//! Experiment and panel data: domain types, CSV ingestion and arm summaries.
//!
//! Outcomes are kept in raw currency units. Consumers apply `log(y + 1)`
//! themselves through [`ExperimentRecord::log_outcome`].

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub customer_id: String,
    pub treated: bool,
    /// Outcome in currency units, `>= 0`.
    pub y: f64,
    /// Binary covariate flags, aligned with [`ExperimentDataset::covariate_names`].
    pub covariates: Vec<u8>,
}

impl ExperimentRecord {
    pub fn new(customer_id: impl Into<String>, treated: bool, y: f64) -> Self {
        Self { customer_id: customer_id.into(), treated, y, covariates: Vec::new() }
    }

    pub fn with_covariates(mut self, flags: Vec<u8>) -> Self {
        self.covariates = flags;
        self
    }

    #[inline]
    pub fn log_outcome(&self) -> f64 {
        self.y.ln_1p()
    }

    #[inline]
    pub fn purchased(&self) -> bool {
        self.y > 0.0
    }
}

/// Validated, immutable collection of experiment records.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDataset {
    records: Vec<ExperimentRecord>,
    covariate_names: Vec<String>,
    n1: usize,
    n0: usize,
}

impl ExperimentDataset {
    pub fn new(records: Vec<ExperimentRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !r.y.is_finite() || r.y < 0.0 {
                return Err(Error::Validation(format!(
                    "record {} ({}) has invalid outcome {}",
                    i + 1,
                    r.customer_id,
                    r.y
                )));
            }
            if r.covariates.len() != covariate_names.len() {
                return Err(Error::Validation(format!(
                    "record {} ({}) has {} covariates, expected {}",
                    i + 1,
                    r.customer_id,
                    r.covariates.len(),
                    covariate_names.len()
                )));
            }
            if let Some(pos) = r.covariates.iter().position(|&f| f > 1) {
                return Err(Error::Validation(format!(
                    "record {} ({}) covariate `{}` is not a 0/1 flag",
                    i + 1,
                    r.customer_id,
                    covariate_names[pos]
                )));
            }
            if !seen.insert(r.customer_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate customer_id `{}` at record {}",
                    r.customer_id,
                    i + 1
                )));
            }
        }
        let n1 = records.iter().filter(|r| r.treated).count();
        let n0 = records.len() - n1;
        Ok(Self { records, covariate_names, n1, n0 })
    }

    pub fn records(&self) -> &[ExperimentRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    /// Errors unless both arms contain at least one customer.
    pub fn require_both_arms(&self) -> Result<()> {
        if self.n1 == 0 || self.n0 == 0 {
            return Err(Error::Precondition(format!(
                "both arms must be non-empty (n1 = {}, n0 = {})",
                self.n1, self.n0
            )));
        }
        Ok(())
    }

    pub fn arm(&self, treated: bool) -> impl Iterator<Item = &ExperimentRecord> {
        self.records.iter().filter(move |r| r.treated == treated)
    }

    /// `log(y + 1)` of purchasers in one arm, in record order.
    pub fn positive_log_outcomes(&self, treated: bool) -> Vec<f64> {
        self.arm(treated).filter(|r| r.purchased()).map(|r| r.log_outcome()).collect()
    }
}

/// Column mapping for experiment CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSchema {
    pub id_column: String,
    pub treatment_column: String,
    pub outcome_column: String,
    pub covariate_columns: Vec<String>,
    /// Map negative outcomes to zero instead of rejecting them.
    pub clip_negative: bool,
}

impl Default for ExperimentSchema {
    fn default() -> Self {
        Self {
            id_column: "customer_id".into(),
            treatment_column: "z".into(),
            outcome_column: "y".into(),
            covariate_columns: Vec::new(),
            clip_negative: false,
        }
    }
}

impl ExperimentSchema {
    pub fn with_covariates<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.covariate_columns = names.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: ExperimentDataset,
    /// Number of negative outcomes mapped to zero (only with `clip_negative`).
    pub clipped: usize,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
}

fn parse_flag(raw: &str, row: usize, what: &str) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            row,
            message: format!("{what} must be 0 or 1, got `{other}`"),
        }),
    }
}

pub fn load_experiment(path: impl AsRef<Path>, schema: &ExperimentSchema) -> Result<Ingested> {
    let file = File::open(path.as_ref())?;
    read_experiment(file, schema)
}

pub fn read_experiment<R: Read>(reader: R, schema: &ExperimentSchema) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::Schema("input has no header row".into()));
    }
    let id_col = column(&headers, &schema.id_column)?;
    let z_col = column(&headers, &schema.treatment_column)?;
    let y_col = column(&headers, &schema.outcome_column)?;
    let cov_cols = schema
        .covariate_columns
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut clipped = 0usize;
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |idx: usize| row.get(idx).unwrap_or("");
        let treated = parse_flag(field(z_col), row_no, &schema.treatment_column)? == 1;
        let raw_y = field(y_col).trim();
        let mut y: f64 = raw_y.parse().map_err(|_| Error::Parse {
            row: row_no,
            message: format!("non-numeric outcome `{raw_y}`"),
        })?;
        if !y.is_finite() {
            return Err(Error::Parse { row: row_no, message: format!("non-finite outcome `{raw_y}`") });
        }
        if y < 0.0 {
            if schema.clip_negative {
                clipped += 1;
                y = 0.0;
            } else {
                return Err(Error::Validation(format!(
                    "row {row_no}: negative outcome {y} (use --clip-negative to map to 0)"
                )));
            }
        }
        let covariates = cov_cols
            .iter()
            .zip(&schema.covariate_columns)
            .map(|(&c, name)| parse_flag(field(c), row_no, name))
            .collect::<Result<Vec<_>>>()?;
        records.push(ExperimentRecord {
            customer_id: field(id_col).trim().to_string(),
            treated,
            y,
            covariates,
        });
    }
    if clipped > 0 {
        log::warn!("clipped {clipped} negative outcome(s) to zero");
    }
    let dataset = ExperimentDataset::new(records, schema.covariate_columns.clone())?;
    Ok(Ingested { dataset, clipped })
}

/// Writes `customer_id,z,y[,covariates...]`. Outcomes use the shortest
/// round-trip float formatting so a reload is bit-identical.
pub fn write_experiment<W: Write>(data: &ExperimentDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["customer_id".to_string(), "z".into(), "y".into()];
    header.extend(data.covariate_names().iter().cloned());
    wtr.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![r.customer_id.clone(), u8::from(r.treated).to_string(), format!("{}", r.y)];
        row.extend(r.covariates.iter().map(|f| f.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_experiment(data: &ExperimentDataset, path: impl AsRef<Path>) -> Result<()> {
    write_experiment(data, File::create(path.as_ref())?)
}

/// Per-arm summary in the layout of a typical experiment overview table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub n1: usize,
    pub n0: usize,
    pub mean_log1p_treated: f64,
    pub mean_log1p_control: f64,
    pub incidence_treated: f64,
    pub incidence_control: f64,
}

impl ExperimentSummary {
    /// Frequentist difference-in-means point estimate on the log scale.
    pub fn diff_in_means(&self) -> f64 {
        self.mean_log1p_treated - self.mean_log1p_control
    }
}

pub fn summarize(data: &ExperimentDataset) -> Result<ExperimentSummary> {
    data.require_both_arms()?;
    let arm_stats = |treated: bool| {
        let (mut sum, mut buyers, mut n) = (0.0, 0usize, 0usize);
        for r in data.arm(treated) {
            sum += r.log_outcome();
            buyers += usize::from(r.purchased());
            n += 1;
        }
        (sum / n as f64, buyers as f64 / n as f64)
    };
    let (mean_t, inc_t) = arm_stats(true);
    let (mean_c, inc_c) = arm_stats(false);
    Ok(ExperimentSummary {
        n1: data.n1(),
        n0: data.n0(),
        mean_log1p_treated: mean_t,
        mean_log1p_control: mean_c,
        incidence_treated: inc_t,
        incidence_control: inc_c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelRecord {
    /// 1-based period; `t = T` is the most recent pre-experiment period.
    pub t: usize,
    pub purchased: bool,
    pub exposed: bool,
}

/// Period-ordered purchase/exposure histories keyed by customer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PanelHistory {
    histories: BTreeMap<String, Vec<PanelRecord>>,
    periods: usize,
}

impl PanelHistory {
    /// Builds a panel from per-customer rows, checking that every customer
    /// covers periods `1..=T` exactly once.
    pub fn from_rows(rows: Vec<(String, PanelRecord)>) -> Result<Self> {
        let periods = rows.iter().map(|(_, r)| r.t).max().unwrap_or(0);
        let mut histories: BTreeMap<String, Vec<PanelRecord>> = BTreeMap::new();
        for (id, rec) in rows {
            if rec.t == 0 {
                return Err(Error::Validation(format!("customer `{id}`: period index must start at 1")));
            }
            histories.entry(id).or_default().push(rec);
        }
        for (id, hist) in histories.iter_mut() {
            hist.sort_by_key(|r| r.t);
            for w in hist.windows(2) {
                if w[0].t == w[1].t {
                    return Err(Error::Validation(format!("customer `{id}`: duplicate period {}", w[0].t)));
                }
            }
            if let Some(missing) = (1..=periods).zip(hist.iter()).find(|(t, r)| *t != r.t).map(|(t, _)| t) {
                return Err(Error::Validation(format!("customer `{id}`: gap at period {missing}")));
            }
            if hist.len() != periods {
                return Err(Error::Validation(format!(
                    "customer `{id}`: gap at period {} (history ends before T = {periods})",
                    hist.len() + 1
                )));
            }
        }
        Ok(Self { histories, periods })
    }

    /// Number of pre-experiment periods `T`.
    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn len(&self) -> usize {
        self.histories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }

    pub fn get(&self, customer_id: &str) -> Option<&[PanelRecord]> {
        self.histories.get(customer_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[PanelRecord])> {
        self.histories.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<PanelHistory> {
    read_panel(File::open(path.as_ref())?)
}

/// Reads a `customer_id,t,y,z` panel. An empty input yields an empty panel.
pub fn read_panel<R: Read>(reader: R) -> Result<PanelHistory> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(PanelHistory::default());
    }
    let id_col = column(&headers, "customer_id")?;
    let t_col = column(&headers, "t")?;
    let y_col = column(&headers, "y")?;
    let z_col = column(&headers, "z")?;
    let mut rows = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |idx: usize| row.get(idx).unwrap_or("").trim();
        let t: usize = field(t_col).parse().map_err(|_| Error::Parse {
            row: row_no,
            message: format!("period `{}` is not a positive integer", field(t_col)),
        })?;
        let purchased = parse_flag(field(y_col), row_no, "y")? == 1;
        let exposed = parse_flag(field(z_col), row_no, "z")? == 1;
        rows.push((field(id_col).to_string(), PanelRecord { t, purchased, exposed }));
    }
    PanelHistory::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Ingested> {
        read_experiment(text.as_bytes(), &ExperimentSchema::default())
    }

    #[test]
    fn counts_arms() {
        let got = load("customer_id,z,y\nc1,1,50.0\nc2,0,0.0\n").unwrap();
        assert_eq!(got.dataset.n1(), 1);
        assert_eq!(got.dataset.n0(), 1);
    }

    #[test]
    fn negative_outcome_names_row() {
        let err = load("customer_id,z,y\nc1,1,5\nc2,0,-3\n").unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn clip_negative_counts() {
        let schema = ExperimentSchema { clip_negative: true, ..Default::default() };
        let got = read_experiment("customer_id,z,y\nc1,1,-5\nc2,0,-3\nc3,0,2\n".as_bytes(), &schema).unwrap();
        assert_eq!(got.clipped, 2);
        assert_eq!(got.dataset.records()[0].y, 0.0);
    }

    #[test]
    fn schema_and_parse_errors() {
        assert!(matches!(load("customer_id,z\nc1,1\n"), Err(Error::Schema(_))));
        assert!(matches!(load(""), Err(Error::Schema(_))));
        assert!(matches!(load("customer_id,z,y\nc1,1,abc\n"), Err(Error::Parse { row: 1, .. })));
        assert!(matches!(load("customer_id,z,y\nc1,1,1\nc1,0,2\n"), Err(Error::Validation(_))));
        assert!(matches!(load("customer_id,z,y\nc1,2,1\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn covariate_columns_are_read() {
        let schema = ExperimentSchema::default().with_covariates(["a", "b"]);
        let got = read_experiment("customer_id,z,y,a,b\nc1,1,3,1,0\nc2,0,0,0,1\n".as_bytes(), &schema).unwrap();
        assert_eq!(got.dataset.records()[1].covariates, vec![0, 1]);
        let missing = read_experiment("customer_id,z,y,a\nc1,1,3,1\n".as_bytes(), &schema);
        assert!(matches!(missing, Err(Error::Schema(_))));
    }

    #[test]
    fn summary_log_e() {
        let data = ExperimentDataset::new(
            vec![
                ExperimentRecord::new("a", true, std::f64::consts::E - 1.0),
                ExperimentRecord::new("b", false, 0.0),
            ],
            vec![],
        )
        .unwrap();
        let s = summarize(&data).unwrap();
        assert!((s.mean_log1p_treated - 1.0).abs() < 1e-15);
        assert_eq!(s.mean_log1p_control, 0.0);
        assert_eq!(s.incidence_treated, 1.0);
        assert!((s.diff_in_means() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn summary_all_zero_and_empty_arm() {
        let recs = (0..6).map(|i| ExperimentRecord::new(format!("c{i}"), i % 2 == 0, 0.0)).collect();
        let s = summarize(&ExperimentDataset::new(recs, vec![]).unwrap()).unwrap();
        assert_eq!((s.incidence_control, s.incidence_treated), (0.0, 0.0));
        assert_eq!((s.mean_log1p_control, s.mean_log1p_treated), (0.0, 0.0));
        let one_arm = ExperimentDataset::new(vec![ExperimentRecord::new("x", true, 1.0)], vec![]).unwrap();
        assert!(matches!(summarize(&one_arm), Err(Error::Precondition(_))));
    }

    #[test]
    fn panel_thirteen_periods() {
        let mut text = String::from("customer_id,t,y,z\n");
        for t in 1..=13 {
            text.push_str(&format!("c1,{t},{},{}\n", t % 2, (t + 1) % 2));
        }
        let p = read_panel(text.as_bytes()).unwrap();
        assert_eq!(p.periods(), 13);
        assert_eq!(p.get("c1").unwrap().len(), 13);
    }

    #[test]
    fn panel_validation() {
        assert!(read_panel("".as_bytes()).unwrap().is_empty());
        let empty = read_panel("customer_id,t,y,z\n".as_bytes()).unwrap();
        assert_eq!((empty.len(), empty.periods()), (0, 0));
        let dup = "customer_id,t,y,z\nc1,1,0,0\nc1,1,1,0\n";
        assert!(matches!(read_panel(dup.as_bytes()), Err(Error::Validation(_))));
        let gap = "customer_id,t,y,z\nc1,1,0,0\nc1,3,1,0\n";
        assert!(read_panel(gap.as_bytes()).unwrap_err().to_string().contains("gap at period 2"));
        let bad = "customer_id,t,y,z\nc1,1,2,0\n";
        assert!(matches!(read_panel(bad.as_bytes()), Err(Error::Parse { .. })));
    }
}
