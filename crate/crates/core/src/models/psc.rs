//! Principal stratification with strata shares driven by a multinomial logit
//! on customer covariates.
//!
//! Records are grouped by their covariate vector, so each likelihood
//! evaluation computes one softmax per distinct cell. Treated purchasers are
//! still visited individually because the mixture does not reduce to
//! sufficient statistics.
//!
//! Unconstrained layout: `beta_i` (1 + p), `beta_n` (1 + p), the three cell
//! means (standardized) and `log sigma`.

use std::collections::BTreeMap;

use super::{
    ate_dollar, ate_log, half_normal_prior_log, normal_prior, require_purchasers, CovStrataParams, PurchaseData,
    Standardization, MU_PRIOR_SD, SIGMA_PRIOR_SD,
};
use crate::data::ExperimentDataset;
use crate::error::{Error, Result};
use crate::inference::TargetDensity;
use crate::stats::{log_sum_exp2, LN_SQRT_2PI};

const BETA_PRIOR_SD: f64 = 1.0;

/// Strata shares `(A, I, N)` proportional to `(1, exp(x.beta_i), exp(x.beta_n))`.
/// `x` includes the leading 1.
pub fn mnl_strata_probs(beta_i: &[f64], beta_n: &[f64], x: &[f64]) -> Result<[f64; 3]> {
    if beta_i.len() != x.len() || beta_n.len() != x.len() {
        return Err(Error::InvalidParameter(format!(
            "dimension mismatch: beta_i {}, beta_n {}, x {}",
            beta_i.len(),
            beta_n.len(),
            x.len()
        )));
    }
    let dot = |b: &[f64]| b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
    Ok(softmax3(dot(beta_i), dot(beta_n)).1)
}

/// Log shares and shares for logits `(0, eta_i, eta_n)`.
#[inline]
fn softmax3(eta_i: f64, eta_n: f64) -> ([f64; 3], [f64; 3]) {
    let m = eta_i.max(eta_n).max(0.0);
    let lse = m + ((-m).exp() + (eta_i - m).exp() + (eta_n - m).exp()).ln();
    let lp = [-lse, eta_i - lse, eta_n - lse];
    (lp, lp.map(f64::exp))
}

#[derive(Debug, Clone)]
struct Cell {
    /// Covariates with the leading 1.
    x: Vec<f64>,
    total: f64,
    treated_zero: f64,
    control_zero: f64,
    control_pos: f64,
    /// Range into `PscPosterior::treated_pos`.
    treated: std::ops::Range<usize>,
}

#[derive(Debug, Clone)]
pub struct PscPosterior {
    names: Vec<String>,
    cells: Vec<Cell>,
    treated_pos: Vec<f64>,
    control: PurchaseData,
    n_total: f64,
    init: Vec<f64>,
}

fn build_cells(data: &ExperimentDataset, cols: &[usize], std: Standardization) -> (Vec<Cell>, Vec<f64>) {
    #[derive(Default)]
    struct Acc {
        total: f64,
        tz: f64,
        cz: f64,
        cp: f64,
        pos: Vec<f64>,
    }
    let mut groups: BTreeMap<Vec<u8>, Acc> = BTreeMap::new();
    for r in data.records() {
        let key: Vec<u8> = cols.iter().map(|&c| r.covariates[c]).collect();
        let acc = groups.entry(key).or_default();
        acc.total += 1.0;
        match (r.treated, r.purchased()) {
            (true, true) => acc.pos.push(std.forward(r.log_outcome())),
            (true, false) => acc.tz += 1.0,
            (false, true) => acc.cp += 1.0,
            (false, false) => acc.cz += 1.0,
        }
    }
    let mut cells = Vec::with_capacity(groups.len());
    let mut treated_pos = Vec::new();
    for (key, acc) in groups {
        let start = treated_pos.len();
        treated_pos.extend(acc.pos);
        let mut x = vec![1.0];
        x.extend(key.iter().map(|&k| f64::from(k)));
        cells.push(Cell {
            x,
            total: acc.total,
            treated_zero: acc.tz,
            control_zero: acc.cz,
            control_pos: acc.cp,
            treated: start..treated_pos.len(),
        });
    }
    (cells, treated_pos)
}

fn covariate_columns(data: &ExperimentDataset, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            data.covariate_index(n)
                .ok_or_else(|| Error::Schema(format!("covariate `{n}` is not present on the records")))
        })
        .collect()
}

/// Log likelihood of the covariate model on the original scale.
pub fn psc_loglik(params: &CovStrataParams, data: &ExperimentDataset, covariate_names: &[String]) -> Result<f64> {
    params.validate()?;
    let cols = covariate_columns(data, covariate_names)?;
    if params.beta_i.len() != cols.len() + 1 {
        return Err(Error::InvalidParameter(format!(
            "expected {} coefficients per stratum, got {}",
            cols.len() + 1,
            params.beta_i.len()
        )));
    }
    let post = PscPosterior::build(data, covariate_names.to_vec(), cols, Standardization::IDENTITY);
    let mut v = params.beta_i.clone();
    v.extend(&params.beta_n);
    v.extend([params.mu_a0, params.mu_a1, params.mu_i1, params.sigma.ln()]);
    let mut grad = vec![0.0; v.len()];
    Ok(post.loglik(&v, &mut grad))
}

/// Posterior with N(0, 1) priors on the logit coefficients and the same
/// mean and sigma priors as the model without covariates.
pub fn psc_posterior(data: &ExperimentDataset, covariate_names: &[String]) -> Result<PscPosterior> {
    require_purchasers(data)?;
    let cols = covariate_columns(data, covariate_names)?;
    let std = Standardization::from_sample(&data.positive_log_outcomes(false));
    Ok(PscPosterior::build(data, covariate_names.to_vec(), cols, std))
}

impl PscPosterior {
    fn build(data: &ExperimentDataset, names: Vec<String>, cols: Vec<usize>, std: Standardization) -> Self {
        let mut control = PurchaseData::new(data, std != Standardization::IDENTITY);
        control.std = std;
        let (cells, treated_pos) = build_cells(data, &cols, std);
        let p = names.len() + 1;

        let inc1 = control.treated_pos.len() as f64 / control.n1() as f64;
        let inc0 = control.control_pos_n as f64 / control.n0() as f64;
        let pa = inc0.max(1e-3);
        let pi = (inc1 - inc0).max(1e-3);
        let pn = (1.0 - inc1).max(1e-3);
        let mut init = vec![0.0; 2 * p + 4];
        init[0] = (pi / pa).ln();
        init[p] = (pn / pa).ln();
        let mu_a1 = std.forward(control.treated_pos_mean);
        init[2 * p + 1] = mu_a1;
        init[2 * p + 2] = mu_a1 - 1.5 * control.treated_pos_sd / std.scale;

        Self { names, cells, treated_pos, control, n_total: data.len() as f64, init }
    }

    fn p(&self) -> usize {
        self.names.len() + 1
    }

    pub fn standardization(&self) -> Standardization {
        self.control.std
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }

    /// Number of distinct covariate cells in the data.
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Likelihood only; writes its gradient into `grad` (overwriting).
    fn loglik(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.p();
        let (bi, bn) = (&v[..p], &v[p..2 * p]);
        let (a0, a1, i1) = (v[2 * p], v[2 * p + 1], v[2 * p + 2]);
        let sigma = v[2 * p + 3].exp();
        let s2 = sigma * sigma;
        let norm = v[2 * p + 3] + LN_SQRT_2PI;
        grad.iter_mut().for_each(|g| *g = 0.0);

        let (lc, g_a0, g_ls_c) = self.control.control_normal(a0, sigma);
        let mut lp = lc;
        let (mut g_a1, mut g_i1, mut g_ls) = (0.0, 0.0, g_ls_c);

        for cell in &self.cells {
            let dot = |b: &[f64]| b.iter().zip(&cell.x).map(|(b, x)| b * x).sum::<f64>();
            let (lpk, pk) = softmax3(dot(bi), dot(bn));
            let mut g = [cell.control_pos, 0.0, cell.treated_zero];
            lp += cell.control_pos * lpk[0] + cell.treated_zero * lpk[2];
            if cell.control_zero > 0.0 {
                let rest = log_sum_exp2(lpk[1], lpk[2]);
                lp += cell.control_zero * rest;
                g[1] += cell.control_zero * (lpk[1] - rest).exp();
                g[2] += cell.control_zero * (lpk[2] - rest).exp();
            }
            let (ca, ci) = (lpk[0] - norm, lpk[1] - norm);
            for &x in &self.treated_pos[cell.treated.clone()] {
                let (da, di) = (x - a1, x - i1);
                let la = ca - 0.5 * da * da / s2;
                let li = ci - 0.5 * di * di / s2;
                let l = log_sum_exp2(la, li);
                let (wa, wi) = ((la - l).exp(), (li - l).exp());
                lp += l;
                g[0] += wa;
                g[1] += wi;
                g_a1 += wa * da;
                g_i1 += wi * di;
                g_ls += wa * da * da / s2 + wi * di * di / s2 - 1.0;
            }
            // d/d eta_j of sum_k g_k log pi_k = g_j - pi_j sum_k g_k
            let total = g[0] + g[1] + g[2];
            let (d_i, d_n) = (g[1] - pk[1] * total, g[2] - pk[2] * total);
            for (j, x) in cell.x.iter().enumerate() {
                grad[j] += d_i * x;
                grad[p + j] += d_n * x;
            }
        }
        grad[2 * p] = g_a0;
        grad[2 * p + 1] = g_a1 / s2;
        grad[2 * p + 2] = g_i1 / s2;
        grad[2 * p + 3] = g_ls;
        lp
    }

    /// Sample-average strata shares over every customer.
    fn average_shares(&self, bi: &[f64], bn: &[f64]) -> [f64; 3] {
        let mut avg = [0.0; 3];
        for cell in &self.cells {
            let dot = |b: &[f64]| b.iter().zip(&cell.x).map(|(b, x)| b * x).sum::<f64>();
            let (_, pk) = softmax3(dot(bi), dot(bn));
            for k in 0..3 {
                avg[k] += cell.total * pk[k];
            }
        }
        avg.map(|a| a / self.n_total)
    }

    pub fn params(&self, v: &[f64]) -> CovStrataParams {
        let p = self.p();
        let s = self.control.std;
        CovStrataParams {
            beta_i: v[..p].to_vec(),
            beta_n: v[p..2 * p].to_vec(),
            mu_a0: s.location(v[2 * p]),
            mu_a1: s.location(v[2 * p + 1]),
            mu_i1: s.location(v[2 * p + 2]),
            sigma: s.spread(v[2 * p + 3].exp()),
        }
    }

    fn coefficient_names(&self, prefix: &str) -> Vec<String> {
        std::iter::once(format!("{prefix}[intercept]"))
            .chain(self.names.iter().map(|n| format!("{prefix}[{n}]")))
            .collect()
    }
}

impl TargetDensity for PscPosterior {
    fn dim(&self) -> usize {
        2 * self.p() + 4
    }

    fn logp_grad(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.p();
        let mut lp = self.loglik(v, grad);
        for k in 0..2 * p {
            let (l, d) = normal_prior(v[k], BETA_PRIOR_SD);
            lp += l;
            grad[k] += d;
        }
        for k in 2 * p..2 * p + 3 {
            let (l, d) = normal_prior(v[k], MU_PRIOR_SD);
            lp += l;
            grad[k] += d;
        }
        let ls = v[2 * p + 3];
        let (l, d) = half_normal_prior_log(ls.exp(), SIGMA_PRIOR_SD);
        lp += l + ls;
        grad[2 * p + 3] += d + 1.0;
        lp
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = self.coefficient_names("beta_i");
        names.extend(self.coefficient_names("beta_n"));
        names.extend(["mu_a0", "mu_a1", "mu_i1", "sigma"].map(String::from));
        names
    }

    fn constrain(&self, v: &[f64]) -> Vec<f64> {
        let c = self.params(v);
        let mut out = c.beta_i;
        out.extend(c.beta_n);
        out.extend([c.mu_a0, c.mu_a1, c.mu_i1, c.sigma]);
        out
    }

    fn derived_names(&self) -> Vec<String> {
        ["pi_a", "pi_i", "pi_n", "ate_log", "ate_dollar"].map(String::from).to_vec()
    }

    fn derived(&self, params: &[f64]) -> Vec<f64> {
        let p = self.p();
        let [pa, pi, pn] = self.average_shares(&params[..p], &params[p..2 * p]);
        let (a0, a1, i1, s) = (params[2 * p], params[2 * p + 1], params[2 * p + 2], params[2 * p + 3]);
        vec![pa, pi, pn, ate_log(pa, pi, a0, a1, i1), ate_dollar(pa, pi, a0, a1, i1, s)]
    }

    fn unconstrained_names(&self) -> Vec<String> {
        let mut names = self.coefficient_names("beta_i");
        names.extend(self.coefficient_names("beta_n"));
        names.extend(["mu_a0_std", "mu_a1_std", "mu_i1_std", "log_sigma_std"].map(String::from));
        names
    }

    fn initial_point(&self) -> Vec<f64> {
        self.init.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExperimentRecord;
    use crate::inference::gradient_error;
    use crate::models::{ps_loglik, StrataParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table5_from_table4_coefficients() {
        let p = mnl_strata_probs(&[-3.548, 0.0, 0.0], &[0.997, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        for (got, want) in p.iter().zip([0.268, 0.008, 0.725]) {
            assert!((got - want).abs() < 0.002, "{p:?}");
        }
        let p = mnl_strata_probs(&[-3.548, 1.684, 0.0], &[0.997, 1.608, 0.0], &[1.0, 1.0, 0.0]).unwrap();
        for (got, want) in p.iter().zip([0.068, 0.011, 0.921]) {
            assert!((got - want).abs() < 0.002, "{p:?}");
        }
    }

    #[test]
    fn zero_coefficients_give_uniform() {
        let p = mnl_strata_probs(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(mnl_strata_probs(&[0.0], &[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let p = mnl_strata_probs(&[800.0], &[-800.0], &[1.0]).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-15 && p.iter().all(|x| x.is_finite()));
    }

    fn dataset(seed: u64, n: usize) -> ExperimentDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let flags = vec![u8::from(rng.random_bool(0.4)), u8::from(rng.random_bool(0.5))];
                let treated = rng.random_bool(0.5);
                let pa = if flags[0] == 1 { 0.1 } else { 0.3 };
                let u: f64 = rng.random();
                let y = if u < pa || (treated && u < pa + 0.05) { rng.random_range(5.0..400.0) } else { 0.0 };
                ExperimentRecord::new(format!("c{i}"), treated, y).with_covariates(flags)
            })
            .collect();
        ExperimentDataset::new(records, vec!["recent".into(), "resp".into()]).unwrap()
    }

    fn names() -> Vec<String> {
        vec!["recent".into(), "resp".into()]
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let post = psc_posterior(&dataset(1, 2000), &names()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = post.initial_point();
        for _ in 0..100 {
            let v: Vec<f64> = base.iter().map(|b| b + rng.random_range(-1.0..1.0)).collect();
            let e = gradient_error(&post, &v, 1e-5);
            assert!(e < 1e-6, "{e}");
        }
    }

    #[test]
    fn intercept_only_matches_stratified_likelihood() {
        let data = dataset(2, 3000);
        let (bi, bn) = (-2.0, 1.2);
        let pi = mnl_strata_probs(&[bi], &[bn], &[1.0]).unwrap();
        let cov = CovStrataParams { beta_i: vec![bi], beta_n: vec![bn], mu_a0: 4.0, mu_a1: 4.2, mu_i1: 3.0, sigma: 1.2 };
        let strat = StrataParams { pi, mu_a0: 4.0, mu_a1: 4.2, mu_i1: 3.0, sigma: 1.2 };
        let a = psc_loglik(&cov, &data, &[]).unwrap();
        let b = ps_loglik(&strat, &data).unwrap();
        assert!(((a - b) / b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn missing_covariate_is_an_error() {
        let data = dataset(3, 100);
        assert!(matches!(psc_posterior(&data, &["nope".to_string()]), Err(Error::Schema(_))));
    }

    #[test]
    fn aggregation_groups_cells() {
        let post = psc_posterior(&dataset(4, 1000), &names()).unwrap();
        assert_eq!(post.cell_count(), 4);
        assert_eq!(post.dim(), 10);
        let avg = post.average_shares(&[0.0; 3], &[0.0; 3]);
        assert!(avg.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }
}
