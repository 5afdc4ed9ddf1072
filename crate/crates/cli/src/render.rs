//! Monospace table rendering for stdout.

use std::fmt::Write;

use stratlift::diagnostics::{DiagnosticsReport, SampleSize};
use stratlift::inference::ParamSummary;
use stratlift::models::FitReport;
use stratlift::simulation::RecoveryReport;

pub fn diagnostics(r: &DiagnosticsReport) -> String {
    let p = &r.proportions;
    let mut s = String::new();
    let _ = writeln!(s, "customers            treated {}  control {}", r.n1, r.n0);
    let _ = writeln!(s, "strata shares        A {:.4}  I {:.4}  N {:.4}", p.pi_a, p.pi_i, p.pi_n);
    if p.raw_pi_i < 0.0 {
        let _ = writeln!(s, "                     (treated incidence below control by {:.4}; I clamped to 0)", -p.raw_pi_i);
    }
    let _ = writeln!(s, "mu_a0 (control)      {:.4}", r.mu_a0_hat);
    let _ = writeln!(s, "mu_a1 lower bound    {:.4}", r.mu_a1_min);
    let _ = writeln!(s, "mu_i1 upper bound    {:.4}", r.mu_i1_max);
    let _ = writeln!(s, "expect a benefit     {}", if r.benefit_condition { "yes" } else { "no" });
    let _ = writeln!(s, "delta_min            {:.4e}", r.delta_min);
    let _ = writeln!(s, "var(diff-in-means)   {:.4e}", r.var_tau_d);
    let _ = writeln!(s, "predicted reduction  >= {:.1}%", 100.0 * r.predicted_var_reduction_lb);
    s
}

fn summary_rows(s: &mut String, rows: &[&ParamSummary]) {
    let _ = writeln!(s, "{:<24} {:>10} {:>10} {:>10} {:>10}", "parameter", "mean", "sd", "2.5%", "97.5%");
    for p in rows {
        let _ = writeln!(s, "{:<24} {:>10.4} {:>10.4} {:>10.4} {:>10.4}", p.name, p.mean, p.sd, p.q2_5, p.q97_5);
    }
}

pub fn fit_report(r: &FitReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model {}  (treated {}, control {})", r.model, r.n1, r.n0);
    let mut rows: Vec<&ParamSummary> = r.parameters.iter().collect();
    rows.push(&r.ate_log);
    if let Some(d) = &r.ate_dollar {
        rows.push(d);
    }
    summary_rows(&mut s, &rows);
    if let Some(b) = &r.baseline {
        let _ = writeln!(
            s,
            "baseline {}: ate_log {:.4} (sd {:.4}); variance reduction {:.1}%",
            b.model, b.ate_log.mean, b.ate_log.sd, b.var_reduction_pct
        );
    }
    let worst = r.convergence.iter().map(|c| c.split_rhat).fold(f64::NAN, f64::max);
    let min_ess = r.convergence.iter().map(|c| c.ess_bulk).fold(f64::NAN, f64::min);
    if worst.is_finite() {
        let _ = writeln!(s, "max split R-hat {worst:.4}, min bulk ESS {min_ess:.0}");
    }
    let divergences: usize = r.sampler.divergences.iter().sum();
    let _ = writeln!(s, "divergent transitions {divergences}");
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

pub fn recovery(r: &RecoveryReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model {}  n {}  seed {}", r.model, r.n, r.seed);
    let _ = writeln!(s, "{:<24} {:>9} {:>9} {:>9} {:>9} {:>9}  covered", "parameter", "truth", "mean", "sd", "2.5%", "97.5%");
    let mut rows: Vec<_> = r.parameters.iter().collect();
    rows.push(&r.ate_log);
    if let Some(d) = &r.ate_dollar {
        rows.push(d);
    }
    for p in rows {
        let _ = writeln!(
            s,
            "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}  {}",
            p.name,
            p.truth,
            p.mean,
            p.sd,
            p.q2_5,
            p.q97_5,
            if p.covered { "yes" } else { "NO" }
        );
    }
    let _ = writeln!(s, "all parameters covered: {}", if r.all_covered { "yes" } else { "no" });
    s
}

fn size(n: &SampleSize) -> String {
    match n {
        SampleSize::Feasible(n) => n.to_string(),
        SampleSize::Infeasible => "infeasible".into(),
    }
}

pub fn sample_size(dim: &SampleSize, ps: &SampleSize) -> String {
    format!("required control group\n  difference in means  {}\n  stratified           {}\n", size(dim), size(ps))
}
