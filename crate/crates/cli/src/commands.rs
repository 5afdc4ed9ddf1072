use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use stratlift::covariates::{build_covariates, join_covariates, write_covariates, DEFAULT_RECENCY_THRESHOLD};
use stratlift::data::{load_experiment, load_panel, write_experiment, ExperimentSchema};
use stratlift::diagnostics::{diagnose, required_control_size, SampleSize};
use stratlift::models::{fit, fit_with_baseline, ModelKind};
use stratlift::presets::{self, Preset};
use stratlift::simulation::{
    generate, recover, replicate_fig2, replicate_fig3, write_fig2_csv, write_fig3_csv, GeneratorSpec, GridConfig,
    Truth,
};
use stratlift::Error;

use crate::config::{required, FileConfig, ResolvedSampler};
use crate::render;
use crate::{AnalyzeArgs, Cli, Command, CovariatesArgs, DiagnoseArgs, Format, RecoverArgs, SimulateArgs};

/// Envelope shared by every JSON report.
#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    command: &'a str,
    version: &'a str,
    generated_at_unix: u64,
    config: &'a C,
    result: &'a R,
}

pub fn run(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Diagnose(a) => cmd_diagnose(cli, &file, a),
        Command::Analyze(a) => cmd_analyze(cli, &file, a),
        Command::Covariates(a) => cmd_covariates(cli, &file, a),
        Command::Simulate(a) => cmd_simulate(cli, &file, a),
        Command::Recover(a) => cmd_recover(cli, &file, a),
    }
}

fn output_path(cli: &Cli, file: &FileConfig) -> Option<PathBuf> {
    cli.output.clone().or_else(|| file.output.clone())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn report_json<C: Serialize, R: Serialize>(command: &str, config: &C, result: &R) -> Result<String> {
    let generated_at_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let report = Report { command, version: env!("CARGO_PKG_VERSION"), generated_at_unix, config, result };
    Ok(serde_json::to_string_pretty(&report)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{text}")?;
    w.flush()?;
    Ok(())
}

/// Writes the JSON report to the output file, if any, and prints either the
/// table or the JSON on stdout.
fn emit<C: Serialize, R: Serialize>(
    cli: &Cli,
    file: &FileConfig,
    command: &str,
    config: &C,
    result: &R,
    table: impl FnOnce() -> String,
) -> Result<()> {
    let json = report_json(command, config, result)?;
    if let Some(path) = output_path(cli, file) {
        write_text(&path, &json)?;
    }
    let mut stdout = io::stdout().lock();
    match cli.format {
        Format::Json => writeln!(stdout, "{json}")?,
        Format::Table => write!(stdout, "{}", table())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct InputConfig {
    input: PathBuf,
    clip_negative: bool,
    covariates: Vec<String>,
}

fn resolve_input(
    file: &FileConfig,
    input: &crate::InputArgs,
    covariates: Vec<String>,
) -> Result<InputConfig, Error> {
    Ok(InputConfig {
        input: required(input.input.clone(), file.input.clone(), "input")?,
        clip_negative: input.clip_negative || file.clip_negative.unwrap_or(false),
        covariates,
    })
}

fn load(cfg: &InputConfig) -> Result<stratlift::ExperimentDataset, Error> {
    let schema = ExperimentSchema { clip_negative: cfg.clip_negative, ..ExperimentSchema::default() }
        .with_covariates(cfg.covariates.iter().cloned());
    let ingested = load_experiment(&cfg.input, &schema)?;
    if ingested.dataset.is_empty() {
        return Err(Error::Validation(format!("{} has no data rows", cfg.input.display())));
    }
    Ok(ingested.dataset)
}

fn cmd_diagnose(cli: &Cli, file: &FileConfig, args: &DiagnoseArgs) -> Result<()> {
    let cfg = resolve_input(file, &args.input, Vec::new())?;
    let data = load(&cfg)?;
    let report = diagnose(&data)?;
    emit(cli, file, "diagnose", &cfg, &report, || render::diagnostics(&report))
}

#[derive(Serialize)]
struct AnalyzeConfig {
    #[serde(flatten)]
    input: InputConfig,
    model: ModelKind,
    baseline: bool,
    sampler: ResolvedSampler,
}

fn cmd_analyze(cli: &Cli, file: &FileConfig, args: &AnalyzeArgs) -> Result<()> {
    let model = args.model.or(file.model).unwrap_or(ModelKind::Ps);
    let covariates = args.covariates.clone().or_else(|| file.covariates.clone()).unwrap_or_default();
    if model == ModelKind::PsCov && covariates.is_empty() {
        return Err(Error::Validation("model ps-cov needs --covariates".into()).into());
    }
    let s = &args.sampler;
    let cfg = AnalyzeConfig {
        input: resolve_input(file, &args.input, covariates)?,
        model,
        baseline: args.baseline || file.baseline.unwrap_or(false),
        sampler: ResolvedSampler::resolve(file, s.chains, s.warmup, s.samples, s.seed, s.target_accept),
    };
    let sampler = cfg.sampler.to_config()?;
    let data = load(&cfg.input)?;
    let covs = if model == ModelKind::PsCov { cfg.input.covariates.clone() } else { Vec::new() };
    let main = if cfg.baseline && model != ModelKind::Dim {
        fit_with_baseline(model, &data, &covs, &sampler)?.0
    } else {
        fit(model, &data, &covs, &sampler)?
    };
    for w in &main.report.warnings {
        log::warn!("{w}");
    }
    if let Some(path) = &args.draws {
        let mut w = create(path)?;
        main.draws.write_csv(&mut w)?;
        w.flush()?;
    }
    emit(cli, file, "analyze", &cfg, &main.report, || render::fit_report(&main.report))
}

#[derive(Serialize)]
struct CovariatesConfig {
    panel: PathBuf,
    input: Option<PathBuf>,
    recency_threshold: usize,
}

fn cmd_covariates(cli: &Cli, file: &FileConfig, args: &CovariatesArgs) -> Result<()> {
    let cfg = CovariatesConfig {
        panel: required(args.panel.clone(), file.panel.clone(), "panel")?,
        input: args.input.clone().or_else(|| file.input.clone()),
        recency_threshold: args.recency_threshold.or(file.recency_threshold).unwrap_or(DEFAULT_RECENCY_THRESHOLD),
    };
    log::info!("covariates config: {}", serde_json::to_string(&cfg)?);
    let panel = load_panel(&cfg.panel)?;
    let covs = build_covariates(&panel, cfg.recency_threshold)?;
    if let Some(input) = &cfg.input {
        let data = load_experiment(input, &ExperimentSchema::default())?.dataset;
        let (_, report) = join_covariates(&data, &covs)?;
        eprintln!(
            "join: {} matched, {} experiment customers missing from panel, {} panel-only",
            report.matched,
            report.missing_from_panel.len(),
            report.panel_only
        );
        if !report.missing_from_panel.is_empty() {
            log::warn!("missing from panel: {}", report.missing_from_panel.join(","));
        }
    }
    match output_path(cli, file) {
        Some(p) => {
            let mut w = create(&p)?;
            write_covariates(&covs, &mut w)?;
            w.flush()?;
            eprintln!("wrote covariates for {} customers to {}", covs.len(), p.display());
        }
        None => write_covariates(&covs, io::stdout().lock())?,
    }
    Ok(())
}

fn load_truth(preset: Option<Preset>, truth: Option<&PathBuf>) -> Result<(Option<Preset>, Truth), Error> {
    if let Some(path) = truth {
        let text = std::fs::read_to_string(path)?;
        let t: Truth = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("truth file {}: {e}", path.display())))?;
        t.validate()?;
        return Ok((preset, t));
    }
    let p = preset.ok_or_else(|| Error::Validation("one of --preset or --truth is required".into()))?;
    let t = p
        .truth()
        .ok_or_else(|| Error::Validation(format!("preset `{p}` does not define a data-generating truth")))?;
    Ok((Some(p), t))
}

#[derive(Serialize)]
struct SimulateConfig {
    preset: Option<Preset>,
    truth: Option<Truth>,
    seed: u64,
    n: Option<usize>,
    treat_frac: Option<f64>,
    grid: Option<GridConfig>,
}

#[derive(Serialize)]
struct SampleSizeResult {
    preset: presets::SampleSizePreset,
    n0_diff_in_means: SampleSize,
    n0_stratified: SampleSize,
}

fn cmd_simulate(cli: &Cli, file: &FileConfig, args: &SimulateArgs) -> Result<()> {
    let preset = args.preset.or(file.preset);
    if preset == Some(Preset::SampleSize) {
        let p = presets::sample_size();
        let result = SampleSizeResult {
            n0_diff_in_means: required_control_size(&p.spec, p.var_dim)?,
            n0_stratified: required_control_size(&p.spec, p.var_ps)?,
            preset: p,
        };
        return emit(cli, file, "simulate", &preset, &result, || render::sample_size(&result.n0_diff_in_means, &result.n0_stratified));
    }
    let seed = required(args.seed, file.seed, "seed")?;
    let (preset, truth) = load_truth(preset, args.truth.as_ref().or(file.truth.as_ref()))?;
    let out = output_path(cli, file);

    if matches!(preset, Some(Preset::Fig2 | Preset::Fig3)) && args.truth.is_none() && file.truth.is_none() {
        let Truth::Strata(params) = &truth else { unreachable!("figure presets use strata truths") };
        let base = if preset == Some(Preset::Fig2) { presets::fig2_grid() } else { presets::fig3_grid() };
        let grid = GridConfig {
            n_grid: args.n_grid.clone().or_else(|| file.n_grid.clone()).unwrap_or(base.n_grid),
            frac_grid: args.frac_grid.clone().or_else(|| file.frac_grid.clone()).unwrap_or(base.frac_grid),
            reps: args.reps.or(file.reps).unwrap_or(base.reps),
            seed,
        };
        let cfg = SimulateConfig { preset, truth: Some(truth.clone()), seed, n: None, treat_frac: None, grid: Some(grid.clone()) };
        let mut csv = Vec::new();
        let summary = if preset == Some(Preset::Fig2) {
            let rows = replicate_fig2(params, &grid)?;
            write_fig2_csv(&rows, &mut csv)?;
            serde_json::to_value(
                rows.iter()
                    .map(|r| serde_json::json!({ "row": r, "unbiased_within_3_se": r.unbiased_within(3.0) }))
                    .collect::<Vec<_>>(),
            )?
        } else {
            let rows = replicate_fig3(params, &grid)?;
            write_fig3_csv(&rows, &mut csv)?;
            serde_json::to_value(&rows)?
        };
        write_bytes(out.as_deref(), &csv)?;
        if let Some(path) = &args.summary {
            write_text(path, &report_json("simulate", &cfg, &summary)?)?;
        }
        return Ok(());
    }

    let n = args.n.or(file.n).unwrap_or_else(|| preset.map_or(140_000, Preset::default_n));
    let treat_frac = args.treat_frac.or(file.treat_frac).unwrap_or(0.5);
    let (data, strata) = generate(&GeneratorSpec { truth: truth.clone(), n, treat_frac, seed })?;
    let mut csv = Vec::new();
    write_experiment(&data, &mut csv)?;
    write_bytes(out.as_deref(), &csv)?;
    if let Some(path) = &args.summary {
        let cfg = SimulateConfig { preset, truth: Some(truth), seed, n: Some(n), treat_frac: Some(treat_frac), grid: None };
        let count = |s| strata.iter().filter(|&&l| l == s).count();
        use stratlift::simulation::Stratum;
        let result = serde_json::json!({
            "n1": data.n1(),
            "n0": data.n0(),
            "strata": { "A": count(Stratum::A), "I": count(Stratum::I), "N": count(Stratum::N) },
        });
        write_text(path, &report_json("simulate", &cfg, &result)?)?;
    }
    Ok(())
}

fn write_bytes(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(bytes)?;
            w.flush()?;
        }
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct RecoverConfig {
    preset: Option<Preset>,
    truth: Truth,
    model: ModelKind,
    n: usize,
    sampler: ResolvedSampler,
}

fn cmd_recover(cli: &Cli, file: &FileConfig, args: &RecoverArgs) -> Result<()> {
    let s = &args.sampler;
    let seed = required(s.seed, file.seed, "seed")?;
    let (preset, truth) = load_truth(args.preset.or(file.preset), args.truth.as_ref().or(file.truth.as_ref()))?;
    let default_model = match truth {
        Truth::Strata(_) => ModelKind::Ps,
        Truth::Covariates { .. } => ModelKind::PsCov,
    };
    let cfg = RecoverConfig {
        preset,
        model: args.model.or(file.model).unwrap_or(default_model),
        n: args.n.or(file.n).unwrap_or_else(|| preset.map_or(140_000, Preset::default_n)),
        sampler: ResolvedSampler::resolve(file, s.chains, s.warmup, s.samples, Some(seed), s.target_accept),
        truth,
    };
    let report = recover(&cfg.truth, cfg.n, cfg.model, &cfg.sampler.to_config()?, seed)?;
    for w in &report.fit.warnings {
        log::warn!("{w}");
    }
    emit(cli, file, "recover", &cfg, &report, || render::recovery(&report))
}
