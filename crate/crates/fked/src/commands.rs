//! The six commands. Each returns its staged outputs; [`run`] commits them
//! to the output directory once the command has succeeded.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fked_core::fcurves::{fcv_select, smooth};
use fked_core::simlab::{gen_observations, summarize, RepetitionOutcome};
use fked_core::tracevario::empirical_trace_semivariogram;
use fked_core::{
    BasisSpec, BootstrapResult, CovariateSet, CurveSet, Error as CoreError, FkedModel, Matrix, Ordering, RawObservation,
    RefitMode, Scenario,
};
use serde::{Deserialize, Serialize};

use crate::config::{ResponseTransform, RunConfig, DEFAULT_REPETITIONS, DEFAULT_SIM_B, N_BASIS_CANDIDATES, PENALTY_CANDIDATES};
use crate::error::{as_input, CliError, Result};
use crate::formats::{self, CoverageRow, PredictionRow, RunRow, WeightRow};
use crate::manifest::{CovariateManifest, Target};
use crate::output::Outputs;
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Smooth,
    Fit,
    Predict,
    Bands,
    Simulate,
    Report,
}

/// Runs `command` on its own thread pool and commits its outputs.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let out = cfg.out_dir()?.to_path_buf();
    let pool = parallel::pool(cfg.threads)?;
    let staged = pool.install(|| execute(command, cfg))?;
    staged.commit(&out)
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outputs> {
    cfg.validate()?;
    match command {
        Command::Smooth => cmd_smooth(cfg),
        Command::Fit => cmd_fit(cfg),
        Command::Predict => cmd_predict(cfg),
        Command::Bands => cmd_bands(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Report => cmd_report(cfg),
    }
}

/// Model file: the fitted model plus how the response was transformed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub response_transform: ResponseTransform,
    pub model: FkedModel,
}

/// Data-level problems surfacing from the core are input errors; the rest
/// are numerical.
fn classify(e: CoreError) -> CliError {
    match e {
        CoreError::Domain { .. } | CoreError::DuplicateSite(..) | CoreError::Arity { .. } | CoreError::Incompatible(_) => {
            as_input(e)
        }
        e => CliError::Fit(e),
    }
}

/// File-name stem for an identifier.
fn stem(id: &str) -> Result<String> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) && !id.starts_with('.');
    if ok {
        Ok(id.to_string())
    } else {
        Err(CliError::input(format!("identifier `{id}` cannot be used in a file name")))
    }
}

fn load_observations(cfg: &RunConfig) -> Result<Vec<RawObservation>> {
    let path = cfg.require(&cfg.input, "input")?;
    let mut raw = formats::read_observations(path)?;
    let tr = cfg.response_transform.unwrap_or_default();
    for (k, o) in raw.iter_mut().enumerate() {
        o.value = tr
            .apply(o.value)
            .ok_or_else(|| CliError::input(format!("{}: row {} cannot be log-transformed ({})", path.display(), k + 1, o.value)))?;
    }
    Ok(raw)
}

fn response_basis(cfg: &RunConfig, raw: &[RawObservation]) -> Result<BasisSpec> {
    let domain = cfg.domain.unwrap_or_else(|| {
        raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.t), hi.max(o.t)))
    });
    if !(domain.0 < domain.1) {
        return Err(CliError::input("observations span a single time point"));
    }
    let (nb, penalty) = match (cfg.n_basis, cfg.penalty) {
        (Some(nb), Some(p)) => (nb, p),
        (nb, p) => {
            let nbs = nb.map_or(N_BASIS_CANDIDATES.to_vec(), |v| vec![v]);
            let ps = p.map_or(PENALTY_CANDIDATES.to_vec(), |v| vec![v]);
            let chosen = fcv_select(raw, domain, &nbs, &ps).map_err(classify)?;
            log::info!("cross-validation chose {} basis functions, penalty {}", chosen.0, chosen.1);
            chosen
        }
    };
    BasisSpec::uniform(domain.0, domain.1, nb, penalty).map_err(as_input)
}

fn load_curves(cfg: &RunConfig) -> Result<CurveSet> {
    let raw = load_observations(cfg)?;
    let basis = response_basis(cfg, &raw)?;
    let curves = smooth(&raw, &basis).map_err(classify)?;
    fked_core::fcurves::check_distinct(&curves.coords()).map_err(as_input)?;
    Ok(curves)
}

fn load_manifest(cfg: &RunConfig) -> Result<Option<CovariateManifest>> {
    cfg.covariates.as_deref().map(CovariateManifest::load).transpose()
}

fn load_model(cfg: &RunConfig) -> Result<ModelFile> {
    formats::read_json(cfg.require(&cfg.model, "model")?)
}

pub fn cmd_smooth(cfg: &RunConfig) -> Result<Outputs> {
    let curves = load_curves(cfg)?;
    let mut out = Outputs::new();
    out.add("curves.csv", formats::curves_csv(&curves)?)?;
    out.add_json("basis.json", &curves.basis)?;
    Ok(out)
}

#[derive(Serialize)]
struct NamedCurve<'a> {
    name: &'a str,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct DriftSummary<'a> {
    grid: &'a [f64],
    alpha: Vec<f64>,
    gamma: Vec<NamedCurve<'a>>,
    beta: Vec<NamedCurve<'a>>,
    theta: &'a [Vec<f64>],
    k: &'a Matrix,
    aic_trace: &'a [f64],
    edf: f64,
    penalty: f64,
    iterations: usize,
    converged: bool,
    degenerate: bool,
    warning: &'a Option<String>,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Outputs> {
    let curves = load_curves(cfg)?;
    let x = match load_manifest(cfg)? {
        Some(m) => m.covariates(&curves)?,
        None => CovariateSet::none(curves.len()),
    };
    let drift_config = cfg.drift();
    let model = FkedModel::fit(&curves, &x, &drift_config)?;
    let d = &model.drift;
    if let Some(w) = &d.warning {
        log::warn!("{w}");
    }
    let vc = &drift_config.variogram;
    let emp = empirical_trace_semivariogram(model.residuals(), vc.n_bins, vc.max_dist_fraction)?;
    let summary = DriftSummary {
        grid: &d.grid,
        alpha: d.alpha(),
        gamma: x.scalar_names.iter().enumerate().map(|(p, n)| NamedCurve { name: n, values: d.gamma(p) }).collect(),
        beta: x.functional_names.iter().enumerate().map(|(q, n)| NamedCurve { name: n, values: d.beta(q) }).collect(),
        theta: &d.theta,
        k: &d.k,
        aic_trace: &d.aic_trace,
        edf: d.edf,
        penalty: d.penalty,
        iterations: d.iterations(),
        converged: d.converged,
        degenerate: d.degenerate,
        warning: &d.warning,
    };
    let mut out = Outputs::new();
    out.add("curves.csv", formats::curves_csv(&curves)?)?;
    out.add_json("basis.json", &curves.basis)?;
    out.add("residuals.csv", formats::curves_csv(model.residuals())?)?;
    out.add_json("variogram.json", &model.variogram)?;
    out.add("empirical_variogram.csv", formats::empirical_csv(&emp)?)?;
    out.add_json("drift.json", &summary)?;
    let file = ModelFile { response_transform: cfg.response_transform.unwrap_or_default(), model };
    out.add_json("model.json", &file)?;
    Ok(out)
}

fn targets_of(cfg: &RunConfig, model: &FkedModel) -> Result<(Vec<Target>, Vec<fked_core::TargetCovariates>)> {
    let manifest = load_manifest(cfg)?.ok_or_else(|| CliError::input("--covariates is required to locate the targets"))?;
    let targets = manifest.targets()?;
    for t in &targets {
        stem(&t.id)?;
    }
    let covs = manifest.target_covariates(&model.covariates, &targets)?;
    Ok((targets, covs))
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<Outputs> {
    use rayon::prelude::*;
    let file = load_model(cfg)?;
    let model = &file.model;
    let (targets, covs) = targets_of(cfg, model)?;
    let preds = targets
        .par_iter()
        .zip(&covs)
        .map(|(t, c)| model.predict((t.x, t.y), c).map_err(classify))
        .collect::<Result<Vec<_>>>()?;
    let sites = &model.residuals().sites;
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for (t, p) in targets.iter().zip(&preds) {
        if (p.system.weight_sum() - 1.0).abs() > 1e-8 {
            return Err(CliError::Internal(format!("kriging weights for `{}` sum to {}", t.id, p.system.weight_sum())));
        }
        if p.system.coincident.is_some() {
            log::info!("target `{}` coincides with a data site", t.id);
        }
        let values = model.values_of(&p.coeffs)?;
        rows.extend(model.grid().iter().zip(&values).map(|(&tt, &v)| PredictionRow { target_id: t.id.clone(), t: tt, predicted_value: v }));
        weights.extend(sites.iter().zip(&p.system.weights).map(|(s, &w)| WeightRow {
            target_id: t.id.clone(),
            site_id: s.id.clone(),
            weight: w,
        }));
    }
    let mut out = Outputs::new();
    out.add("predictions.csv", formats::predictions_csv(&rows)?)?;
    out.add("weights.csv", formats::weights_csv(&weights)?)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub setup_seconds: f64,
    pub replicates_seconds: f64,
}

/// Metadata written next to the band files of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMetadata {
    pub target_id: String,
    pub x: f64,
    pub y: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub kept: usize,
    pub dropped: usize,
    pub refit_mode: RefitMode,
    pub orderings: Vec<Ordering>,
    pub band_files: Vec<String>,
    pub contrasts_file: Option<String>,
    pub jitter: f64,
    pub response_transform: ResponseTransform,
    pub timings: Timings,
}

pub fn cmd_bands(cfg: &RunConfig) -> Result<Outputs> {
    let file = load_model(cfg)?;
    let model = &file.model;
    let (targets, covs) = targets_of(cfg, model)?;
    let boot = cfg.bootstrap();
    boot.validate().map_err(as_input)?;
    let methods = cfg.ordering().methods();
    let mut out = Outputs::new();
    for (t, c) in targets.iter().zip(&covs) {
        let id = stem(&t.id)?;
        let started = Instant::now();
        let ctx = fked_core::BootstrapContext::new(model, (t.x, t.y), c)?;
        let setup = started.elapsed().as_secs_f64();
        let outcomes = parallel::replicates(&ctx, &boot);
        let primary = fked_core::bootstrap::finish(&ctx, &boot, outcomes)?;
        let total = started.elapsed().as_secs_f64();
        log::info!("target `{}`: {} replicates in {:.2}s, {} dropped", t.id, boot.b, total, primary.dropped);
        let mut band_files = Vec::new();
        for &m in &methods {
            let r = if m == primary.ordering { primary.clone() } else { primary.with_ordering(m, boot.alpha)? };
            let name = format!("{id}_{}.csv", m.name());
            out.add(&name, formats::band_csv(&r.grid, &r.prediction, &r.band)?)?;
            band_files.push(name);
        }
        let contrasts_file = if cfg.contrasts.unwrap_or(false) {
            let name = format!("{id}_contrasts.csv");
            out.add(&name, formats::contrasts_csv(&primary)?)?;
            Some(name)
        } else {
            None
        };
        let meta = BandMetadata {
            target_id: t.id.clone(),
            x: t.x,
            y: t.y,
            b: boot.b,
            alpha: boot.alpha,
            seed: boot.seed,
            kept: primary.len(),
            dropped: primary.dropped,
            refit_mode: boot.refit_mode,
            orderings: methods.clone(),
            band_files,
            contrasts_file,
            jitter: primary.jitter,
            response_transform: file.response_transform,
            timings: Timings { setup_seconds: setup, replicates_seconds: total - setup },
        };
        out.add_json(format!("{id}.json"), &meta)?;
    }
    Ok(out)
}

/// Scenario JSON: one scenario, an explicit list, or the full design.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchManifest {
    pub full_design: bool,
    pub scenarios: Vec<Scenario>,
}

pub fn read_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let value: serde_json::Value = formats::read_json(path)?;
    let is_batch = value.as_object().is_some_and(|o| o.contains_key("scenarios") || o.contains_key("full_design"));
    let parse_err = |e: serde_json::Error| CliError::parse(path, e.line() as u64, e.to_string());
    let scenarios = if is_batch {
        let b: BatchManifest = serde_json::from_value(value).map_err(parse_err)?;
        let mut all = if b.full_design { Scenario::full_design() } else { Vec::new() };
        all.extend(b.scenarios);
        all
    } else {
        vec![serde_json::from_value(value).map_err(parse_err)?]
    };
    if scenarios.is_empty() {
        return Err(CliError::input(format!("{} lists no scenarios", path.display())));
    }
    for s in &scenarios {
        s.validate().map_err(|e| CliError::input(format!("scenario `{}` n={}: {e}", s.name, s.n)))?;
    }
    Ok(scenarios)
}

fn scenario_stem(s: &Scenario) -> String {
    let name: String = s.name.chars().map(|c| if c.is_ascii_alphanumeric() || "-.".contains(c) { c } else { '_' }).collect();
    format!("{name}_n{}", s.n)
}

#[derive(Serialize)]
struct SimulationSummary {
    #[serde(rename = "B")]
    b: usize,
    repetitions: usize,
    scenarios: Vec<ScenarioSummary>,
}

#[derive(Serialize)]
struct ScenarioSummary {
    name: String,
    n: usize,
    seed: u64,
    failures: usize,
    seconds: f64,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outputs> {
    let mut scenarios = read_scenarios(cfg.require(&cfg.input, "input")?)?;
    for s in &mut scenarios {
        if let Some(seed) = cfg.seed {
            s.seed = seed;
        }
        if let Some(t) = cfg.threshold {
            s.coverage_threshold = t;
        }
        if let Some(f) = &cfg.families {
            s.families = f.clone();
        }
    }
    let mut stems: Vec<String> = scenarios.iter().map(scenario_stem).collect();
    stems.sort();
    stems.dedup();
    if stems.len() != scenarios.len() {
        return Err(CliError::input("scenario name and size combinations must be unique"));
    }
    let b = cfg.b.unwrap_or(DEFAULT_SIM_B);
    let s = cfg.repetitions.unwrap_or(DEFAULT_REPETITIONS);
    let mut report = Vec::new();
    let mut runs = Vec::new();
    let mut variograms = Vec::new();
    let mut summaries = Vec::new();
    let mut out = Outputs::new();
    for sc in &scenarios {
        let started = Instant::now();
        log::info!("scenario {} n={}: {s} repetitions of B={b}", sc.name, sc.n);
        let (rep, first) = parallel::run_scenario(sc, b, s)?;
        let seconds = started.elapsed().as_secs_f64();
        report.extend(rep.rows.iter().cloned());
        runs.extend(rep.runs.iter().map(|r| RunRow {
            scenario: sc.name.clone(),
            n: sc.n,
            sigma2: sc.sigma2,
            phi: sc.phi,
            rep: r.rep,
            site: r.site.clone(),
            method: r.method,
            mean_width: r.mean_width,
            max_width: r.max_width,
            domain_coverage: r.domain_coverage,
        }));
        for (r, v) in &rep.variograms {
            variograms.push(VariogramRow {
                scenario: sc.name.clone(),
                n: sc.n,
                rep: *r,
                family: v.family.name().to_string(),
                nugget: v.nugget,
                scale: v.scale,
                range: v.range,
            });
        }
        if let Some(first) = first {
            export_repetition(&mut out, sc, &first)?;
        }
        summaries.push(ScenarioSummary { name: sc.name.clone(), n: sc.n, seed: sc.seed, failures: rep.failures, seconds });
    }
    out.add("report.csv", formats::report_csv(&report)?)?;
    out.add("runs.csv", formats::runs_csv(&runs)?)?;
    out.add("variograms.csv", variograms_csv(&variograms)?)?;
    out.add_json("summary.json", &SimulationSummary { b, repetitions: s, scenarios: summaries })?;
    Ok(out)
}

#[derive(Serialize)]
struct VariogramRow {
    scenario: String,
    n: usize,
    rep: u64,
    family: String,
    nugget: f64,
    scale: f64,
    range: f64,
}

fn variograms_csv(rows: &[VariogramRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}

/// Bands and raw data of one repetition, for plotting.
fn export_repetition(out: &mut Outputs, sc: &Scenario, rep: &RepetitionOutcome) -> Result<()> {
    let dir = scenario_stem(sc);
    let grid = sc.grid();
    for b in &rep.bands {
        let name = format!("bands/{dir}/{}_{}.csv", stem(&b.site)?, b.method.name());
        let table = formats::curve_table(
            &grid,
            &["t", "prediction", "lower", "upper", "truth"],
            &[&b.prediction, &b.band.lower, &b.band.upper, &b.truth],
        )?;
        out.add(name, table)?;
    }
    let data = gen_observations(sc, rep.rep)?;
    let n_fit = sc.n * grid.len();
    out.add(format!("data/{dir}_fitting.csv"), formats::observations_csv(&data.fitting[..n_fit.min(data.fitting.len())])?)?;
    out.add(format!("data/{dir}_validation.csv"), formats::observations_csv(&data.validation)?)?;
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig) -> Result<Outputs> {
    let input = cfg.require(&cfg.input, "input")?;
    if input.is_dir() {
        band_report(cfg, input)
    } else {
        runs_report(cfg, input)
    }
}

/// Re-aggregates simulation run records, e.g. at another coverage threshold.
fn runs_report(cfg: &RunConfig, input: &Path) -> Result<Outputs> {
    let rows = formats::read_runs(input)?;
    let mut groups: Vec<(Scenario, Vec<fked_core::simlab::RunRecord>)> = Vec::new();
    for r in &rows {
        let pos = groups.iter().position(|(s, _)| s.name == r.scenario && s.n == r.n);
        let k = match pos {
            Some(k) => k,
            None => {
                let sc = Scenario {
                    name: r.scenario.clone(),
                    n: r.n,
                    sigma2: r.sigma2,
                    phi: r.phi,
                    coverage_threshold: cfg.threshold.unwrap_or(1.0),
                    ..Scenario::default()
                };
                groups.push((sc, Vec::new()));
                groups.len() - 1
            }
        };
        groups[k].1.push(r.record());
    }
    let mut report = Vec::new();
    for (sc, recs) in &groups {
        report.extend(summarize(sc, recs)?);
    }
    let mut out = Outputs::new();
    out.add("report.csv", formats::report_csv(&report)?)?;
    Ok(out)
}

/// Width and coverage of the bands written by `bands`, against true curves
/// in the long observation format. With `--alpha`, bands are rebuilt from
/// the saved contrast ensembles at that level.
fn band_report(cfg: &RunConfig, dir: &Path) -> Result<Outputs> {
    let truth_path = cfg.require(&cfg.truth, "truth")?;
    let truth = formats::read_observations(truth_path)?;
    let mut metas: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::input(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    metas.sort();
    let mut rows = Vec::new();
    for path in metas {
        let Ok(meta) = formats::read_json::<BandMetadata>(&path) else { continue };
        let series: Vec<&RawObservation> = truth.iter().filter(|o| o.site_id == meta.target_id).collect();
        if series.is_empty() {
            return Err(CliError::input(format!("{} has no curve for target `{}`", truth_path.display(), meta.target_id)));
        }
        let t: Vec<f64> = series.iter().map(|o| o.t).collect();
        let y = series
            .iter()
            .map(|o| meta.response_transform.apply(o.value))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| CliError::input(format!("truth for `{}` cannot be transformed", meta.target_id)))?;
        let ensemble = match (&meta.contrasts_file, cfg.alpha) {
            (Some(f), Some(_)) => Some(formats::read_contrasts(&dir.join(f))?),
            _ => None,
        };
        let methods = cfg.ordering.map_or(meta.orderings.clone(), |o| o.methods());
        let first = meta.band_files.first().ok_or_else(|| CliError::input(format!("no band file for `{}`", meta.target_id)))?;
        let (grid, prediction, _) = formats::read_band(&dir.join(first))?;
        for m in &methods {
            let band = match (&ensemble, cfg.alpha) {
                (Some((cgrid, contrasts)), Some(alpha)) => {
                    if *cgrid != grid {
                        return Err(CliError::input(format!("contrasts of `{}` are on another grid", meta.target_id)));
                    }
                    BootstrapResult::from_contrasts(
                        grid.clone(),
                        prediction.clone(),
                        contrasts.clone(),
                        *m,
                        alpha,
                        meta.seed,
                        meta.b,
                        meta.dropped,
                        meta.jitter,
                    )?
                    .band
                }
                _ => {
                    let suffix = format!("_{}.csv", m.name());
                    let file = meta.band_files.iter().find(|f| f.ends_with(&suffix)).ok_or_else(|| {
                        CliError::input(format!("no {} band for `{}`; rerun bands or pass --alpha with saved contrasts", m.name(), meta.target_id))
                    })?;
                    formats::read_band(&dir.join(file))?.2
                }
            };
            let truth_values = formats::interpolate(&t, &y, &grid)
                .ok_or_else(|| CliError::input(format!("truth for `{}` does not span the band grid", meta.target_id)))?;
            let cov = fked_core::ordering::domain_coverage(&band, &truth_values)?;
            rows.push(CoverageRow::new(&meta.target_id, *m, &band, cov));
        }
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{} holds no band metadata", dir.display())));
    }
    let mut out = Outputs::new();
    out.add("coverage.csv", formats::coverage_csv(&rows)?)?;
    Ok(out)
}
