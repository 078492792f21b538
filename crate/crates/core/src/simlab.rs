//! Simulation study: spatially correlated functional fields on cubic
//! B-splines, a drift linear in the coordinates, pointwise noise, nested
//! fitting designs with fixed validation sites, and the evaluation loop that
//! scores bootstrap bands at the validation sites.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bootstrap::{finish, BootstrapConfig, BootstrapContext, RefitMode};
use crate::drift::{CovariateSet, DriftConfig, TargetCovariates};
use crate::fcurves::{fcv_select, smooth, uniform_grid, BasisSpec, CurveSet, RawObservation};
use crate::linalg::{Cholesky, Matrix};
use crate::okfd::FkedModel;
use crate::ordering::{band_width, Band, domain_coverage, functional_coverage, Ordering};
use crate::tracevario::{Family, VariogramConfig, VariogramModel, JITTER_BASE, JITTER_DOUBLINGS};
use crate::{Error, Result};

pub const DEFAULT_LAYOUT_SEED: u64 = 2_718;
pub const DEFAULT_SIM_SEED: u64 = 1_414;
/// Fitting sites always drawn, so the 25/50/90 designs are nested prefixes.
pub const FITTING_POOL: usize = 90;
pub const THETA: [f64; 10] = [0.2, 0.2, 0.4, 0.4, 0.6, 0.6, 0.8, 0.8, 1.0, 1.0];
pub const COEF_VAR: f64 = 0.05;
/// Penalties tried when smoothing the simulated observations.
pub const SMOOTHING_PENALTIES: [f64; 4] = [0.0, 1e-6, 1e-4, 1e-2];
/// Repetitions allowed to fail before a scenario run is abandoned.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub phi: f64,
    pub sigma2: f64,
    pub noise_var: f64,
    pub grid_len: usize,
    /// Sites live on `[0, region.0] x [0, region.1]`.
    pub region: (f64, f64),
    pub n_basis: usize,
    pub n_validation: usize,
    pub seed: u64,
    pub layout_seed: u64,
    pub min_separation: f64,
    /// Families the fitted model may choose from.
    pub families: Vec<Family>,
    /// Domain coverage a run needs to count towards functional coverage.
    pub coverage_threshold: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: String::from("default"),
            n: 25,
            phi: 0.5,
            sigma2: 0.25,
            noise_var: 0.09,
            grid_len: 101,
            region: (2.0, 3.0),
            n_basis: 10,
            n_validation: 10,
            seed: DEFAULT_SIM_SEED,
            layout_seed: DEFAULT_LAYOUT_SEED,
            min_separation: 0.08,
            families: Family::ALL.to_vec(),
            coverage_threshold: 1.0,
        }
    }
}

impl Scenario {
    pub fn new(n: usize, sigma2: f64, phi: f64) -> Self {
        Self { name: format!("sigma2={sigma2},phi={phi}"), n, sigma2, phi, ..Self::default() }
    }

    /// The full design: 3 scales x 3 ranges x 3 sample sizes.
    pub fn full_design() -> Vec<Scenario> {
        let mut out = Vec::new();
        for sigma2 in [0.25, 0.5, 0.75] {
            for phi in [0.5, 1.0, 1.5] {
                for n in [25, 50, 90] {
                    out.push(Self::new(n, sigma2, phi));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("scenario {}: {m}", self.name)));
        if self.n < 3 {
            return bad("n must be >= 3");
        }
        if !(self.phi > 0.0) || !(self.sigma2 >= 0.0) || !(self.noise_var >= 0.0) {
            return bad("phi must be > 0, sigma2 and noise_var >= 0");
        }
        if self.grid_len < 2 || self.n_basis < 4 || self.n_validation == 0 {
            return bad("grid_len >= 2, n_basis >= 4 and n_validation >= 1 required");
        }
        if !(self.region.0 > 0.0 && self.region.1 > 0.0) || !(self.min_separation >= 0.0) {
            return bad("region must be positive");
        }
        if self.families.is_empty() {
            return bad("no variogram family");
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.n.max(FITTING_POOL)
    }

    pub fn basis(&self) -> Result<BasisSpec> {
        BasisSpec::uniform(0.0, 1.0, self.n_basis, 0.0)
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(0.0, 1.0, self.grid_len)
    }

    /// Validation sites followed by the fitting pool; depends only on
    /// `layout_seed`, the region and the pool size.
    pub fn layout(&self) -> Result<Layout> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.layout_seed);
        let total = self.n_validation + self.pool_size();
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(total);
        let mut attempts = 0usize;
        while pts.len() < total {
            attempts += 1;
            if attempts > 1000 * total {
                return Err(Error::InvalidParameter(format!(
                    "cannot place {total} sites {} apart in the region",
                    self.min_separation
                )));
            }
            let p = (rng.random::<f64>() * self.region.0, rng.random::<f64>() * self.region.1);
            if pts.iter().all(|q| libm::hypot(p.0 - q.0, p.1 - q.1) >= self.min_separation) {
                pts.push(p);
            }
        }
        let fitting = pts.split_off(self.n_validation);
        Ok(Layout { validation: pts, fitting })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub validation: Vec<(f64, f64)>,
    /// Fitting pool; the first `n` sites are used.
    pub fitting: Vec<(f64, f64)>,
}

/// Spline coefficients of `α`, `β_1` (longitude) and `β_2` (latitude).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftCoefficients {
    pub alpha: Vec<f64>,
    pub beta_lon: Vec<f64>,
    pub beta_lat: Vec<f64>,
}

impl DriftCoefficients {
    /// Drift coefficients at a site: `α + β_1 lon + β_2 lat`.
    pub fn at(&self, site: (f64, f64)) -> Vec<f64> {
        (0..self.alpha.len()).map(|l| self.alpha[l] + self.beta_lon[l] * site.0 + self.beta_lat[l] * site.1).collect()
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Intercept coefficients from `N(1, 0.05 I)`, slope coefficients from
/// `N(ϑ, 0.05 I)`; `ϑ` is repeated cyclically for bases other than 10.
pub fn gen_drift<R: Rng>(n_basis: usize, rng: &mut R) -> DriftCoefficients {
    let sd = libm::sqrt(COEF_VAR);
    let alpha = (0..n_basis).map(|_| 1.0 + sd * normal(rng)).collect();
    let beta_lon = (0..n_basis).map(|l| THETA[l % THETA.len()] + sd * normal(rng)).collect();
    let beta_lat = (0..n_basis).map(|l| THETA[l % THETA.len()] + sd * normal(rng)).collect();
    DriftCoefficients { alpha, beta_lon, beta_lat }
}

/// Residual field coefficients `ξ_j(s)`, one row per site: each column is an
/// independent zero-mean Gaussian field with covariance `σ² exp(-h/φ)`.
pub fn gen_field<R: Rng>(coords: &[(f64, f64)], sigma2: f64, phi: f64, n_basis: usize, rng: &mut R) -> Result<Matrix> {
    let n = coords.len();
    let cov = Matrix::from_fn(n, n, |i, j| {
        let h = libm::hypot(coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
        sigma2 * libm::exp(-h / phi)
    });
    let mut xi = Matrix::zeros(n, n_basis);
    if sigma2 == 0.0 {
        return Ok(xi);
    }
    let (l, _) = Cholesky::with_jitter(&cov, JITTER_BASE * sigma2, JITTER_DOUBLINGS)?;
    let z = Matrix::from_fn(n, n_basis, |_, _| normal(rng));
    xi = l.mul_lower_rows(&z);
    Ok(xi)
}

/// One simulated data set on the validation sites plus the fitting pool.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub layout: Layout,
    pub drift: DriftCoefficients,
    /// Field coefficients, validation sites first, then the fitting pool.
    pub field: Matrix,
    pub fitting: Vec<RawObservation>,
    pub validation: Vec<RawObservation>,
}

fn observations<R: Rng>(
    ids: impl Iterator<Item = String>,
    coords: &[(f64, f64)],
    curves: &[Vec<f64>],
    grid: &[f64],
    noise_sd: f64,
    rng: &mut R,
) -> Vec<RawObservation> {
    let mut out = Vec::with_capacity(coords.len() * grid.len());
    for ((id, &(x, y)), curve) in ids.zip(coords).zip(curves) {
        for (&t, &v) in grid.iter().zip(curve) {
            out.push(RawObservation { site_id: id.clone(), x, y, t, value: v + noise_sd * normal(rng) });
        }
    }
    out
}

/// Observations of repetition `rep`. Everything is drawn over the full pool,
/// so the `n = 25` data are a subset of the `n = 90` data for the same seed.
pub fn gen_observations(scenario: &Scenario, rep: u64) -> Result<SimulatedData> {
    scenario.validate()?;
    let layout = scenario.layout()?;
    let basis = scenario.basis()?;
    let grid = scenario.grid();
    let eval = basis.eval_basis(&grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(rep);

    let drift = gen_drift(scenario.n_basis, &mut rng);
    let all: Vec<(f64, f64)> = layout.validation.iter().chain(&layout.fitting).copied().collect();
    let field = gen_field(&all, scenario.sigma2, scenario.phi, scenario.n_basis, &mut rng)?;
    let curves: Vec<Vec<f64>> = all
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let c: Vec<f64> = drift.at(s).iter().zip(field.row(i)).map(|(a, b)| a + b).collect();
            eval.mat_vec(&c)
        })
        .collect();
    let sd = libm::sqrt(scenario.noise_var);
    let nv = layout.validation.len();
    let validation = observations((1..=nv).map(|k| format!("v{k}")), &layout.validation, &curves[..nv], &grid, sd, &mut rng);
    let fitting =
        observations((1..).map(|k| format!("s{k}")), &layout.fitting, &curves[nv..], &grid, sd, &mut rng);
    Ok(SimulatedData { layout, drift, field, fitting, validation })
}

/// Smoothed fitting and validation curves for a given design size.
pub fn smooth_design(scenario: &Scenario, data: &SimulatedData) -> Result<(CurveSet, CurveSet)> {
    let per_site = scenario.grid_len;
    let fitting = &data.fitting[..scenario.n * per_site];
    let (nb, penalty) = fcv_select(fitting, (0.0, 1.0), &[scenario.n_basis], &SMOOTHING_PENALTIES)?;
    let spec = BasisSpec::uniform(0.0, 1.0, nb, penalty)?;
    Ok((smooth(fitting, &spec)?, smooth(&data.validation, &spec)?))
}

pub fn coordinate_covariates(curves: &CurveSet) -> CovariateSet {
    let coords = curves.coords();
    CovariateSet {
        scalar_names: vec![String::from("lon"), String::from("lat")],
        scalars: Matrix::from_fn(coords.len(), 2, |i, k| if k == 0 { coords[i].0 } else { coords[i].1 }),
        functional_names: Vec::new(),
        functionals: Vec::new(),
    }
}

/// Band metrics of one validation site under one ordering in one run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunRecord {
    pub rep: u64,
    pub site: String,
    pub method: Ordering,
    pub mean_width: f64,
    pub max_width: f64,
    pub domain_coverage: f64,
}

/// Band of one validation site under one ordering, with the truth curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteBand {
    pub site: String,
    pub method: Ordering,
    pub prediction: Vec<f64>,
    pub band: Band,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RepetitionOutcome {
    pub rep: u64,
    pub records: Vec<RunRecord>,
    pub bands: Vec<SiteBand>,
    pub variogram: VariogramModel,
    pub drift_iterations: usize,
    pub dropped: usize,
}

/// One full repetition: simulate, smooth, fit FKED, bootstrap every
/// validation site and score both orderings on the same contrasts.
/// `exec` runs the replicates of one target; pass [`sequential`] or a
/// parallel scheduler.
pub fn run_repetition_with<F>(scenario: &Scenario, rep: u64, boot: &BootstrapConfig, exec: F) -> Result<RepetitionOutcome>
where
    F: Fn(&BootstrapContext<'_>, &BootstrapConfig) -> Vec<Result<Vec<f64>>>,
{
    boot.validate()?;
    let data = gen_observations(scenario, rep)?;
    let (fit_curves, truth) = smooth_design(scenario, &data)?;
    let x = coordinate_covariates(&fit_curves);
    let config = DriftConfig {
        variogram: VariogramConfig::default().with_families(&scenario.families),
        ..DriftConfig::default()
    };
    let model = FkedModel::fit(&fit_curves, &x, &config)?;
    let mut records = Vec::new();
    let mut bands = Vec::new();
    let mut dropped = 0;
    for (k, site) in truth.sites.iter().enumerate() {
        let target = TargetCovariates { scalars: vec![site.x, site.y], functionals: Vec::new() };
        let ctx = BootstrapContext::new(&model, site.coords(), &target)?;
        let result = finish(&ctx, boot, exec(&ctx, boot))?;
        dropped += result.dropped;
        let truth_values = truth.curve_values(k);
        for method in Ordering::ALL {
            let r = if method == result.ordering { result.clone() } else { result.with_ordering(method, boot.alpha)? };
            let w = band_width(&r.band);
            records.push(RunRecord {
                rep,
                site: site.id.clone(),
                method,
                mean_width: w.mean,
                max_width: w.max,
                domain_coverage: domain_coverage(&r.band, &truth_values)?,
            });
            bands.push(SiteBand {
                site: site.id.clone(),
                method,
                prediction: r.prediction,
                band: r.band,
                truth: truth_values.clone(),
            });
        }
    }
    Ok(RepetitionOutcome { rep, records, bands, variogram: model.variogram, drift_iterations: model.drift.iterations(), dropped })
}

/// Runs the replicates of one target in order.
pub fn sequential(ctx: &BootstrapContext<'_>, boot: &BootstrapConfig) -> Vec<Result<Vec<f64>>> {
    (0..boot.b).map(|j| ctx.replicate(boot.seed, j, boot.refit_mode)).collect()
}

pub fn run_repetition(scenario: &Scenario, rep: u64, b: usize) -> Result<RepetitionOutcome> {
    run_repetition_with(scenario, rep, &repetition_bootstrap(scenario, rep, b), sequential)
}

/// Bootstrap settings of repetition `rep`; the replicate seed is derived
/// from the scenario seed so repetitions do not share resamples.
pub fn repetition_bootstrap(scenario: &Scenario, rep: u64, b: usize) -> BootstrapConfig {
    BootstrapConfig {
        b,
        alpha: 0.05,
        seed: scenario.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(rep),
        ordering: Ordering::Mbd,
        refit_mode: RefitMode::SinglePass,
    }
}

/// One row of the scenario report.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportRow {
    pub scenario: String,
    pub n: usize,
    pub sigma2: f64,
    pub phi: f64,
    pub site: String,
    pub method: Ordering,
    pub mean_width: f64,
    pub domain_coverage: f64,
    pub functional_coverage: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunRecord>,
    pub variograms: Vec<(u64, VariogramModel)>,
    pub failures: usize,
}

/// Averages run records per (site, method) over repetitions.
pub fn aggregate(scenario: &Scenario, outcomes: Vec<Result<RepetitionOutcome>>) -> Result<ScenarioReport> {
    let total = outcomes.len();
    if total == 0 {
        return Err(Error::InvalidParameter("a scenario needs at least one repetition".into()));
    }
    let mut runs = Vec::new();
    let mut variograms = Vec::new();
    let mut failures = 0;
    for o in outcomes {
        match o {
            Ok(o) => {
                variograms.push((o.rep, o.variogram));
                runs.extend(o.records);
            }
            Err(_) => failures += 1,
        }
    }
    if failures == total || failures as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed: failures, total });
    }
    let rows = summarize(scenario, &runs)?;
    Ok(ScenarioReport { scenario: scenario.clone(), rows, runs, variograms, failures })
}

/// Report rows from run records: per (site, method), in first-seen order,
/// mean width and coverage over repetitions plus functional coverage at the
/// scenario's threshold.
pub fn summarize(scenario: &Scenario, runs: &[RunRecord]) -> Result<Vec<ReportRow>> {
    let mut keys: Vec<(String, Ordering)> = Vec::new();
    for r in runs {
        if !keys.iter().any(|(s, m)| *s == r.site && *m == r.method) {
            keys.push((r.site.clone(), r.method));
        }
    }
    let mut rows = Vec::with_capacity(keys.len());
    for (site, method) in keys {
        let sel: Vec<&RunRecord> = runs.iter().filter(|r| r.site == site && r.method == method).collect();
        let k = sel.len() as f64;
        let cov: Vec<f64> = sel.iter().map(|r| r.domain_coverage).collect();
        rows.push(ReportRow {
            scenario: scenario.name.clone(),
            n: scenario.n,
            sigma2: scenario.sigma2,
            phi: scenario.phi,
            site,
            method,
            mean_width: sel.iter().map(|r| r.mean_width).sum::<f64>() / k,
            domain_coverage: cov.iter().sum::<f64>() / k,
            functional_coverage: functional_coverage(&cov, scenario.coverage_threshold)?,
        });
    }
    Ok(rows)
}

/// Smallest bootstrap size accepted for a scenario run.
pub const MIN_SCENARIO_B: usize = 50;

pub fn check_run_size(b: usize, s: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::InvalidParameter("S must be >= 1".into()));
    }
    if b < MIN_SCENARIO_B {
        return Err(Error::InvalidParameter(format!("scenario runs need B >= {MIN_SCENARIO_B}, got {b}")));
    }
    Ok(())
}

/// `s` repetitions with `b` bootstrap replicates each, run sequentially.
pub fn run_scenario(scenario: &Scenario, b: usize, s: usize) -> Result<ScenarioReport> {
    check_run_size(b, s)?;
    let outcomes = (0..s as u64).map(|rep| run_repetition(scenario, rep, b)).collect();
    aggregate(scenario, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_nested_and_separated() {
        let a = Scenario::new(25, 0.25, 0.5).layout().unwrap();
        let b = Scenario::new(90, 0.75, 1.5).layout().unwrap();
        assert_eq!(a, b);
        let big = Scenario::new(200, 0.5, 1.0).layout().unwrap();
        assert_eq!(big.validation, a.validation);
        assert_eq!(&big.fitting[..90], &a.fitting[..]);
        let all: Vec<_> = big.validation.iter().chain(&big.fitting).collect();
        for i in 0..all.len() {
            assert!(all[i].0 >= 0.0 && all[i].0 <= 2.0 && all[i].1 >= 0.0 && all[i].1 <= 3.0);
            for j in 0..i {
                assert!(libm::hypot(all[i].0 - all[j].0, all[i].1 - all[j].1) >= 0.08);
            }
        }
    }

    #[test]
    fn noiseless_fieldless_observations_are_the_drift() {
        let sc = Scenario { noise_var: 0.0, sigma2: 0.0, ..Scenario::default() };
        let d = gen_observations(&sc, 0).unwrap();
        let b = sc.basis().unwrap();
        let s0 = d.layout.fitting[0];
        let want = b.eval_basis(&sc.grid()).unwrap().mat_vec(&d.drift.at(s0));
        for (o, w) in d.fitting.iter().take(101).zip(&want) {
            assert_eq!(o.site_id, "s1");
            assert!((o.value - w).abs() < 1e-14);
        }
        assert_eq!(d.drift.at((0.0, 0.0)), d.drift.alpha);
    }

    #[test]
    fn same_seed_same_tables() {
        let sc = Scenario::default();
        let a = gen_observations(&sc, 3).unwrap();
        let b = gen_observations(&sc, 3).unwrap();
        assert_eq!(a.fitting, b.fitting);
        assert_ne!(a.fitting, gen_observations(&sc, 4).unwrap().fitting);
    }

    #[test]
    fn design_grid_and_validation() {
        assert_eq!(Scenario::full_design().len(), 27);
        assert!(Scenario { n: 2, ..Scenario::default() }.validate().is_err());
        assert!(Scenario { phi: 0.0, ..Scenario::default() }.validate().is_err());
        assert!(run_scenario(&Scenario::default(), 50, 0).is_err());
    }
}
