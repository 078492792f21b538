//! Semi-parametric spatial bootstrap for FKED prediction bands.
//!
//! Residual curves are whitened with the Cholesky factor of their fitted
//! spatial covariance, whole whitened curves are resampled with replacement
//! (`n + 1` draws), and the draws are recorrelated through the covariance
//! augmented with the target site. Each replicate yields synthetic data at the
//! sites and at the target; refitting FKED on the site data and predicting the
//! target gives a contrast curve `Ŷ*_0 - Y*_0`. The band is the target
//! prediction minus the envelope of the most central contrasts.
//!
//! All curve algebra happens on response-basis coefficient rows, which is
//! equivalent to working with grid values since every step is linear across
//! sites.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::drift::{DriftConfig, DriftDesign, GlsSolver, TargetCovariates};
use crate::fcurves::CurveSet;
use crate::linalg::{Cholesky, Matrix};
use crate::okfd::{combine_rows, solve_ok_weights, FkedModel};
use crate::ordering::{central_count, Band, CurveEnsemble};
use crate::tracevario::{
    empirical_from_coeffs, factor_with_jitter, fit_variogram, raw_covariance_matrix, L2Metric, VariogramConfig,
    JITTER_BASE, JITTER_DOUBLINGS,
};
use crate::{Error, Result};

pub use crate::ordering::Ordering;

pub const DEFAULT_SEED: u64 = 20_240_917;
/// Replicates whose refit fails are dropped; more than this fraction is fatal.
pub const MAX_DROP_FRACTION: f64 = 0.05;

/// How a replicate's data are refitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RefitMode {
    /// One GLS fit with the original correlation matrix and penalty, then a
    /// variogram refit of the same family and kriging.
    #[default]
    SinglePass,
    /// The whole iterative drift/variogram algorithm per replicate.
    FullIterative,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapConfig {
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub ordering: Ordering,
    pub refit_mode: RefitMode,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { b: 500, alpha: 0.05, seed: DEFAULT_SEED, ordering: Ordering::Mbd, refit_mode: RefitMode::SinglePass }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidParameter("B must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Level(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `ζ = L⁻¹ E` with `Σ = L Lᵀ`, factored under the jitter ladder.
pub fn decorrelate(rows: &Matrix, sigma: &Matrix) -> Result<Matrix> {
    if sigma.rows() != rows.rows() {
        return Err(Error::Incompatible(format!("{} rows against a {}-site covariance", rows.rows(), sigma.rows())));
    }
    let scale = (0..sigma.rows()).map(|i| sigma[(i, i)]).fold(0.0, f64::max);
    let (f, _) = Cholesky::with_jitter(sigma, JITTER_BASE * scale, JITTER_DOUBLINGS)?;
    Ok(f.solve_lower_rows(rows))
}

/// `Λ = [[Σ, cᵀ], [c, σ²]]`.
pub fn augmented_covariance(sigma: &Matrix, c: &[f64], sigma2: f64) -> Result<Matrix> {
    let n = sigma.rows();
    if c.len() != n || sigma.cols() != n {
        return Err(Error::Incompatible(format!("augmenting a {n}-site covariance with {} covariances", c.len())));
    }
    Ok(Matrix::from_fn(n + 1, n + 1, |i, j| match (i == n, j == n) {
        (false, false) => sigma[(i, j)],
        (true, false) => c[j],
        (false, true) => c[i],
        (true, true) => sigma2,
    }))
}

/// `R ζ*` with `Λ = R Rᵀ`; the last row is the synthetic target residual.
pub fn recorrelate(zeta_star: &Matrix, sigma: &Matrix, c: &[f64], sigma2: f64) -> Result<Matrix> {
    let lambda = augmented_covariance(sigma, c, sigma2)?;
    if zeta_star.rows() != lambda.rows() {
        return Err(Error::Incompatible(format!("{} resampled rows for {} sites", zeta_star.rows(), lambda.rows())));
    }
    let scale = (0..lambda.rows()).map(|i| lambda[(i, i)]).fold(0.0, f64::max);
    let (r, _) = Cholesky::with_jitter(&lambda, JITTER_BASE * scale, JITTER_DOUBLINGS)?;
    Ok(r.mul_lower_rows(zeta_star))
}

/// Generator for replicate `j`: one ChaCha stream per replicate under the
/// master seed, so replicates can run in any order.
pub fn replicate_rng(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

/// `count` indices drawn uniformly from `0..n` with replacement.
pub fn resample_indices<R: Rng>(rng: &mut R, n: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..n)).collect()
}

/// Everything about a model and target that stays fixed across replicates.
#[derive(Debug, Clone)]
pub struct BootstrapContext<'a> {
    model: &'a FkedModel,
    site: (f64, f64),
    target: TargetCovariates,
    coords: Vec<(f64, f64)>,
    /// FKED prediction at the target, coefficients and grid values.
    prediction: Vec<f64>,
    prediction_values: Vec<f64>,
    mu0: Vec<f64>,
    target_terms: Vec<Vec<f64>>,
    zeta: Matrix,
    r: Cholesky,
    jitter: f64,
    solver: GlsSolver,
    metric: L2Metric,
    variogram_config: VariogramConfig,
    eval: Matrix,
}

impl<'a> BootstrapContext<'a> {
    pub fn new(model: &'a FkedModel, site: (f64, f64), target: &TargetCovariates) -> Result<Self> {
        let coords = model.coords();
        let lambda = raw_covariance_matrix(&model.variogram, &coords, Some(site))?;
        let cov = factor_with_jitter(lambda, model.variogram.sill())?;
        let n = coords.len();
        let zeta = cov.factor.leading(n).solve_lower_rows(&model.residuals().coeffs);

        let pred = model.predict(site, target)?;
        let prediction_values = model.values_of(&pred.coeffs)?;
        let drift = &model.drift;
        let grid = model.grid();
        let design = DriftDesign::new(&model.covariates, grid)?;
        let solver = GlsSolver::new(&design, &drift.coef_basis, model.basis(), Some(&drift.k), drift.penalty)?;
        let target_terms = drift.transform.terms_for(target, grid)?;
        Ok(Self {
            model,
            site,
            target: target.clone(),
            coords,
            prediction: pred.coeffs,
            prediction_values,
            mu0: pred.drift,
            target_terms,
            zeta,
            r: cov.factor,
            jitter: cov.jitter,
            solver,
            metric: L2Metric::new(&model.basis().gram())?,
            variogram_config: model.config.variogram.clone().with_families(&[model.variogram.family]),
            eval: model.basis().eval_basis(grid)?,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.coords.len()
    }

    pub fn grid(&self) -> &[f64] {
        self.model.grid()
    }

    pub fn prediction_values(&self) -> &[f64] {
        &self.prediction_values
    }

    pub fn prediction_coeffs(&self) -> &[f64] {
        &self.prediction
    }

    /// Jitter added to the augmented covariance before factoring.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn whitened(&self) -> &Matrix {
        &self.zeta
    }

    /// Synthetic data for replicate `j`: `(Y* at the sites, Y*_0)` as
    /// coefficient rows.
    pub fn synthetic(&self, seed: u64, j: usize) -> (Matrix, Vec<f64>) {
        let n = self.n_sites();
        let mut rng = replicate_rng(seed, j);
        let idx = resample_indices(&mut rng, n, n + 1);
        let e = self.r.mul_lower_rows(&self.zeta.select_rows(&idx));
        let mut sites = self.model.drift.fitted.clone();
        for i in 0..n {
            for (y, v) in sites.row_mut(i).iter_mut().zip(e.row(i)) {
                *y += v;
            }
        }
        let y0 = self.mu0.iter().zip(e.row(n)).map(|(a, b)| a + b).collect();
        (sites, y0)
    }

    /// Contrast curve `Ŷ*_0 - Y*_0` of replicate `j` on the grid.
    pub fn replicate(&self, seed: u64, j: usize, mode: RefitMode) -> Result<Vec<f64>> {
        let (ystar, y0) = self.synthetic(seed, j);
        let pred0 = match mode {
            RefitMode::SinglePass => self.single_pass(&ystar)?,
            RefitMode::FullIterative => self.full_iterative(ystar)?,
        };
        let contrast: Vec<f64> = pred0.iter().zip(&y0).map(|(a, b)| a - b).collect();
        let values = self.eval.mat_vec(&contrast);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit(format!("replicate {j} produced a non-finite contrast")));
        }
        Ok(values)
    }

    fn single_pass(&self, ystar: &Matrix) -> Result<Vec<f64>> {
        let sol = self.solver.solve_values(&self.solver.response_values(ystar));
        let fitted = self.solver.project(&sol.fitted_values);
        let mut resid = ystar.clone();
        resid.add_scaled(&fitted, -1.0);
        let cfg = &self.variogram_config;
        let emp = empirical_from_coeffs(&self.coords, &resid, &self.metric, cfg.n_bins, cfg.max_dist_fraction)?;
        let vm = fit_variogram(&emp, cfg)?;
        let sys = solve_ok_weights(&vm, &self.coords, self.site)?;
        let drift0 = self.solver.project_one(&self.solver.drift_at(&sol.theta, &self.target_terms));
        let kriged = combine_rows(&sys.weights, &resid)?;
        Ok(drift0.iter().zip(&kriged).map(|(a, b)| a + b).collect())
    }

    fn full_iterative(&self, ystar: Matrix) -> Result<Vec<f64>> {
        let y = self.model.residuals().with_coeffs(ystar)?;
        let config = DriftConfig {
            penalty: Some(self.model.drift.penalty),
            variogram: self.variogram_config.clone(),
            coef_basis: Some(self.model.drift.coef_basis.clone()),
            ..self.model.config.clone()
        };
        let refit = FkedModel::fit(&y, &self.model.covariates, &config)?;
        Ok(refit.predict(self.site, &self.target)?.coeffs)
    }
}

/// Stacks replicate outcomes in replicate order, dropping failures, and
/// enforces the drop budget.
pub fn collect_replicates(grid_len: usize, outcomes: Vec<Result<Vec<f64>>>) -> Result<(Matrix, usize)> {
    let total = outcomes.len();
    let mut rows = Vec::with_capacity(total * grid_len);
    let mut dropped = 0;
    for o in outcomes {
        match o {
            Ok(v) => rows.extend_from_slice(&v),
            Err(_) => dropped += 1,
        }
    }
    if dropped == total || dropped as f64 > MAX_DROP_FRACTION * total as f64 {
        return Err(Error::TooManyDrops { dropped, total });
    }
    Ok((Matrix::from_vec(total - dropped, grid_len, rows), dropped))
}

/// Contrast sample, target prediction and band for one target.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapResult {
    pub grid: Vec<f64>,
    /// Retained contrast curves on the grid, in replicate order.
    pub contrasts: Matrix,
    pub prediction: Vec<f64>,
    pub band: Band,
    /// MBD or `L²` norm per retained contrast.
    pub order_stats: Vec<f64>,
    /// Indices of the contrasts that define the band.
    pub central: Vec<usize>,
    pub ordering: Ordering,
    pub alpha: f64,
    pub seed: u64,
    pub requested: usize,
    pub dropped: usize,
    pub jitter: f64,
}

impl BootstrapResult {
    #[allow(clippy::too_many_arguments)]
    pub fn from_contrasts(
        grid: Vec<f64>,
        prediction: Vec<f64>,
        contrasts: Matrix,
        ordering: Ordering,
        alpha: f64,
        seed: u64,
        requested: usize,
        dropped: usize,
        jitter: f64,
    ) -> Result<Self> {
        if prediction.len() != grid.len() {
            return Err(Error::Incompatible("prediction and grid lengths differ".into()));
        }
        let mut out = Self {
            grid,
            contrasts,
            prediction,
            band: Band { lower: Vec::new(), upper: Vec::new() },
            order_stats: Vec::new(),
            central: Vec::new(),
            ordering,
            alpha,
            seed,
            requested,
            dropped,
            jitter,
        };
        out.rebuild_band()?;
        Ok(out)
    }

    fn rebuild_band(&mut self) -> Result<()> {
        let ens = CurveEnsemble::new(self.contrasts.clone(), self.grid.clone())?;
        // fewer than 1/(1 - α) replicates keep only the most central one
        let k = match central_count(ens.len(), self.alpha) {
            Err(Error::Level(_)) if (0.0..1.0).contains(&self.alpha) && !ens.is_empty() => 1,
            other => other?,
        };
        let (idx, stats) = ens.rank(self.ordering);
        let env = ens.envelope(&idx[..k])?;
        self.band = Band {
            lower: self.prediction.iter().zip(&env.upper).map(|(p, c)| p - c).collect(),
            upper: self.prediction.iter().zip(&env.lower).map(|(p, c)| p - c).collect(),
        };
        self.order_stats = stats;
        self.central = idx[..k].to_vec();
        Ok(())
    }

    /// Same contrast sample under another ordering or level.
    pub fn with_ordering(&self, ordering: Ordering, alpha: f64) -> Result<Self> {
        let mut out = self.clone();
        out.ordering = ordering;
        out.alpha = alpha;
        out.rebuild_band()?;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.contrasts.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.contrasts.rows() == 0
    }
}

/// `(Ŷ - max central contrast, Ŷ - min central contrast)`.
pub fn prediction_interval(result: &BootstrapResult) -> (Vec<f64>, Vec<f64>) {
    (result.band.lower.clone(), result.band.upper.clone())
}

/// Sequential bootstrap at one target.
pub fn run_bootstrap(
    model: &FkedModel,
    site: (f64, f64),
    target: &TargetCovariates,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    config.validate()?;
    let ctx = BootstrapContext::new(model, site, target)?;
    let outcomes = (0..config.b).map(|j| ctx.replicate(config.seed, j, config.refit_mode)).collect();
    finish(&ctx, config, outcomes)
}

/// Builds the result from replicate outcomes produced by any scheduler.
pub fn finish(ctx: &BootstrapContext<'_>, config: &BootstrapConfig, outcomes: Vec<Result<Vec<f64>>>) -> Result<BootstrapResult> {
    let grid = ctx.grid().to_vec();
    let (contrasts, dropped) = collect_replicates(grid.len(), outcomes)?;
    BootstrapResult::from_contrasts(
        grid,
        ctx.prediction_values().to_vec(),
        contrasts,
        config.ordering,
        config.alpha,
        config.seed,
        config.b,
        dropped,
        ctx.jitter(),
    )
}

/// Curve set of synthetic site data, for inspection.
pub fn synthetic_curves(ctx: &BootstrapContext<'_>, seed: u64, j: usize) -> Result<CurveSet> {
    ctx.model.residuals().with_coeffs(ctx.synthetic(seed, j).0)
}
