//! Functional concurrent linear drift
//! `μ_i(t) = α(t) + Σ_p γ_p(t) C_{p,i} + Σ_q β_q(t) X_{q,i}(t)`
//! fitted by penalized generalized least squares.
//!
//! All `n x M` grid observations are stacked with covariance `K ⊗ I_M`
//! (spatial correlation `K` across sites, independence across grid points),
//! whitened through the Cholesky factor of `K`, and the coefficient curves are
//! expanded on a B-spline basis with a shared second-derivative penalty.
//! [`iterate_drift`] alternates this fit with trace-variogram estimation on
//! the residual curves until the AIC settles.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::fcurves::{BasisSpec, CurveSet, Smoother, ORDER};
use crate::linalg::{Cholesky, Matrix};
use crate::tracevario::{
    correlation_matrix, empirical_trace_semivariogram, fit_variogram, VariogramConfig, VariogramModel, JITTER_BASE,
    JITTER_DOUBLINGS,
};
use crate::{Error, Result};

/// Iteration stops once `|AIC_j - AIC_{j-1}| / |AIC_{j-1}|` drops below this.
pub const AIC_RATE_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 10;
pub const PENALTY_GRID_LEN: usize = 7;

/// Relative AIC change between two iterations.
pub fn aic_rate(previous: f64, current: f64) -> f64 {
    libm::fabs((current - previous) / previous)
}

pub fn rate_converged(rate: f64) -> bool {
    rate < AIC_RATE_TOL
}

/// Candidate penalties for GCV selection: `N * 10^k` for `k = -8..=-2`, where
/// `N` is the number of stacked observations, so the grid tracks the size of
/// the data term.
pub fn penalty_grid(n_obs: usize) -> [f64; PENALTY_GRID_LEN] {
    core::array::from_fn(|k| n_obs as f64 * libm::pow(10.0, k as f64 - 8.0))
}

/// Scalar and functional covariates observed at the response sites.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovariateSet {
    pub scalar_names: Vec<String>,
    /// `n x P`.
    pub scalars: Matrix,
    pub functional_names: Vec<String>,
    /// `Q` curve sets, each with one curve per response site (same order).
    pub functionals: Vec<CurveSet>,
}

impl CovariateSet {
    /// Intercept-only drift.
    pub fn none(n_sites: usize) -> Self {
        Self { scalar_names: Vec::new(), scalars: Matrix::zeros(n_sites, 0), functional_names: Vec::new(), functionals: Vec::new() }
    }

    pub fn new(
        scalar_names: Vec<String>,
        scalars: Matrix,
        functional_names: Vec<String>,
        functionals: Vec<CurveSet>,
    ) -> Result<Self> {
        if scalar_names.len() != scalars.cols() || functional_names.len() != functionals.len() {
            return Err(Error::Incompatible("covariate names do not match covariate data".into()));
        }
        let n = scalars.rows();
        if functionals.iter().any(|f| f.len() != n) {
            return Err(Error::Incompatible("functional covariates must cover every site".into()));
        }
        if scalars.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite scalar covariate".into()));
        }
        Ok(Self { scalar_names, scalars, functional_names, functionals })
    }

    pub fn n_sites(&self) -> usize {
        self.scalars.rows()
    }

    pub fn n_scalars(&self) -> usize {
        self.scalars.cols()
    }

    pub fn n_functionals(&self) -> usize {
        self.functionals.len()
    }

    /// Covariates of site `i`, as they would be supplied for a new target.
    pub fn target_at(&self, i: usize) -> TargetCovariates {
        TargetCovariates {
            scalars: self.scalars.row(i).to_vec(),
            functionals: self.functionals.iter().map(|f| f.coeffs.row(i).to_vec()).collect(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            scalar_names: self.scalar_names.clone(),
            scalars: self.scalars.select_rows(idx),
            functional_names: self.functional_names.clone(),
            functionals: self.functionals.iter().map(|f| f.subset(idx)).collect(),
        }
    }
}

/// Covariates at a prediction site: raw scalar values and functional
/// covariates as coefficient vectors on their own bases.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetCovariates {
    pub scalars: Vec<f64>,
    pub functionals: Vec<Vec<f64>>,
}

/// Standardization applied to covariates inside the fit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovariateTransform {
    pub scalar_mean: Vec<f64>,
    pub scalar_sd: Vec<f64>,
    /// Pointwise mean of each functional covariate on the grid.
    pub functional_mean: Vec<Vec<f64>>,
    pub functional_bases: Vec<BasisSpec>,
}

impl CovariateTransform {
    fn from_covariates(x: &CovariateSet, grid: &[f64]) -> Result<Self> {
        let n = x.n_sites() as f64;
        let mut scalar_mean = Vec::new();
        let mut scalar_sd = Vec::new();
        for p in 0..x.n_scalars() {
            let col = x.scalars.column(p);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = libm::sqrt(var);
            scalar_mean.push(mean);
            scalar_sd.push(if sd > 0.0 { sd } else { 1.0 });
        }
        let mut functional_mean = Vec::new();
        for f in &x.functionals {
            let b = f.basis.eval_basis(grid)?;
            let mean_coef: Vec<f64> = (0..f.basis.n_basis).map(|l| f.coeffs.column(l).iter().sum::<f64>() / n).collect();
            functional_mean.push(b.mat_vec(&mean_coef));
        }
        Ok(Self {
            scalar_mean,
            scalar_sd,
            functional_mean,
            functional_bases: x.functionals.iter().map(|f| f.basis.clone()).collect(),
        })
    }

    fn n_terms(&self) -> usize {
        1 + self.scalar_mean.len() + self.functional_mean.len()
    }

    /// Standardized term values on the grid for one site.
    pub(crate) fn terms_for(&self, target: &TargetCovariates, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (p, q) = (self.scalar_mean.len(), self.functional_mean.len());
        if target.scalars.len() != p {
            return Err(Error::Arity { expected: p, got: target.scalars.len() });
        }
        if target.functionals.len() != q {
            return Err(Error::Arity { expected: q, got: target.functionals.len() });
        }
        let m = grid.len();
        let mut out = Vec::with_capacity(1 + p + q);
        out.push(vec![1.0; m]);
        for k in 0..p {
            let v = (target.scalars[k] - self.scalar_mean[k]) / self.scalar_sd[k];
            out.push(vec![v; m]);
        }
        for k in 0..q {
            let basis = &self.functional_bases[k];
            let coef = &target.functionals[k];
            if coef.len() != basis.n_basis {
                return Err(Error::Arity { expected: basis.n_basis, got: coef.len() });
            }
            let vals = basis.eval_basis(grid)?.mat_vec(coef);
            out.push(vals.iter().zip(&self.functional_mean[k]).map(|(v, c)| v - c).collect());
        }
        Ok(out)
    }
}

/// Standardized design values: one `n x M` matrix per model term
/// (intercept, scalars, functionals).
#[derive(Debug, Clone)]
pub struct DriftDesign {
    pub grid: Vec<f64>,
    pub transform: CovariateTransform,
    terms: Vec<Matrix>,
}

impl DriftDesign {
    pub fn new(x: &CovariateSet, grid: &[f64]) -> Result<Self> {
        let transform = CovariateTransform::from_covariates(x, grid)?;
        let n = x.n_sites();
        let nt = transform.n_terms();
        let mut terms = vec![Matrix::zeros(n, grid.len()); nt];
        for i in 0..n {
            let site_terms = transform.terms_for(&x.target_at(i), grid)?;
            for (k, vals) in site_terms.into_iter().enumerate() {
                terms[k].row_mut(i).copy_from_slice(&vals);
            }
        }
        Ok(Self { grid: grid.to_vec(), transform, terms })
    }

    pub fn n_sites(&self) -> usize {
        self.terms[0].rows()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }
}

/// Evaluates per-term coefficient curves on the grid: `out[k][j] = β_k(t_j)`.
fn coefficient_values(theta: &[f64], nb: usize, local: &[(usize, [f64; ORDER])], n_terms: usize) -> Vec<Vec<f64>> {
    (0..n_terms)
        .map(|k| {
            let th = &theta[k * nb..(k + 1) * nb];
            local.iter().map(|(i0, v)| (0..ORDER).map(|a| v[a] * th[i0 + a]).sum()).collect()
        })
        .collect()
}

/// Penalized GLS system for a fixed design, correlation matrix and penalty.
///
/// Building it is the expensive part; [`GlsSolver::solve_values`] is cheap,
/// which is what bootstrap replicates rely on.
#[derive(Debug, Clone)]
pub struct GlsSolver {
    coef_basis: BasisSpec,
    n_terms: usize,
    local: Vec<(usize, [f64; ORDER])>,
    raw_terms: Vec<Matrix>,
    white_terms: Vec<Matrix>,
    k: Matrix,
    k_factor: Option<Cholesky>,
    data_part: Matrix,
    a_factor: Cholesky,
    penalty: f64,
    edf: f64,
    response_basis: BasisSpec,
    response_eval: Matrix,
    projector: Smoother,
}

/// Output of one GLS solve.
#[derive(Debug, Clone)]
pub struct GlsSolution {
    pub theta: Vec<f64>,
    /// Whitened residual sum of squares.
    pub rss: f64,
    /// Whitened total sum of squares, for degeneracy checks.
    pub tss: f64,
    /// Unwhitened drift values, `n x M`.
    pub fitted_values: Matrix,
}

impl GlsSolver {
    pub fn new(
        design: &DriftDesign,
        coef_basis: &BasisSpec,
        response_basis: &BasisSpec,
        k: Option<&Matrix>,
        penalty: f64,
    ) -> Result<Self> {
        let n = design.n_sites();
        let nt = design.n_terms();
        let nb = coef_basis.n_basis;
        if !(penalty >= 0.0) || !penalty.is_finite() {
            return Err(Error::InvalidParameter(format!("penalty must be >= 0, got {penalty}")));
        }
        let local = coef_basis.local_values(&design.grid)?;
        let (k, k_factor) = match k {
            None => (Matrix::identity(n), None),
            Some(k) => {
                if k.rows() != n || k.cols() != n || !k.is_symmetric(1e-10) {
                    return Err(Error::Incompatible(format!("correlation matrix must be symmetric {n} x {n}")));
                }
                let (f, _) = Cholesky::with_jitter(k, JITTER_BASE, JITTER_DOUBLINGS)?;
                (k.clone(), Some(f))
            }
        };
        let white_terms: Vec<Matrix> = match &k_factor {
            None => design.terms.clone(),
            Some(f) => design.terms.iter().map(|z| f.solve_lower_rows(z)).collect(),
        };
        let p = nt * nb;
        let mut data_part = Matrix::zeros(p, p);
        let mut g = vec![0.0; nt * nt];
        for (j, (i0, v)) in local.iter().enumerate() {
            for a in 0..nt {
                for b in 0..=a {
                    let s: f64 = (0..n).map(|i| white_terms[a][(i, j)] * white_terms[b][(i, j)]).sum();
                    g[a * nt + b] = s;
                    g[b * nt + a] = s;
                }
            }
            for a in 0..nt {
                for b in 0..nt {
                    let gab = g[a * nt + b];
                    if gab == 0.0 {
                        continue;
                    }
                    for r in 0..ORDER {
                        let row = a * nb + i0 + r;
                        for c in 0..ORDER {
                            data_part[(row, b * nb + i0 + c)] += gab * v[r] * v[c];
                        }
                    }
                }
            }
        }
        let response_eval = response_basis.eval_basis(&design.grid)?;
        let projector = Smoother::new(&response_basis.with_penalty(0.0)?, &design.grid)?;
        let mut solver = Self {
            coef_basis: coef_basis.clone(),
            n_terms: nt,
            local,
            raw_terms: design.terms.clone(),
            white_terms,
            k,
            k_factor,
            data_part,
            a_factor: Cholesky::new(&Matrix::identity(1))?,
            penalty,
            edf: 0.0,
            response_basis: response_basis.clone(),
            response_eval,
            projector,
        };
        solver.set_penalty(penalty)?;
        Ok(solver)
    }

    /// Refactors the system for another penalty, reusing the data term.
    pub fn set_penalty(&mut self, penalty: f64) -> Result<()> {
        let nb = self.coef_basis.n_basis;
        let p = self.n_terms * nb;
        let mut a = self.data_part.clone();
        let rough = self.coef_basis.roughness();
        if penalty > 0.0 {
            for k in 0..self.n_terms {
                for r in 0..nb {
                    for c in 0..nb {
                        a[(k * nb + r, k * nb + c)] += penalty * rough[(r, c)];
                    }
                }
            }
        }
        let a_factor = Cholesky::with_pivot_floor(&a, 1e-13).map_err(|_| {
            Error::Rank(format!("penalized design with {} terms is singular at penalty {penalty}", self.n_terms))
        })?;
        // edf = tr(A^{-1} (A - λP)) = p - λ tr(A^{-1} P)
        let edf = if penalty > 0.0 {
            let inv = a_factor.inverse();
            let mut tr = 0.0;
            for k in 0..self.n_terms {
                for r in 0..nb {
                    for c in 0..nb {
                        tr += inv[(k * nb + r, k * nb + c)] * rough[(c, r)];
                    }
                }
            }
            p as f64 - penalty * tr
        } else {
            p as f64
        };
        self.a_factor = a_factor;
        self.penalty = penalty;
        self.edf = edf;
        Ok(())
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn edf(&self) -> f64 {
        self.edf
    }

    pub fn correlation(&self) -> &Matrix {
        &self.k
    }

    pub fn n_obs(&self) -> usize {
        self.raw_terms[0].rows() * self.local.len()
    }

    /// Solves for response values `y` (`n x M`, grid values).
    pub fn solve_values(&self, y: &Matrix) -> GlsSolution {
        let nb = self.coef_basis.n_basis;
        let nt = self.n_terms;
        let (n, m) = (y.rows(), y.cols());
        let yw = match &self.k_factor {
            None => y.clone(),
            Some(f) => f.solve_lower_rows(y),
        };
        let mut rhs = vec![0.0; nt * nb];
        for (j, (i0, v)) in self.local.iter().enumerate() {
            for k in 0..nt {
                let s: f64 = (0..n).map(|i| self.white_terms[k][(i, j)] * yw[(i, j)]).sum();
                for r in 0..ORDER {
                    rhs[k * nb + i0 + r] += s * v[r];
                }
            }
        }
        let theta = self.a_factor.solve(&rhs);
        let beta = coefficient_values(&theta, nb, &self.local, nt);
        let mut rss = 0.0;
        let mut tss = 0.0;
        let mut fitted_values = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let mut wf = 0.0;
                let mut f = 0.0;
                for k in 0..nt {
                    wf += self.white_terms[k][(i, j)] * beta[k][j];
                    f += self.raw_terms[k][(i, j)] * beta[k][j];
                }
                let r = yw[(i, j)] - wf;
                rss += r * r;
                tss += yw[(i, j)] * yw[(i, j)];
                fitted_values[(i, j)] = f;
            }
        }
        GlsSolution { theta, rss, tss, fitted_values }
    }

    /// Grid values of curves given as response-basis coefficient rows.
    pub fn response_values(&self, coeffs: &Matrix) -> Matrix {
        coeffs.matmul_t(&self.response_eval)
    }

    /// Least-squares projection of grid values onto the response basis.
    pub fn project(&self, values: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(values.rows(), self.response_basis.n_basis);
        for i in 0..values.rows() {
            out.row_mut(i).copy_from_slice(&self.projector.fit(values.row(i)));
        }
        out
    }

    /// Drift values on the grid at a site with the given standardized term
    /// values.
    pub fn drift_at(&self, theta: &[f64], terms: &[Vec<f64>]) -> Vec<f64> {
        let beta = coefficient_values(theta, self.coef_basis.n_basis, &self.local, self.n_terms);
        (0..self.local.len()).map(|j| terms.iter().zip(&beta).map(|(z, b)| z[j] * b[j]).sum()).collect()
    }

    pub fn project_one(&self, values: &[f64]) -> Vec<f64> {
        self.projector.fit(values)
    }
}

/// Functional coefficients of a fitted drift, the correlation matrix used and
/// the residual curves.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DriftFit {
    pub coef_basis: BasisSpec,
    /// Per-term coefficient vectors on `coef_basis`, standardized covariate
    /// scale: intercept first, then scalars, then functionals.
    pub theta: Vec<Vec<f64>>,
    pub transform: CovariateTransform,
    pub grid: Vec<f64>,
    /// Residual correlation across sites used for this fit.
    pub k: Matrix,
    pub aic_trace: Vec<f64>,
    pub edf: f64,
    /// Whitened residual sum of squares.
    pub rss: f64,
    pub n_obs: usize,
    pub penalty: f64,
    /// Fitted drift per site, as response-basis coefficients.
    pub fitted: Matrix,
    pub residuals: CurveSet,
    /// Residuals vanished, AIC is `-inf`.
    pub degenerate: bool,
    pub converged: bool,
    pub warning: Option<String>,
    /// Variogram that produced `k`, if any.
    pub variogram: Option<VariogramModel>,
}

impl DriftFit {
    pub fn n_scalars(&self) -> usize {
        self.transform.scalar_mean.len()
    }

    pub fn n_functionals(&self) -> usize {
        self.transform.functional_mean.len()
    }

    pub fn iterations(&self) -> usize {
        self.aic_trace.len()
    }

    fn term_values(&self, k: usize) -> Vec<f64> {
        let local = self.coef_basis.local_values(&self.grid).expect("grid inside basis domain");
        let th = &self.theta[k];
        local.iter().map(|(i0, v)| (0..ORDER).map(|a| v[a] * th[i0 + a]).sum()).collect()
    }

    /// `γ_p(t)` per unit of the raw scalar covariate.
    pub fn gamma(&self, p: usize) -> Vec<f64> {
        let sd = self.transform.scalar_sd[p];
        self.term_values(1 + p).into_iter().map(|v| v / sd).collect()
    }

    /// `β_q(t)` per unit of the raw functional covariate.
    pub fn beta(&self, q: usize) -> Vec<f64> {
        self.term_values(1 + self.n_scalars() + q)
    }

    /// Intercept `α(t)` on the raw covariate scale: the drift at all-zero
    /// covariates.
    pub fn alpha(&self) -> Vec<f64> {
        let mut a = self.term_values(0);
        for p in 0..self.n_scalars() {
            let shift = self.transform.scalar_mean[p] / self.transform.scalar_sd[p];
            for (av, g) in a.iter_mut().zip(self.term_values(1 + p)) {
                *av -= g * shift;
            }
        }
        for q in 0..self.n_functionals() {
            for ((av, b), c) in a.iter_mut().zip(self.beta(q)).zip(&self.transform.functional_mean[q]) {
                *av -= b * c;
            }
        }
        a
    }
}

/// `N log(RSS / N) + 2 edf`; `-inf` when the residuals vanish.
pub fn aic(fit: &DriftFit) -> f64 {
    aic_from(fit.rss, fit.n_obs, fit.edf, fit.degenerate)
}

fn aic_from(rss: f64, n_obs: usize, edf: f64, degenerate: bool) -> f64 {
    if degenerate || rss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = n_obs as f64;
    n * libm::log(rss / n) + 2.0 * edf
}

fn check_inputs(y: &CurveSet, x: &CovariateSet, coef_basis: &BasisSpec) -> Result<()> {
    if x.n_sites() != y.len() {
        return Err(Error::Incompatible(format!("{} covariate rows for {} response sites", x.n_sites(), y.len())));
    }
    if coef_basis.domain != y.basis.domain {
        return Err(Error::Incompatible("coefficient basis must share the response domain".into()));
    }
    Ok(())
}

/// Packs a solver output into a [`DriftFit`].
pub(crate) fn assemble_fit(
    y: &CurveSet,
    design: &DriftDesign,
    solver: &GlsSolver,
    sol: GlsSolution,
    variogram: Option<VariogramModel>,
) -> Result<DriftFit> {
    let nb = solver.coef_basis.n_basis;
    let fitted = solver.project(&sol.fitted_values);
    let mut resid = y.coeffs.clone();
    resid.add_scaled(&fitted, -1.0);
    let residuals = y.with_coeffs(resid)?;
    let degenerate = sol.rss <= 1e-20 * sol.tss || sol.rss == 0.0;
    let mut fit = DriftFit {
        coef_basis: solver.coef_basis.clone(),
        theta: sol.theta.chunks(nb).map(|c| c.to_vec()).collect(),
        transform: design.transform.clone(),
        grid: design.grid.clone(),
        k: solver.k.clone(),
        aic_trace: Vec::new(),
        edf: solver.edf,
        rss: sol.rss,
        n_obs: solver.n_obs(),
        penalty: solver.penalty,
        fitted,
        residuals,
        degenerate,
        converged: degenerate,
        warning: None,
        variogram,
    };
    fit.aic_trace.push(aic(&fit));
    Ok(fit)
}

/// One penalized GLS fit of the concurrent model. `k = None` means
/// independent sites.
pub fn fit_concurrent(
    y: &CurveSet,
    x: &CovariateSet,
    coef_basis: &BasisSpec,
    penalty: f64,
    k: Option<&Matrix>,
) -> Result<DriftFit> {
    check_inputs(y, x, coef_basis)?;
    let design = DriftDesign::new(x, &y.eval_grid)?;
    let solver = GlsSolver::new(&design, coef_basis, &y.basis, k, penalty)?;
    let sol = solver.solve_values(&y.values());
    assemble_fit(y, &design, &solver, sol, None)
}

/// GCV choice of the shared penalty over [`penalty_grid`], at independence.
pub fn select_penalty(y: &CurveSet, x: &CovariateSet, coef_basis: &BasisSpec) -> Result<f64> {
    check_inputs(y, x, coef_basis)?;
    let design = DriftDesign::new(x, &y.eval_grid)?;
    let values = y.values();
    let n_obs = values.rows() * values.cols();
    let grid = penalty_grid(n_obs);
    let mut solver = GlsSolver::new(&design, coef_basis, &y.basis, None, grid[0])?;
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for &lambda in &grid {
        if let Err(e) = solver.set_penalty(lambda) {
            last_err = Some(e);
            continue;
        }
        let sol = solver.solve_values(&values);
        let denom = n_obs as f64 - solver.edf();
        if denom <= 0.0 {
            continue;
        }
        let gcv = n_obs as f64 * sol.rss / (denom * denom);
        if best.is_none_or(|(b, _)| gcv < b) {
            best = Some((gcv, lambda));
        }
    }
    best.map(|(_, l)| l).ok_or_else(|| last_err.unwrap_or_else(|| Error::Rank("no admissible penalty".into())))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DriftConfig {
    /// Fixed penalty, or `None` for GCV selection.
    pub penalty: Option<f64>,
    pub max_iter: usize,
    pub variogram: VariogramConfig,
    /// Basis of the coefficient curves; defaults to the response basis.
    pub coef_basis: Option<BasisSpec>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { penalty: None, max_iter: DEFAULT_MAX_ITER, variogram: VariogramConfig::default(), coef_basis: None }
    }
}

/// Alternates drift fitting with trace-variogram estimation on the residuals
/// until the AIC rate falls below [`AIC_RATE_TOL`] or `max_iter` fits were
/// made. A variogram failure mid-way returns the last fit with `warning` set.
pub fn iterate_drift(y: &CurveSet, x: &CovariateSet, config: &DriftConfig) -> Result<DriftFit> {
    if y.len() < 3 {
        return Err(Error::InvalidParameter("the iterative drift fit needs at least 3 sites".into()));
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
    }
    let coef_basis = config.coef_basis.clone().unwrap_or_else(|| y.basis.clone());
    let penalty = match config.penalty {
        Some(p) => p,
        None => select_penalty(y, x, &coef_basis)?,
    };
    let mut fit = fit_concurrent(y, x, &coef_basis, penalty, None)?;
    if fit.degenerate {
        return Ok(fit);
    }
    let coords = y.coords();
    while fit.aic_trace.len() < config.max_iter {
        let step = empirical_trace_semivariogram(&fit.residuals, config.variogram.n_bins, config.variogram.max_dist_fraction)
            .and_then(|emp| fit_variogram(&emp, &config.variogram))
            .and_then(|vm| Ok((vm, correlation_matrix(&vm, &coords)?)))
            .and_then(|(vm, k)| {
                let mut next = fit_concurrent(y, x, &coef_basis, penalty, Some(&k))?;
                next.variogram = Some(vm);
                Ok(next)
            });
        let mut next = match step {
            Ok(next) => next,
            Err(e) => {
                fit.warning = Some(format!("stopped after {} fits: {e}", fit.aic_trace.len()));
                return Ok(fit);
            }
        };
        let previous = *fit.aic_trace.last().expect("nonempty trace");
        let current = next.aic_trace[0];
        let mut trace = core::mem::take(&mut fit.aic_trace);
        trace.push(current);
        next.aic_trace = trace;
        let done = next.degenerate || rate_converged(aic_rate(previous, current));
        next.converged = done;
        fit = next;
        if done {
            break;
        }
    }
    Ok(fit)
}

/// Drift at a new site, `μ_0(t)`, as grid values (not projected).
pub fn predict_drift_values(fit: &DriftFit, target: &TargetCovariates) -> Result<Vec<f64>> {
    let terms = fit.transform.terms_for(target, &fit.grid)?;
    let nb = fit.coef_basis.n_basis;
    let local = fit.coef_basis.local_values(&fit.grid)?;
    let theta: Vec<f64> = fit.theta.concat();
    let beta = coefficient_values(&theta, nb, &local, terms.len());
    Ok((0..fit.grid.len()).map(|j| terms.iter().zip(&beta).map(|(z, b)| z[j] * b[j]).sum()).collect())
}

/// Drift at a new site as a curve on the response basis.
pub fn predict_drift(fit: &DriftFit, target: &TargetCovariates) -> Result<Vec<f64>> {
    let values = predict_drift_values(fit, target)?;
    let projector = Smoother::new(&fit.residuals.basis.with_penalty(0.0)?, &fit.grid)?;
    Ok(projector.fit(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcurves::{uniform_grid, Site};
    use alloc::string::ToString;

    fn basis() -> BasisSpec {
        BasisSpec::uniform(0.0, 1.0, 8, 0.0).unwrap()
    }

    fn sites(n: usize) -> Vec<Site> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                Site::new(i.to_string(), libm::fmod(t * 0.618_034, 1.0) * 2.0, libm::fmod(t * 0.414_214, 1.0) * 3.0)
            })
            .collect()
    }

    fn curve_set(rows: Vec<Vec<f64>>, s: Vec<Site>) -> CurveSet {
        CurveSet::new(s, Matrix::from_rows(&rows), basis(), uniform_grid(0.0, 1.0, 41)).unwrap()
    }

    /// `α + β·lon` generated exactly in the basis span.
    fn linear_world(n: usize, noise: f64) -> (CurveSet, CovariateSet, Vec<f64>, Vec<f64>) {
        let s = sites(n);
        let alpha: Vec<f64> = (0..8).map(|l| 1.0 + 0.3 * libm::sin(l as f64)).collect();
        let beta: Vec<f64> = (0..8).map(|l| 0.2 + 0.1 * l as f64).collect();
        let rows = s
            .iter()
            .enumerate()
            .map(|(i, st)| {
                (0..8).map(|l| alpha[l] + beta[l] * st.x + noise * libm::sin((i * 8 + l) as f64 * 1.3)).collect()
            })
            .collect();
        let x = CovariateSet::new(
            vec!["lon".into()],
            Matrix::from_fn(n, 1, |i, _| s[i].x),
            Vec::new(),
            Vec::new(),
        )
        .unwrap();
        (curve_set(rows, s), x, alpha, beta)
    }

    #[test]
    fn intercept_only_is_the_mean_curve() {
        let s = sites(6);
        let rows: Vec<Vec<f64>> = (0..6).map(|i| (0..8).map(|l| libm::cos((i + 2 * l) as f64)).collect()).collect();
        let y = curve_set(rows.clone(), s);
        let fit = fit_concurrent(&y, &CovariateSet::none(6), &basis(), 0.0, None).unwrap();
        let mean: Vec<f64> = (0..8).map(|l| rows.iter().map(|r| r[l]).sum::<f64>() / 6.0).collect();
        let want = basis().eval_basis(&y.eval_grid).unwrap().mat_vec(&mean);
        for (a, b) in fit.alpha().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_model_is_recovered() {
        let (y, x, alpha, beta) = linear_world(10, 0.0);
        let fit = fit_concurrent(&y, &x, &basis(), 0.0, None).unwrap();
        let b = basis().eval_basis(&y.eval_grid).unwrap();
        for (got, want) in fit.alpha().iter().zip(b.mat_vec(&alpha)) {
            assert!((got - want).abs() < 1e-6);
        }
        for (got, want) in fit.gamma(0).iter().zip(b.mat_vec(&beta)) {
            assert!((got - want).abs() < 1e-6);
        }
        assert!(fit.degenerate);
        assert_eq!(aic(&fit), f64::NEG_INFINITY);
    }

    #[test]
    fn identity_gls_equals_pointwise_ols() {
        let (y, x, _, _) = linear_world(9, 0.4);
        let fit = fit_concurrent(&y, &x, &basis(), 0.0, None).unwrap();
        let vals = y.values();
        let (alpha, gamma) = (fit.alpha(), fit.gamma(0));
        let lon = x.scalars.column(0);
        let n = lon.len() as f64;
        let mx = lon.iter().sum::<f64>() / n;
        let sxx: f64 = lon.iter().map(|v| (v - mx) * (v - mx)).sum();
        let resid = fit.residuals.values();
        for j in 0..y.eval_grid.len() {
            let col = vals.column(j);
            let my = col.iter().sum::<f64>() / n;
            let slope = lon.iter().zip(&col).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
            let icpt = my - slope * mx;
            assert!((gamma[j] - slope).abs() < 1e-8);
            assert!((alpha[j] - icpt).abs() < 1e-8);
            // orthogonality to the design columns
            let r = resid.column(j);
            assert!(r.iter().sum::<f64>().abs() < 1e-8);
            assert!(r.iter().zip(&lon).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-8);
        }
    }

    #[test]
    fn residuals_plus_fitted_is_response() {
        let (y, x, _, _) = linear_world(8, 0.3);
        let fit = fit_concurrent(&y, &x, &basis(), 1e-3, None).unwrap();
        let mut sum = fit.fitted.clone();
        sum.add_scaled(&fit.residuals.coeffs, 1.0);
        assert!(sum.max_abs_diff(&y.coeffs) < 1e-12);
    }

    #[test]
    fn edf_shrinks_with_penalty() {
        let (y, x, _, _) = linear_world(12, 0.3);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e7] {
            let fit = fit_concurrent(&y, &x, &basis(), lambda, None).unwrap();
            assert!(fit.edf < last + 1e-9, "{lambda}: {} vs {last}", fit.edf);
            assert!(fit.edf >= 4.0 - 1e-6);
            last = fit.edf;
        }
        assert!(last < 4.1, "edf tends to 2 per term: {last}");
        let a = fit_concurrent(&y, &x, &basis(), 0.1, None).unwrap();
        let b = fit_concurrent(&y, &x, &basis(), 0.1, None).unwrap();
        assert_eq!(aic(&a), aic(&b));
    }

    #[test]
    fn aic_matches_explicit_matrices() {
        // n = 5, M = 11: build the stacked design and hat matrix by hand
        let s = sites(5);
        let rows: Vec<Vec<f64>> = (0..5).map(|i| (0..8).map(|l| libm::sin((3 * i + l) as f64)).collect()).collect();
        let y = CurveSet::new(s.clone(), Matrix::from_rows(&rows), basis(), uniform_grid(0.0, 1.0, 11)).unwrap();
        let x = CovariateSet::new(vec!["lat".into()], Matrix::from_fn(5, 1, |i, _| s[i].y), Vec::new(), Vec::new()).unwrap();
        let lambda = 0.05;
        let fit = fit_concurrent(&y, &x, &basis(), lambda, None).unwrap();

        let lat = x.scalars.column(0);
        let mean = lat.iter().sum::<f64>() / 5.0;
        let sd = libm::sqrt(lat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0);
        let b = basis().eval_basis(&y.eval_grid).unwrap();
        let vals = y.values();
        let (nobs, p) = (55, 16);
        let d = Matrix::from_fn(nobs, p, |r, c| {
            let (i, j) = (r / 11, r % 11);
            let z = if c < 8 { 1.0 } else { (lat[i] - mean) / sd };
            z * b[(j, c % 8)]
        });
        let yv: Vec<f64> = (0..nobs).map(|r| vals[(r / 11, r % 11)]).collect();
        let rough = basis().roughness();
        let mut a = d.transpose().matmul(&d);
        for blk in 0..2 {
            for r in 0..8 {
                for c in 0..8 {
                    a[(blk * 8 + r, blk * 8 + c)] += lambda * rough[(r, c)];
                }
            }
        }
        let ainv = Cholesky::new(&a).unwrap().inverse();
        let hat = d.matmul(&ainv).matmul(&d.transpose());
        let fitted = hat.mat_vec(&yv);
        let rss: f64 = yv.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
        let want = 55.0 * libm::log(rss / 55.0) + 2.0 * hat.trace();
        assert!((aic(&fit) - want).abs() < 1e-8 * want.abs(), "{} vs {want}", aic(&fit));
    }

    #[test]
    fn prediction_is_linear_in_covariates() {
        let (y, x, _, _) = linear_world(10, 0.2);
        let fit = fit_concurrent(&y, &x, &basis(), 0.0, None).unwrap();
        let zero = predict_drift_values(&fit, &TargetCovariates { scalars: vec![0.0], functionals: vec![] }).unwrap();
        for (a, b) in zero.iter().zip(fit.alpha()) {
            assert!((a - b).abs() < 1e-12);
        }
        let one = predict_drift_values(&fit, &TargetCovariates { scalars: vec![1.5], functionals: vec![] }).unwrap();
        let two = predict_drift_values(&fit, &TargetCovariates { scalars: vec![3.0], functionals: vec![] }).unwrap();
        let g = fit.gamma(0);
        for j in 0..g.len() {
            assert!(((two[j] - one[j]) - g[j] * 1.5).abs() < 1e-12);
        }
        assert!(matches!(
            predict_drift(&fit, &TargetCovariates { scalars: vec![], functionals: vec![] }),
            Err(Error::Arity { expected: 1, got: 0 })
        ));
    }

    #[test]
    fn prediction_at_fitted_site_reproduces_fitted_curve() {
        let s = sites(7);
        let rows: Vec<Vec<f64>> = (0..7).map(|i| (0..8).map(|l| libm::cos((i * l) as f64 * 0.7)).collect()).collect();
        let y = curve_set(rows, s.clone());
        let xf: Vec<Vec<f64>> = (0..7).map(|i| (0..8).map(|l| libm::sin((i + l) as f64)).collect()).collect();
        let xc = curve_set(xf, s.clone());
        let x = CovariateSet::new(
            vec!["lat".into()],
            Matrix::from_fn(7, 1, |i, _| s[i].y),
            vec!["temp".into()],
            vec![xc],
        )
        .unwrap();
        let fit = fit_concurrent(&y, &x, &basis(), 1e-4, None).unwrap();
        for i in 0..7 {
            let pred = predict_drift(&fit, &x.target_at(i)).unwrap();
            for (a, b) in pred.iter().zip(fit.fitted.row(i)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn stopping_rule_threshold() {
        assert!(rate_converged(0.0009));
        assert!(!rate_converged(0.0011));
        assert!((aic_rate(-1000.0, -1000.9) - 0.0009).abs() < 1e-12);
    }

    #[test]
    fn constant_response_stops_immediately() {
        let s = sites(6);
        let y = curve_set(vec![vec![2.5; 8]; 6], s);
        let fit = iterate_drift(&y, &CovariateSet::none(6), &DriftConfig::default()).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.aic_trace.len(), 1);
        assert!(fit.residuals.coeffs.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn singular_design_is_a_rank_error() {
        let (y, _, _, _) = linear_world(6, 0.1);
        let x = CovariateSet::new(
            vec!["a".into(), "b".into()],
            Matrix::from_fn(6, 2, |i, _| i as f64),
            Vec::new(),
            Vec::new(),
        )
        .unwrap();
        assert!(matches!(fit_concurrent(&y, &x, &basis(), 0.0, None), Err(Error::Rank(_))));
        let bad_k = Matrix::from_fn(6, 6, |i, j| if i == j { -1.0 } else { 0.0 });
        let (y, x, _, _) = linear_world(6, 0.1);
        assert!(matches!(fit_concurrent(&y, &x, &basis(), 0.0, Some(&bad_k)), Err(Error::Conditioning { .. })));
    }
}
