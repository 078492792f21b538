//! Ordinary kriging of functional residuals with scalar weights, and the
//! FKED predictor (drift plus kriged residual) at an unmonitored site.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::drift::{iterate_drift, predict_drift, CovariateSet, DriftConfig, DriftFit, TargetCovariates};
use crate::fcurves::{check_distinct, BasisSpec, CurveSet};
use crate::linalg::{lu_solve, Matrix};
use crate::tracevario::{empirical_trace_semivariogram, fit_variogram, VariogramModel};
use crate::{Error, Result};

/// Distance below which a target is treated as sitting on a data site.
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// Bordered ordinary-kriging system in trace-variogram form and its solution.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KrigingSystem {
    /// `(n+1) x (n+1)`: `γ(h_ij)` bordered by ones and a zero corner.
    pub gamma_matrix: Matrix,
    /// `γ(h_i0)` followed by 1.
    pub rhs: Vec<f64>,
    pub weights: Vec<f64>,
    pub lagrange: f64,
    /// Index of the data site the target coincides with, if any.
    pub coincident: Option<usize>,
}

impl KrigingSystem {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    libm::hypot(a.0 - b.0, a.1 - b.1)
}

/// Ordinary-kriging weights for `target`. A target on a data site gets the
/// unit weight on that site when the model has no nugget; with a nugget the
/// system is solved as usual and the coincidence is only flagged.
///
/// The system is assembled with sites sorted by coordinates, so the weights
/// do not depend on the input order even when the matrix is badly
/// conditioned (smooth Gaussian variograms).
pub fn solve_ok_weights(model: &VariogramModel, coords: &[(f64, f64)], target: (f64, f64)) -> Result<KrigingSystem> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::InvalidParameter("kriging needs at least two sites".into()));
    }
    check_distinct(coords)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| coords[a].0.total_cmp(&coords[b].0).then(coords[a].1.total_cmp(&coords[b].1)));
    let sorted: Vec<(f64, f64)> = order.iter().map(|&i| coords[i]).collect();

    let mut g = Matrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..i {
            let v = model.semivariance(dist(sorted[i], sorted[j]));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
        g[(i, n)] = 1.0;
        g[(n, i)] = 1.0;
    }
    let mut rhs: Vec<f64> = sorted.iter().map(|&c| model.semivariance(dist(c, target))).collect();
    rhs.push(1.0);
    let coincident = coords.iter().position(|&c| dist(c, target) <= COINCIDENCE_TOL);

    let mut weights = vec![0.0; n];
    let lagrange = match coincident {
        Some(k) if model.nugget == 0.0 => {
            weights[k] = 1.0;
            0.0
        }
        _ => {
            let sol = lu_solve(&g, &rhs).map_err(|_| Error::Conditioning { jitter: 0.0 })?;
            if sol.iter().any(|v| !v.is_finite()) {
                return Err(Error::Conditioning { jitter: 0.0 });
            }
            for (k, &i) in order.iter().enumerate() {
                weights[i] = sol[k];
            }
            sol[n]
        }
    };
    // report the system in the caller's site order
    let mut pos = vec![0; n + 1];
    for (k, &i) in order.iter().enumerate() {
        pos[i] = k;
    }
    pos[n] = n;
    let gamma_matrix = Matrix::from_fn(n + 1, n + 1, |i, j| g[(pos[i], pos[j])]);
    let rhs = (0..=n).map(|i| rhs[pos[i]]).collect();
    Ok(KrigingSystem { gamma_matrix, rhs, weights, lagrange, coincident })
}

/// `Σ λ_i e_i`, computed on the coefficient rows of the residual curves.
pub fn predict_residual(system: &KrigingSystem, residuals: &CurveSet) -> Result<Vec<f64>> {
    combine_rows(&system.weights, &residuals.coeffs)
}

pub(crate) fn combine_rows(weights: &[f64], rows: &Matrix) -> Result<Vec<f64>> {
    if weights.len() != rows.rows() {
        return Err(Error::Arity { expected: rows.rows(), got: weights.len() });
    }
    Ok(rows.vec_mat(weights))
}

/// Fitted FKED model: converged drift plus the trace-variogram of its final
/// residuals.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FkedModel {
    pub drift: DriftFit,
    pub variogram: VariogramModel,
    pub covariates: CovariateSet,
    pub config: DriftConfig,
}

/// FKED prediction at one target, in response-basis coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FkedPrediction {
    pub coeffs: Vec<f64>,
    pub drift: Vec<f64>,
    pub residual: Vec<f64>,
    pub system: KrigingSystem,
}

impl FkedModel {
    /// Runs the iterative drift fit and fits the residual variogram.
    pub fn fit(y: &CurveSet, x: &CovariateSet, config: &DriftConfig) -> Result<Self> {
        let drift = iterate_drift(y, x, config)?;
        Self::from_drift(drift, x.clone(), config.clone())
    }

    pub fn from_drift(drift: DriftFit, covariates: CovariateSet, config: DriftConfig) -> Result<Self> {
        let emp = empirical_trace_semivariogram(&drift.residuals, config.variogram.n_bins, config.variogram.max_dist_fraction)?;
        let variogram = fit_variogram(&emp, &config.variogram)?;
        Ok(Self { drift, variogram, covariates, config })
    }

    pub fn residuals(&self) -> &CurveSet {
        &self.drift.residuals
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.drift.residuals.basis
    }

    pub fn grid(&self) -> &[f64] {
        &self.drift.residuals.eval_grid
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.drift.residuals.coords()
    }

    pub fn predict(&self, site: (f64, f64), target: &TargetCovariates) -> Result<FkedPrediction> {
        fked_predict(self, site, target)
    }

    /// Evaluates a response-basis curve on the model grid.
    pub fn values_of(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.basis().n_basis {
            return Err(Error::Arity { expected: self.basis().n_basis, got: coeffs.len() });
        }
        Ok(self.basis().eval_basis(self.grid())?.mat_vec(coeffs))
    }
}

/// `Ŷ_0 = μ̂_0 + Σ λ_i ê_i`.
pub fn fked_predict(model: &FkedModel, site: (f64, f64), target: &TargetCovariates) -> Result<FkedPrediction> {
    if !site.0.is_finite() || !site.1.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite target coordinates {site:?}")));
    }
    let drift = predict_drift(&model.drift, target)?;
    let system = solve_ok_weights(&model.variogram, &model.coords(), site)?;
    let residual = predict_residual(&system, model.residuals())?;
    let coeffs = drift.iter().zip(&residual).map(|(a, b)| a + b).collect();
    Ok(FkedPrediction { coeffs, drift, residual, system })
}
