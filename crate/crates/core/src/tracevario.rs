//! Trace-semivariogram estimation and parametric variogram models.
//!
//! For residual curves `e_i(t)` expanded on a B-spline basis with Gram
//! matrix `Φ`, the integral `∫ (e_i - e_j)^2 dt` is the quadratic form
//! `(a_i - a_j)^T Φ (a_i - a_j)` in the coefficient rows, so no quadrature is
//! needed. Factoring `Φ = G G^T` once turns every pair into a Euclidean
//! distance between transformed coefficient rows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::fcurves::{check_distinct, CurveSet};
use crate::linalg::{Cholesky, Matrix};
use crate::{Error, Result};

/// Default number of distance classes.
pub const DEFAULT_BINS: usize = 15;
/// Default cutoff as a fraction of the largest pairwise distance.
pub const DEFAULT_MAX_DIST_FRACTION: f64 = 0.5;
/// Relative diagonal jitter tried first when a covariance matrix is not
/// numerically positive definite.
pub const JITTER_BASE: f64 = 1e-10;
/// Number of times the jitter may be doubled.
pub const JITTER_DOUBLINGS: u32 = 8;
const N_STARTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Family {
    Exponential,
    Gaussian,
    Spherical,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Exponential, Family::Gaussian, Family::Spherical];

    /// Normalized variogram shape in `[0, 1]` as a function of `h / range`.
    #[inline]
    fn shape(self, r: f64) -> f64 {
        match self {
            Family::Exponential => 1.0 - libm::exp(-r),
            Family::Gaussian => 1.0 - libm::exp(-r * r),
            Family::Spherical => {
                if r >= 1.0 {
                    1.0
                } else {
                    r * (1.5 - 0.5 * r * r)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Gaussian => "gaussian",
            Family::Spherical => "spherical",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Some(Family::Exponential),
            "gaussian" | "gau" => Some(Family::Gaussian),
            "spherical" | "sph" => Some(Family::Spherical),
            _ => None,
        }
    }
}

/// Parametric semivariogram `γ(h) = nugget + scale * shape(h / range)` for
/// `h > 0`, with `γ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VariogramModel {
    pub family: Family,
    pub nugget: f64,
    /// Partial sill.
    pub scale: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn new(family: Family, nugget: f64, scale: f64, range: f64) -> Result<Self> {
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::InvalidParameter(format!("nugget must be >= 0, got {nugget}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be > 0, got {scale}")));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidParameter(format!("range must be > 0, got {range}")));
        }
        Ok(Self { family, nugget, scale, range })
    }

    pub fn sill(&self) -> f64 {
        self.nugget + self.scale
    }

    /// Semivariance at lag `h`; negative lags are a domain error.
    pub fn eval(&self, h: f64) -> Result<f64> {
        if !(h >= 0.0) {
            return Err(Error::Domain { value: h, lo: 0.0, hi: f64::INFINITY });
        }
        Ok(self.semivariance(h))
    }

    #[inline]
    pub(crate) fn semivariance(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            self.nugget + self.scale * self.family.shape(h / self.range)
        }
    }

    /// `C(h) = sill - γ(h)`, so `C(0)` is the full sill.
    #[inline]
    pub fn covariance(&self, h: f64) -> f64 {
        self.sill() - self.semivariance(h)
    }

    pub fn correlation(&self, h: f64) -> f64 {
        self.covariance(h) / self.sill()
    }
}

/// Binned trace-semivariogram.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmpiricalVariogram {
    /// Lag of each retained bin (mean distance of its pairs).
    pub bins: Vec<f64>,
    pub gamma: Vec<f64>,
    pub counts: Vec<usize>,
    /// Set when every pair sits at the same distance, so only one bin exists.
    pub single_distance: bool,
}

impl EmpiricalVariogram {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VariogramConfig {
    pub families: Vec<Family>,
    pub fix_nugget_zero: bool,
    pub n_bins: usize,
    pub max_dist_fraction: f64,
    /// Weight the fitting SSE by bin pair counts.
    pub weighted: bool,
}

impl Default for VariogramConfig {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            fix_nugget_zero: true,
            n_bins: DEFAULT_BINS,
            max_dist_fraction: DEFAULT_MAX_DIST_FRACTION,
            weighted: false,
        }
    }
}

impl VariogramConfig {
    pub fn with_families(mut self, families: &[Family]) -> Self {
        self.families = families.to_vec();
        self
    }
}

/// Gram-matrix factor used to turn coefficient differences into `L²` norms.
#[derive(Debug, Clone)]
pub struct L2Metric {
    factor: Cholesky,
}

impl L2Metric {
    pub fn new(gram: &Matrix) -> Result<Self> {
        Ok(Self { factor: Cholesky::new(gram)? })
    }

    /// Rows `G^T a_i`, so that `||row_i - row_j||^2 = ∫ (e_i - e_j)^2`.
    pub fn transform(&self, coeffs: &Matrix) -> Matrix {
        let g = self.factor.lower();
        Matrix::from_fn(coeffs.rows(), coeffs.cols(), |i, k| {
            let a = coeffs.row(i);
            (k..a.len()).map(|l| a[l] * g[(l, k)]).sum()
        })
    }
}

/// Empirical trace-semivariogram of a set of residual curves.
pub fn empirical_trace_semivariogram(
    residuals: &CurveSet,
    n_bins: usize,
    max_dist_fraction: f64,
) -> Result<EmpiricalVariogram> {
    let metric = L2Metric::new(&residuals.basis.gram())?;
    empirical_from_coeffs(&residuals.coords(), &residuals.coeffs, &metric, n_bins, max_dist_fraction)
}

pub fn empirical_from_coeffs(
    coords: &[(f64, f64)],
    coeffs: &Matrix,
    metric: &L2Metric,
    n_bins: usize,
    max_dist_fraction: f64,
) -> Result<EmpiricalVariogram> {
    let w = metric.transform(coeffs);
    let values = |i: usize, j: usize| -> f64 {
        w.row(i).iter().zip(w.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    binned_semivariogram(coords, values, n_bins, max_dist_fraction)
}

/// Classical binned semivariogram `½ mean(sq_diff(i, j))` over distance
/// classes; `sq_diff` supplies the squared difference for a site pair.
pub fn binned_semivariogram(
    coords: &[(f64, f64)],
    mut sq_diff: impl FnMut(usize, usize) -> f64,
    n_bins: usize,
    max_dist_fraction: f64,
) -> Result<EmpiricalVariogram> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::InvalidParameter("a variogram needs at least two sites".into()));
    }
    if n_bins == 0 || !(max_dist_fraction > 0.0 && max_dist_fraction <= 1.0) {
        return Err(Error::InvalidParameter("binning needs n_bins >= 1 and a fraction in (0, 1]".into()));
    }
    check_distinct(coords)?;
    let dist = |i: usize, j: usize| libm::hypot(coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        for j in 0..i {
            let d = dist(i, j);
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
    }
    let single_distance = dmin == dmax;
    let (n_bins, cutoff) = if single_distance { (1, dmax) } else { (n_bins, max_dist_fraction * dmax) };
    let width = cutoff / n_bins as f64;
    let mut sum = vec![0.0; n_bins];
    let mut hsum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for i in 0..n {
        for j in 0..i {
            let d = dist(i, j);
            if d > cutoff {
                continue;
            }
            let b = if single_distance { 0 } else { ((d / width) as usize).min(n_bins - 1) };
            sum[b] += sq_diff(i, j);
            hsum[b] += d;
            count[b] += 1;
        }
    }
    let mut out = EmpiricalVariogram { bins: Vec::new(), gamma: Vec::new(), counts: Vec::new(), single_distance };
    for b in 0..n_bins {
        if count[b] > 0 {
            out.bins.push(hsum[b] / count[b] as f64);
            out.gamma.push(0.5 * sum[b] / count[b] as f64);
            out.counts.push(count[b]);
        }
    }
    Ok(out)
}

/// Best `(nugget, scale)` and SSE for a fixed range.
fn profile(emp: &EmpiricalVariogram, family: Family, range: f64, fix_nugget_zero: bool, weighted: bool) -> (f64, f64, f64) {
    let g = emp.len();
    let w = |k: usize| if weighted { emp.counts[k] as f64 } else { 1.0 };
    let f = |k: usize| family.shape(emp.bins[k] / range);
    let (mut sw, mut sf, mut sff, mut sy, mut sfy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..g {
        let (wk, fk, yk) = (w(k), f(k), emp.gamma[k]);
        sw += wk;
        sf += wk * fk;
        sff += wk * fk * fk;
        sy += wk * yk;
        sfy += wk * fk * yk;
    }
    let scale_only = || if sff > 0.0 { (sfy / sff).max(0.0) } else { 0.0 };
    let (nugget, scale) = if fix_nugget_zero {
        (0.0, scale_only())
    } else {
        let det = sw * sff - sf * sf;
        let (mut c0, mut c1) = if det > 1e-14 * sw * sff {
            ((sff * sy - sf * sfy) / det, (sw * sfy - sf * sy) / det)
        } else {
            (0.0, scale_only())
        };
        if c0 < 0.0 {
            c0 = 0.0;
            c1 = scale_only();
        }
        if c1 < 0.0 {
            c1 = 0.0;
            c0 = (sy / sw).max(0.0);
        }
        (c0, c1)
    };
    let sse = (0..g)
        .map(|k| {
            let r = emp.gamma[k] - nugget - scale * f(k);
            w(k) * r * r
        })
        .sum();
    (nugget, scale, sse)
}

/// Local minimum of `f` over `x in [lo, hi]`, starting from `x0`: expand a
/// bracket downhill, then golden-section search.
fn local_min(f: &mut impl FnMut(f64) -> f64, x0: f64, lo: f64, hi: f64) -> (f64, f64) {
    const STEP: f64 = core::f64::consts::LN_2;
    let x0 = x0.clamp(lo, hi);
    let f0 = f(x0);
    let (xm, xp) = ((x0 - STEP).max(lo), (x0 + STEP).min(hi));
    let (fm, fp) = (f(xm), f(xp));
    let (mut a, mut b);
    if fm < f0 && fm <= fp {
        // walk down
        let (mut x, mut fx) = (xm, fm);
        b = x0;
        loop {
            let nx = (x - STEP).max(lo);
            if nx == x {
                a = x;
                break;
            }
            let nf = f(nx);
            if nf >= fx {
                a = nx;
                break;
            }
            b = x;
            x = nx;
            fx = nf;
        }
    } else if fp < f0 {
        let (mut x, mut fx) = (xp, fp);
        a = x0;
        loop {
            let nx = (x + STEP).min(hi);
            if nx == x {
                b = x;
                break;
            }
            let nf = f(nx);
            if nf >= fx {
                b = nx;
                break;
            }
            a = x;
            x = nx;
            fx = nf;
        }
    } else {
        a = xm;
        b = xp;
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc < fd { (c, fc) } else { (d, fd) };
    for (x, fx) in [(x0, f0), (xm, fm), (xp, fp)] {
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Least-squares fit of one family; returns the model and its SSE.
pub fn fit_family(
    emp: &EmpiricalVariogram,
    family: Family,
    fix_nugget_zero: bool,
    weighted: bool,
) -> Result<(VariogramModel, f64)> {
    if emp.len() < 3 {
        return Err(Error::Fit(format!("{} retained bins, at least 3 are needed", emp.len())));
    }
    if emp.gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Fit("semivariances must be finite and nonnegative".into()));
    }
    let hmax = emp.bins.iter().copied().fold(0.0, f64::max);
    let hmin = emp.bins.iter().copied().fold(f64::INFINITY, f64::min);
    // search in log(range)
    let lo = libm::log(0.05 * hmin.min(hmax / 20.0));
    let hi = libm::log(10.0 * hmax);
    let mut sse_at = |x: f64| profile(emp, family, libm::exp(x), fix_nugget_zero, weighted).2;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..N_STARTS {
        let start = hmax * (k + 1) as f64 / N_STARTS as f64;
        let (x, fx) = local_min(&mut sse_at, libm::log(start), lo, hi);
        if best.is_none_or(|(_, b)| fx < b) {
            best = Some((x, fx));
        }
    }
    let (x, _) = best.expect("at least one start");
    let range = libm::exp(x);
    let (nugget, scale, sse) = profile(emp, family, range, fix_nugget_zero, weighted);
    let gmax = emp.gamma.iter().copied().fold(0.0, f64::max);
    if !(scale > 1e-12 * gmax) || !(gmax > 0.0) {
        return Err(Error::Fit(format!("{} fit has no positive scale", family.name())));
    }
    let model = VariogramModel::new(family, nugget, scale, range).map_err(|e| Error::Fit(format!("{e}")))?;
    Ok((model, sse))
}

/// Fits every requested family and keeps the one with the smallest SSE.
pub fn fit_variogram(emp: &EmpiricalVariogram, config: &VariogramConfig) -> Result<VariogramModel> {
    fit_variogram_with_sse(emp, config).map(|(m, _)| m)
}

pub fn fit_variogram_with_sse(emp: &EmpiricalVariogram, config: &VariogramConfig) -> Result<(VariogramModel, f64)> {
    if config.families.is_empty() {
        return Err(Error::Fit("no candidate families".into()));
    }
    let mut best: Option<(VariogramModel, f64)> = None;
    let mut last_err = None;
    for &family in &config.families {
        match fit_family(emp, family, config.fix_nugget_zero, config.weighted) {
            Ok((m, sse)) => {
                if best.as_ref().is_none_or(|(_, b)| sse < *b) {
                    best = Some((m, sse));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Fit("no family could be fitted".into())))
}

/// Covariance matrix with its (possibly jittered) Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpatialCovariance {
    /// Covariances before jitter.
    pub matrix: Matrix,
    pub factor: Cholesky,
    /// Diagonal jitter that made the matrix factorizable.
    pub jitter: f64,
}

fn pairwise<F: Fn(f64) -> f64>(coords: &[(f64, f64)], diag: f64, f: F) -> Matrix {
    let n = coords.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag;
        for j in 0..i {
            let h = libm::hypot(coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
            let v = f(h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Covariance among `coords` (plus an optional target appended last),
/// without any jitter.
pub fn raw_covariance_matrix(model: &VariogramModel, coords: &[(f64, f64)], extra_site: Option<(f64, f64)>) -> Result<Matrix> {
    let mut all = coords.to_vec();
    if let Some(s0) = extra_site {
        all.push(s0);
    }
    check_distinct(&all)?;
    Ok(pairwise(&all, model.sill(), |h| model.covariance(h)))
}

/// Factors a covariance matrix with the jitter ladder: `1e-10 * scale_ref`
/// on the diagonal, doubled up to eight times.
pub fn factor_with_jitter(matrix: Matrix, scale_ref: f64) -> Result<SpatialCovariance> {
    let (factor, jitter) = Cholesky::with_jitter(&matrix, JITTER_BASE * scale_ref, JITTER_DOUBLINGS)?;
    Ok(SpatialCovariance { matrix, factor, jitter })
}

/// Covariance matrix `C(h) = sill - γ(h)` among the sites, factored under the
/// jitter policy.
pub fn covariance_matrix(
    model: &VariogramModel,
    coords: &[(f64, f64)],
    extra_site: Option<(f64, f64)>,
) -> Result<SpatialCovariance> {
    let m = raw_covariance_matrix(model, coords, extra_site)?;
    factor_with_jitter(m, model.sill())
}

/// Correlation matrix `C(h) / C(0)` among the sites (unit diagonal, no
/// jitter).
pub fn correlation_matrix(model: &VariogramModel, coords: &[(f64, f64)]) -> Result<Matrix> {
    check_distinct(coords)?;
    Ok(pairwise(coords, 1.0, |h| model.correlation(h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcurves::{BasisSpec, Site};
    use alloc::string::ToString;

    fn exp_emp(scale: f64, range: f64, lags: usize) -> EmpiricalVariogram {
        let bins: Vec<f64> = (1..=lags).map(|k| 0.15 * k as f64).collect();
        let gamma = bins.iter().map(|h| scale * (1.0 - libm::exp(-h / range))).collect();
        EmpiricalVariogram { bins, gamma, counts: vec![10; lags], single_distance: false }
    }

    #[test]
    fn closed_form_values() {
        let m = VariogramModel::new(Family::Exponential, 0.0, 1.0, 1.0).unwrap();
        assert!((m.eval(1.0).unwrap() - (1.0 - libm::exp(-1.0))).abs() < 1e-15);
        assert_eq!(m.eval(0.0).unwrap(), 0.0);
        assert!(m.eval(1e-12).unwrap() < 1e-11);
        assert!(matches!(m.eval(-0.1), Err(Error::Domain { .. })));
        let s = VariogramModel::new(Family::Spherical, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(s.eval(2.0).unwrap(), 1.0);
        assert_eq!(s.eval(1.0).unwrap(), 1.0);
        let g = VariogramModel::new(Family::Gaussian, 0.1, 2.0, 0.5).unwrap();
        assert!((g.eval(50.0).unwrap() - 2.1).abs() < 1e-12);
        assert!(VariogramModel::new(Family::Gaussian, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn monotone_families() {
        for fam in Family::ALL {
            let m = VariogramModel::new(fam, 0.05, 0.7, 0.8).unwrap();
            let mut prev = 0.0;
            for k in 0..1000 {
                let v = m.eval(k as f64 * 0.004).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn recovers_noise_free_exponential() {
        let emp = exp_emp(0.25, 0.5, 10);
        let m = fit_variogram(&emp, &VariogramConfig::default()).unwrap();
        assert_eq!(m.family, Family::Exponential);
        assert!((m.scale - 0.25).abs() < 0.05 * 0.25, "{m:?}");
        assert!((m.range - 0.5).abs() < 0.05 * 0.5, "{m:?}");
        assert_eq!(m.nugget, 0.0);
    }

    #[test]
    fn estimates_nugget_when_asked() {
        let mut emp = exp_emp(0.6, 0.4, 12);
        emp.gamma.iter_mut().for_each(|g| *g += 0.1);
        let config = VariogramConfig { fix_nugget_zero: false, ..Default::default() };
        let m = fit_variogram(&emp, &config).unwrap();
        assert_eq!(m.family, Family::Exponential);
        assert!((m.nugget - 0.1).abs() < 1e-4 && (m.scale - 0.6).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn zero_semivariogram_is_rejected() {
        let mut emp = exp_emp(0.25, 0.5, 10);
        emp.gamma.iter_mut().for_each(|g| *g = 0.0);
        assert!(matches!(fit_variogram(&emp, &VariogramConfig::default()), Err(Error::Fit(_))));
        let short = EmpiricalVariogram { bins: vec![1.0, 2.0], gamma: vec![1.0, 1.0], counts: vec![1, 1], single_distance: false };
        assert!(matches!(fit_variogram(&short, &VariogramConfig::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let mut emp = exp_emp(0.3, 0.7, 12);
        for (k, g) in emp.gamma.iter_mut().enumerate() {
            *g *= 1.0 + 0.03 * libm::sin(k as f64 * 1.7);
        }
        let config = VariogramConfig { fix_nugget_zero: false, ..Default::default() };
        let base = fit_variogram(&emp, &config).unwrap();
        for c in [0.01, 3.0, 250.0] {
            let mut scaled = emp.clone();
            scaled.gamma.iter_mut().for_each(|g| *g *= c);
            let m = fit_variogram(&scaled, &config).unwrap();
            assert_eq!(m.family, base.family);
            assert!((m.range - base.range).abs() <= 1e-8 * base.range, "{m:?} {base:?}");
            assert!((m.scale - c * base.scale).abs() <= 1e-8 * c * base.scale);
            assert!((m.nugget - c * base.nugget).abs() <= 1e-8 * c * (base.nugget + base.scale));
        }
    }

    fn curves(coeffs: Vec<Vec<f64>>, coords: &[(f64, f64)]) -> CurveSet {
        let basis = BasisSpec::uniform(0.0, 1.0, coeffs[0].len(), 0.0).unwrap();
        let sites = coords.iter().enumerate().map(|(i, &(x, y))| Site::new(i.to_string(), x, y)).collect();
        CurveSet::new(sites, Matrix::from_rows(&coeffs), basis, crate::fcurves::uniform_grid(0.0, 1.0, 101)).unwrap()
    }

    #[test]
    fn two_sites_constant_difference() {
        let cs = curves(vec![vec![0.0; 6], vec![1.0; 6]], &[(0.0, 0.0), (1.0, 2.0)]);
        let emp = empirical_trace_semivariogram(&cs, DEFAULT_BINS, DEFAULT_MAX_DIST_FRACTION).unwrap();
        assert_eq!(emp.len(), 1);
        assert!(emp.single_distance);
        assert!((emp.gamma[0] - 0.5).abs() < 1e-13);
        assert_eq!(emp.counts, vec![1]);
    }

    #[test]
    fn identical_curves_give_zero() {
        let row = vec![0.3, -1.0, 2.0, 0.5, 0.1, 0.0];
        let coords: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * 0.37 % 1.3, (i * i) as f64 * 0.11)).collect();
        let cs = curves(vec![row; 8], &coords);
        let emp = empirical_trace_semivariogram(&cs, 5, 1.0).unwrap();
        assert!(emp.gamma.iter().all(|&g| g.abs() < 1e-13));
        assert!(emp.bins.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(emp.counts.iter().sum::<usize>(), 28);
    }

    #[test]
    fn covariance_closed_form() {
        let m = VariogramModel::new(Family::Exponential, 0.0, 1.0, 1.0).unwrap();
        let c = covariance_matrix(&m, &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], None).unwrap();
        let e1 = libm::exp(-1.0);
        let e2 = libm::exp(-2.0);
        assert!((c.matrix[(0, 1)] - e1).abs() < 1e-12);
        assert!((c.matrix[(1, 2)] - e1).abs() < 1e-12);
        assert!((c.matrix[(0, 2)] - e2).abs() < 1e-12);
        assert_eq!(c.matrix[(1, 1)], 1.0);
        assert_eq!(c.jitter, 0.0);
        let one = covariance_matrix(&VariogramModel::new(Family::Spherical, 0.2, 0.5, 1.0).unwrap(), &[(3.0, 4.0)], None).unwrap();
        assert_eq!(one.matrix.as_slice(), &[0.7]);
        assert!(matches!(covariance_matrix(&m, &[(0.0, 0.0), (0.0, 0.0)], None), Err(Error::DuplicateSite(0, 1))));
        assert!(matches!(covariance_matrix(&m, &[(0.0, 0.0), (1.0, 0.0)], Some((1.0, 0.0))), Err(Error::DuplicateSite(1, 2))));
        let k = correlation_matrix(&VariogramModel::new(Family::Gaussian, 0.0, 4.0, 1.0).unwrap(), &[(0.0, 0.0), (0.5, 0.0)]).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!(k[(0, 1)] > 0.0 && k[(0, 1)] <= 1.0);
    }
}
