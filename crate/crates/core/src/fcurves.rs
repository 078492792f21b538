//! Functional data on a shared cubic B-spline basis.
//!
//! Curves are always carried as coefficient rows; pointwise values are
//! derived on demand, and every `L²` integral reduces to a quadratic form in
//! the basis Gram matrix.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, Cholesky, Matrix};
use crate::{Error, Result};

/// Polynomial degree of the basis functions.
pub const DEGREE: usize = 3;
/// Number of nonzero cubic basis functions at any point.
pub const ORDER: usize = DEGREE + 1;

/// Default number of evaluation points on the curve domain.
pub const DEFAULT_GRID_LEN: usize = 101;

// 5-point Gauss-Legendre rule on [-1, 1]; exact for polynomials of degree 9.
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_08,
    0.478_628_670_499_366_47,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
];

/// Cubic B-spline basis on a closed interval, with the roughness penalty
/// used when smoothing onto it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BasisSpec {
    pub domain: (f64, f64),
    pub n_basis: usize,
    /// Weight on the integrated squared second derivative.
    pub penalty: f64,
    /// Full clamped knot vector, `n_basis + 4` entries.
    pub knots: Vec<f64>,
}

impl BasisSpec {
    /// Uniform clamped knots on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n_basis: usize, penalty: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParameter(format!("empty domain [{a}, {b}]")));
        }
        if n_basis < ORDER {
            return Err(Error::InvalidParameter(format!(
                "cubic B-splines need at least {ORDER} basis functions, got {n_basis}"
            )));
        }
        let n_interior = n_basis - ORDER;
        let mut knots = Vec::with_capacity(n_basis + ORDER);
        knots.extend(core::iter::repeat_n(a, ORDER));
        for k in 1..=n_interior {
            knots.push(a + (b - a) * k as f64 / (n_interior + 1) as f64);
        }
        knots.extend(core::iter::repeat_n(b, ORDER));
        Self::from_knots(knots, penalty)
    }

    /// Basis from an explicit clamped knot vector.
    pub fn from_knots(knots: Vec<f64>, penalty: f64) -> Result<Self> {
        if knots.len() < 2 * ORDER {
            return Err(Error::InvalidParameter("knot vector too short".into()));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidParameter("knots must be nondecreasing".into()));
        }
        let a = knots[0];
        let b = knots[knots.len() - 1];
        if knots[..ORDER].iter().any(|&k| k != a) || knots[knots.len() - ORDER..].iter().any(|&k| k != b) {
            return Err(Error::InvalidParameter("knot vector must be clamped".into()));
        }
        if !(a < b) {
            return Err(Error::InvalidParameter("degenerate knot vector".into()));
        }
        if !(penalty >= 0.0) || !penalty.is_finite() {
            return Err(Error::InvalidParameter(format!("penalty must be >= 0, got {penalty}")));
        }
        Ok(Self { domain: (a, b), n_basis: knots.len() - ORDER, penalty, knots })
    }

    pub fn with_penalty(&self, penalty: f64) -> Result<Self> {
        Self::from_knots(self.knots.clone(), penalty)
    }

    /// Same knots and domain, ignoring the penalty.
    pub fn same_space(&self, other: &BasisSpec) -> bool {
        self.knots == other.knots
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.domain;
        if t >= lo && t <= hi {
            Ok(())
        } else {
            Err(Error::Domain { value: t, lo, hi })
        }
    }

    fn span(&self, t: f64) -> usize {
        // last nonempty interval is closed on the right
        let hi = self.n_basis - 1;
        if t >= self.knots[hi + 1] {
            return hi;
        }
        let (mut lo, mut up) = (DEGREE, hi + 1);
        while up - lo > 1 {
            let mid = (lo + up) / 2;
            if t < self.knots[mid] {
                up = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Nonzero basis functions and their derivatives at `t`.
    ///
    /// Returns the first index `i0` and `ders[d][r] = B^{(d)}_{i0 + r}(t)`.
    fn local_ders(&self, t: f64, n_ders: usize) -> (usize, [[f64; ORDER]; 3]) {
        let p = DEGREE;
        let u = &self.knots;
        let i = self.span(t);
        let mut ndu = [[0.0f64; ORDER]; ORDER];
        let mut left = [0.0f64; ORDER];
        let mut right = [0.0f64; ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[i + 1 - j];
            right[j] = u[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = [[0.0f64; ORDER]; 3];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let n = n_ders.min(2);
        let mut a = [[0.0f64; ORDER]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    d = a[s2][0] * ndu[rk][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                core::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=n {
            for j in 0..=p {
                ders[k][j] *= fac;
            }
            fac *= (p - k) as f64;
        }
        (i - p, ders)
    }

    /// Values of all basis functions at `t` (or their `deriv`-th derivative,
    /// `deriv <= 2`).
    pub fn eval_at(&self, t: f64, deriv: usize) -> Result<Vec<f64>> {
        self.check_domain(t)?;
        if deriv > 2 {
            return Err(Error::InvalidParameter("only derivatives up to order 2".into()));
        }
        let mut out = vec![0.0; self.n_basis];
        let (i0, ders) = self.local_ders(t, deriv);
        out[i0..i0 + ORDER].copy_from_slice(&ders[deriv]);
        Ok(out)
    }

    /// `grid.len() x n_basis` matrix of basis values.
    pub fn eval_basis(&self, grid: &[f64]) -> Result<Matrix> {
        let mut m = Matrix::zeros(grid.len(), self.n_basis);
        for (row, &t) in grid.iter().enumerate() {
            self.check_domain(t)?;
            let (i0, ders) = self.local_ders(t, 0);
            m.row_mut(row)[i0..i0 + ORDER].copy_from_slice(&ders[0]);
        }
        Ok(m)
    }

    /// Compact form of [`BasisSpec::eval_basis`]: for each grid point the
    /// index of the first nonzero basis function and the four nonzero values.
    pub fn local_values(&self, grid: &[f64]) -> Result<Vec<(usize, [f64; ORDER])>> {
        grid.iter()
            .map(|&t| {
                self.check_domain(t)?;
                let (i0, ders) = self.local_ders(t, 0);
                Ok((i0, ders[0]))
            })
            .collect()
    }

    fn quadrature_matrix(&self, deriv: usize) -> Matrix {
        let nb = self.n_basis;
        let mut g = Matrix::zeros(nb, nb);
        for s in DEGREE..nb {
            let (lo, hi) = (self.knots[s], self.knots[s + 1]);
            if hi <= lo {
                continue;
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let t = mid + half * x;
                let (i0, ders) = self.local_ders(t, deriv);
                let v = &ders[deriv];
                for a in 0..ORDER {
                    for b in 0..ORDER {
                        g[(i0 + a, i0 + b)] += w * half * v[a] * v[b];
                    }
                }
            }
        }
        g
    }

    /// Gram matrix `∫ B_k(t) B_l(t) dt`, exact up to rounding.
    pub fn gram(&self) -> Matrix {
        self.quadrature_matrix(0)
    }

    /// Roughness matrix `∫ B_k''(t) B_l''(t) dt`.
    pub fn roughness(&self) -> Matrix {
        self.quadrature_matrix(2)
    }

    /// `∫ (Σ_l c_l B_l)^2` for every coefficient row is `c^T Φ c`; this is
    /// `Σ_l ∫ B_l(t)^2 dt`, the trace of the Gram matrix.
    pub fn trace_gram(&self) -> f64 {
        self.gram().trace()
    }
}

/// Evaluation grid size for a basis: 101 points unless the basis needs more
/// to stay identifiable from grid values.
pub fn default_grid_len(n_basis: usize) -> usize {
    DEFAULT_GRID_LEN.max(3 * n_basis + 1)
}

/// `M` equally spaced points on `[a, b]`, endpoints included.
pub fn uniform_grid(a: f64, b: f64, m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..m)
            .map(|j| if j == m - 1 { b } else { a + (b - a) * j as f64 / (m - 1) as f64 })
            .collect(),
    }
}

/// `L²` inner product `∫ a(t) b(t) dt` of two coefficient vectors on `basis`.
pub fn l2_inner(basis: &BasisSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != basis.n_basis || b.len() != basis.n_basis {
        return Err(Error::Incompatible(format!(
            "coefficient lengths {} and {} for a basis of {}",
            a.len(),
            b.len(),
            basis.n_basis
        )));
    }
    Ok(dot(a, &basis.gram().mat_vec(b)))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Site {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl Site {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self { id: id.into(), x, y }
    }

    pub fn coords(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance(&self, other: (f64, f64)) -> f64 {
        libm::hypot(self.x - other.0, self.y - other.1)
    }
}

/// Rejects repeated coordinates.
pub fn check_distinct(coords: &[(f64, f64)]) -> Result<()> {
    for i in 0..coords.len() {
        for j in 0..i {
            if coords[i] == coords[j] {
                return Err(Error::DuplicateSite(j, i));
            }
        }
    }
    Ok(())
}

/// `n` spatial curves stored as B-spline coefficient rows.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurveSet {
    pub sites: Vec<Site>,
    /// `n x n_basis`, row `i` is the curve at `sites[i]`.
    pub coeffs: Matrix,
    pub basis: BasisSpec,
    pub eval_grid: Vec<f64>,
}

impl CurveSet {
    pub fn new(sites: Vec<Site>, coeffs: Matrix, basis: BasisSpec, eval_grid: Vec<f64>) -> Result<Self> {
        if coeffs.rows() != sites.len() {
            return Err(Error::Incompatible(format!(
                "{} coefficient rows for {} sites",
                coeffs.rows(),
                sites.len()
            )));
        }
        if coeffs.cols() != basis.n_basis {
            return Err(Error::Incompatible(format!(
                "{} coefficient columns for a basis of {}",
                coeffs.cols(),
                basis.n_basis
            )));
        }
        if eval_grid.len() < 2 || eval_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("evaluation grid must be strictly increasing".into()));
        }
        for &t in &eval_grid {
            basis.check_domain(t)?;
        }
        if coeffs.as_slice().iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite spline coefficient".into()));
        }
        let coords: Vec<_> = sites.iter().map(Site::coords).collect();
        check_distinct(&coords)?;
        Ok(Self { sites, coeffs, basis, eval_grid })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.sites.iter().map(Site::coords).collect()
    }

    /// `n x M` matrix of curve values on the evaluation grid.
    pub fn values(&self) -> Matrix {
        let b = self.basis.eval_basis(&self.eval_grid).expect("grid checked at construction");
        self.coeffs.matmul_t(&b)
    }

    pub fn curve_values(&self, i: usize) -> Vec<f64> {
        let b = self.basis.eval_basis(&self.eval_grid).expect("grid checked at construction");
        b.mat_vec(self.coeffs.row(i))
    }

    /// Same sites, basis and grid with new coefficients.
    pub fn with_coeffs(&self, coeffs: Matrix) -> Result<Self> {
        if coeffs.rows() != self.len() || coeffs.cols() != self.basis.n_basis {
            return Err(Error::Incompatible("coefficient matrix shape".into()));
        }
        Ok(Self { sites: self.sites.clone(), coeffs, basis: self.basis.clone(), eval_grid: self.eval_grid.clone() })
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            sites: idx.iter().map(|&i| self.sites[i].clone()).collect(),
            coeffs: self.coeffs.select_rows(idx),
            basis: self.basis.clone(),
            eval_grid: self.eval_grid.clone(),
        }
    }

    /// `∫ x_i(t) y_j(t) dt` between a curve of this set and one of `other`.
    pub fn l2_inner(&self, i: usize, other: &CurveSet, j: usize) -> Result<f64> {
        if !self.basis.same_space(&other.basis) {
            return Err(Error::Incompatible("curves live on different bases".into()));
        }
        l2_inner(&self.basis, self.coeffs.row(i), other.coeffs.row(j))
    }
}

/// One row of the long-format input table.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawObservation {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub value: f64,
}

/// Observations grouped by site in first-appearance order.
#[derive(Debug, Clone)]
pub struct SiteSeries {
    pub site: Site,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn group_by_site(raw: &[RawObservation]) -> Vec<SiteSeries> {
    let mut out: Vec<SiteSeries> = Vec::new();
    for obs in raw {
        match out.iter_mut().find(|s| s.site.id == obs.site_id) {
            Some(s) => {
                s.t.push(obs.t);
                s.y.push(obs.value);
            }
            None => out.push(SiteSeries {
                site: Site::new(obs.site_id.clone(), obs.x, obs.y),
                t: vec![obs.t],
                y: vec![obs.value],
            }),
        }
    }
    out
}

/// Penalized least-squares smoother for one fixed set of observation times.
#[derive(Debug, Clone)]
pub struct Smoother {
    design: Matrix,
    factor: Cholesky,
    hat_trace: f64,
}

impl Smoother {
    pub fn new(basis: &BasisSpec, t: &[f64]) -> Result<Self> {
        let design = basis.eval_basis(t)?;
        let mut normal = design.transpose().matmul(&design);
        if basis.penalty > 0.0 {
            normal.add_scaled(&basis.roughness(), basis.penalty);
        }
        let floor = if basis.penalty > 0.0 { 0.0 } else { 1e-10 };
        let factor = Cholesky::with_pivot_floor(&normal, floor).map_err(|_| {
            Error::IllPosed(format!(
                "{} observation points cannot determine {} basis coefficients at penalty {}",
                t.len(),
                basis.n_basis,
                basis.penalty
            ))
        })?;
        // tr(H) = tr((Φ'Φ + λR)^{-1} Φ'Φ)
        let gram_obs = design.transpose().matmul(&design);
        let mut hat_trace = 0.0;
        for k in 0..basis.n_basis {
            let col = factor.solve(&gram_obs.column(k));
            hat_trace += col[k];
        }
        Ok(Self { design, factor, hat_trace })
    }

    pub fn fit(&self, y: &[f64]) -> Vec<f64> {
        self.factor.solve(&self.design.vec_mat(y))
    }

    pub fn residual_ss(&self, y: &[f64], coeffs: &[f64]) -> f64 {
        self.design.mat_vec(coeffs).iter().zip(y).map(|(f, v)| (v - f) * (v - f)).sum()
    }

    pub fn hat_trace(&self) -> f64 {
        self.hat_trace
    }

    /// Generalized cross-validation score `m RSS / (m - tr H)^2`.
    pub fn gcv(&self, y: &[f64]) -> Option<f64> {
        let m = y.len() as f64;
        let denom = m - self.hat_trace;
        if denom <= 1e-8 * m {
            return None;
        }
        let rss = self.residual_ss(y, &self.fit(y));
        Some(m * rss / (denom * denom))
    }
}

fn smoothers_for(series: &[SiteSeries], spec: &BasisSpec) -> Result<Vec<(usize, Smoother)>> {
    // one smoother per distinct time vector, keyed by the first site using it
    let mut cache: Vec<(usize, Smoother)> = Vec::new();
    for (i, s) in series.iter().enumerate() {
        if !cache.iter().any(|(k, _)| series[*k].t == s.t) {
            cache.push((i, Smoother::new(spec, &s.t)?));
        }
    }
    Ok(cache)
}

fn smoother_of<'a>(cache: &'a [(usize, Smoother)], series: &[SiteSeries], i: usize) -> &'a Smoother {
    &cache.iter().find(|(k, _)| series[*k].t == series[i].t).expect("cached").1
}

/// Smooths raw observations into curves, each site independently, by
/// minimizing residual sum of squares plus `penalty * ∫ (x'')^2`.
///
/// The evaluation grid is the default 101-point grid on the basis domain,
/// refined to `3 n_basis + 1` points for bases too large for it.
pub fn smooth(raw: &[RawObservation], spec: &BasisSpec) -> Result<CurveSet> {
    let grid = uniform_grid(spec.domain.0, spec.domain.1, default_grid_len(spec.n_basis));
    smooth_on_grid(raw, spec, grid)
}

pub fn smooth_on_grid(raw: &[RawObservation], spec: &BasisSpec, grid: Vec<f64>) -> Result<CurveSet> {
    if raw.is_empty() {
        return Err(Error::IllPosed("no observations".into()));
    }
    let series = group_by_site(raw);
    let cache = smoothers_for(&series, spec)?;
    let mut coeffs = Matrix::zeros(series.len(), spec.n_basis);
    for i in 0..series.len() {
        let c = smoother_of(&cache, &series, i).fit(&series[i].y);
        coeffs.row_mut(i).copy_from_slice(&c);
    }
    CurveSet::new(series.into_iter().map(|s| s.site).collect(), coeffs, spec.clone(), grid)
}

/// Picks `(n_basis, penalty)` minimizing the GCV score averaged over curves.
///
/// Candidates that cannot be fitted are skipped; ties keep the first
/// candidate in `n_basis`-major order.
pub fn fcv_select(
    raw: &[RawObservation],
    domain: (f64, f64),
    n_basis: &[usize],
    penalties: &[f64],
) -> Result<(usize, f64)> {
    if n_basis.is_empty() || penalties.is_empty() {
        return Err(Error::Selection("empty candidate set".into()));
    }
    let series = group_by_site(raw);
    if series.is_empty() {
        return Err(Error::Selection("no observations".into()));
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for &nb in n_basis {
        for &lambda in penalties {
            let Ok(spec) = BasisSpec::uniform(domain.0, domain.1, nb, lambda) else {
                continue;
            };
            let Ok(cache) = smoothers_for(&series, &spec) else {
                continue;
            };
            let mut total = 0.0;
            let mut ok = true;
            for i in 0..series.len() {
                match smoother_of(&cache, &series, i).gcv(&series[i].y) {
                    Some(g) => total += g,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let score = total / series.len() as f64;
            if best.is_none_or(|(b, _, _)| score < b) {
                best = Some((score, nb, lambda));
            }
        }
    }
    best.map(|(_, nb, l)| (nb, l))
        .ok_or_else(|| Error::Selection("every (n_basis, penalty) candidate is ill-posed".into()))
}
