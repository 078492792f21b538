//! Centrality orderings of curve ensembles (band depth, modified band depth,
//! `L²` distance to zero), envelope bands and coverage metrics.
//!
//! Depth pairs run over all `i1 < i2`, including pairs that contain the
//! evaluated curve itself, and containment is non-strict
//! (`min <= y(t) <= max`).

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering as CmpOrdering;

use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Ordering {
    /// Deepest curves first, by modified band depth.
    Mbd,
    /// Curves closest to the zero curve first.
    L2,
}

impl Ordering {
    pub const ALL: [Ordering; 2] = [Ordering::Mbd, Ordering::L2];

    pub fn name(self) -> &'static str {
        match self {
            Ordering::Mbd => "mbd",
            Ordering::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Option<Ordering> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mbd" | "depth" => Some(Ordering::Mbd),
            "l2" | "distance" => Some(Ordering::L2),
            _ => None,
        }
    }
}

/// `B` curves evaluated on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEnsemble {
    values: Matrix,
    grid: Vec<f64>,
}

fn pairs(n: usize) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

impl CurveEnsemble {
    pub fn new(values: Matrix, grid: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || values.cols() != grid.len() {
            return Err(Error::Incompatible(format!(
                "{} columns for a grid of {} points (need at least 2)",
                values.cols(),
                grid.len()
            )));
        }
        if values.rows() == 0 {
            return Err(Error::InvalidParameter("empty ensemble".into()));
        }
        if values.as_slice().iter().any(|v| !v.is_finite()) || grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite ensemble value".into()));
        }
        Ok(Self { values, grid })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn curve(&self, j: usize) -> &[f64] {
        self.values.row(j)
    }

    /// Fraction of curve pairs whose band contains the whole graph of curve
    /// `j`.
    pub fn band_depth(&self, j: usize) -> f64 {
        let n = self.len();
        if n < 2 {
            return 1.0;
        }
        let y = self.curve(j);
        let mut count = 0usize;
        for a in 0..n {
            for b in a + 1..n {
                let (ya, yb) = (self.curve(a), self.curve(b));
                if (0..y.len()).all(|t| ya[t].min(yb[t]) <= y[t] && y[t] <= ya[t].max(yb[t])) {
                    count += 1;
                }
            }
        }
        count as f64 / pairs(n)
    }

    /// Modified band depth of every curve in `O(M B log B)`: at each grid
    /// point a pair fails to contain `y(t)` only when both members lie
    /// strictly below or both strictly above it.
    pub fn modified_band_depth(&self) -> Vec<f64> {
        let n = self.len();
        let m = self.grid.len();
        if n < 2 {
            return alloc::vec![1.0; n];
        }
        let total = pairs(n);
        let mut count = alloc::vec![0.0f64; n];
        let mut sorted = alloc::vec![0.0f64; n];
        for t in 0..m {
            for (j, s) in sorted.iter_mut().enumerate() {
                *s = self.values[(j, t)];
            }
            sorted.sort_unstable_by(f64::total_cmp);
            for (j, c) in count.iter_mut().enumerate() {
                let v = self.values[(j, t)];
                let below = sorted.partition_point(|&x| x < v);
                let above = n - sorted.partition_point(|&x| x <= v);
                *c += total - pairs(below) - pairs(above);
            }
        }
        count.into_iter().map(|c| c / (m as f64 * total)).collect()
    }

    /// `‖y_j‖ = (∫ y_j²)^{1/2}` by the trapezoidal rule on the grid.
    pub fn l2_norms(&self) -> Vec<f64> {
        self.values.row_iter().map(|y| libm::sqrt(trapezoid(&self.grid, |t| y[t] * y[t]))).collect()
    }

    /// Centrality statistic per curve: MBD (larger is more central) or `L²`
    /// norm (smaller is more central).
    pub fn order_stats(&self, ordering: Ordering) -> Vec<f64> {
        match ordering {
            Ordering::Mbd => self.modified_band_depth(),
            Ordering::L2 => self.l2_norms(),
        }
    }

    /// Indices of the most central curves, most central first; ties keep the
    /// original order.
    pub fn rank(&self, ordering: Ordering) -> (Vec<usize>, Vec<f64>) {
        let stats = self.order_stats(ordering);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| compare_centrality(ordering, stats[a], stats[b]));
        (idx, stats)
    }

    /// Pointwise min/max envelope of the curves with the given indices.
    pub fn envelope(&self, idx: &[usize]) -> Result<Band> {
        if idx.is_empty() {
            return Err(Error::Level("empty selection".into()));
        }
        let m = self.grid.len();
        let mut lower = self.curve(idx[0]).to_vec();
        let mut upper = lower.clone();
        for &j in &idx[1..] {
            let y = self.curve(j);
            for t in 0..m {
                lower[t] = lower[t].min(y[t]);
                upper[t] = upper[t].max(y[t]);
            }
        }
        Ok(Band { lower, upper })
    }
}

fn trapezoid(grid: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    (1..grid.len()).map(|t| 0.5 * (grid[t] - grid[t - 1]) * (f(t - 1) + f(t))).sum()
}

/// Number of curves kept at level `alpha`: `⌊B(1 - α)⌋`.
pub fn central_count(b: usize, alpha: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Level(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let k = libm::floor(b as f64 * (1.0 - alpha) + 1e-9) as usize;
    if k == 0 {
        return Err(Error::Level(format!("alpha {alpha} leaves no curve out of {b}")));
    }
    Ok(k.min(b))
}

/// Lower and upper curves on a grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Band {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Band {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains_pointwise(&self, other: &Band) -> bool {
        self.lower.iter().zip(&other.lower).all(|(a, b)| a <= b) && self.upper.iter().zip(&other.upper).all(|(a, b)| a >= b)
    }
}

/// Envelope of the `⌊B(1 - α)⌋` most central curves.
pub fn central_envelope(ensemble: &CurveEnsemble, alpha: f64, ordering: Ordering) -> Result<Band> {
    let k = central_count(ensemble.len(), alpha)?;
    let (idx, _) = ensemble.rank(ordering);
    ensemble.envelope(&idx[..k])
}

/// Fraction of grid points where `lower <= truth <= upper`.
pub fn domain_coverage(band: &Band, truth: &[f64]) -> Result<f64> {
    if truth.len() != band.len() || band.upper.len() != band.lower.len() || truth.is_empty() {
        return Err(Error::Incompatible(format!("band of {} points vs truth of {}", band.len(), truth.len())));
    }
    let inside = truth.iter().enumerate().filter(|&(t, &v)| band.lower[t] <= v && v <= band.upper[t]).count();
    Ok(inside as f64 / truth.len() as f64)
}

/// Fraction of runs whose domain coverage reaches `threshold`.
pub fn functional_coverage(coverages: &[f64], threshold: f64) -> Result<f64> {
    if coverages.is_empty() {
        return Err(Error::InvalidParameter("functional coverage needs at least one run".into()));
    }
    let hits = coverages.iter().filter(|&&c| c >= threshold - 1e-12).count();
    Ok(hits as f64 / coverages.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Width {
    pub width: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

pub fn band_width(band: &Band) -> Width {
    let width: Vec<f64> = band.upper.iter().zip(&band.lower).map(|(u, l)| u - l).collect();
    let mean = if width.is_empty() { 0.0 } else { width.iter().sum::<f64>() / width.len() as f64 };
    let max = width.iter().copied().fold(0.0, f64::max);
    Width { width, mean, max }
}

/// Orders two floats the way [`CurveEnsemble::rank`] does; exposed for
/// callers that rank precomputed statistics.
pub fn compare_centrality(ordering: Ordering, a: f64, b: f64) -> CmpOrdering {
    match ordering {
        Ordering::Mbd => b.total_cmp(&a),
        Ordering::L2 => a.total_cmp(&b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcurves::uniform_grid;
    use alloc::vec;
    use alloc::vec::Vec;

    fn constants(levels: &[f64], m: usize) -> CurveEnsemble {
        let rows: Vec<Vec<f64>> = levels.iter().map(|&c| vec![c; m]).collect();
        CurveEnsemble::new(Matrix::from_rows(&rows), uniform_grid(0.0, 1.0, m)).unwrap()
    }

    /// Definitional double sum over pairs.
    fn mbd_brute(e: &CurveEnsemble) -> Vec<f64> {
        let (n, m) = (e.len(), e.grid().len());
        (0..n)
            .map(|j| {
                let y = e.curve(j);
                let mut s = 0usize;
                for a in 0..n {
                    for b in a + 1..n {
                        let (ya, yb) = (e.curve(a), e.curve(b));
                        s += (0..m).filter(|&t| ya[t].min(yb[t]) <= y[t] && y[t] <= ya[t].max(yb[t])).count();
                    }
                }
                s as f64 / (m as f64 * (n * (n - 1) / 2) as f64)
            })
            .collect()
    }

    #[test]
    fn three_constant_curves() {
        let e = constants(&[1.0, 2.0, 3.0], 5);
        // self pairs count: the middle curve sits in all three bands, each
        // outer curve in the two bands it belongs to
        assert_eq!(e.modified_band_depth(), vec![2.0 / 3.0, 1.0, 2.0 / 3.0]);
        assert_eq!(e.band_depth(1), 1.0);
        assert_eq!(e.band_depth(0), 2.0 / 3.0);
    }

    #[test]
    fn identical_curves_have_full_depth() {
        let e = constants(&[0.7; 6], 4);
        assert!(e.modified_band_depth().iter().all(|&d| d == 1.0));
        let b = central_envelope(&e, 0.2, Ordering::Mbd).unwrap();
        assert_eq!(b.lower, vec![0.7; 4]);
        assert_eq!(b.upper, vec![0.7; 4]);
    }

    #[test]
    fn fast_mbd_with_ties() {
        let rows = vec![vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]];
        let e = CurveEnsemble::new(Matrix::from_rows(&rows), vec![0.0, 0.5, 1.0]).unwrap();
        let fast = e.modified_band_depth();
        let slow = mbd_brute(&e);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-15);
        }
        for j in 0..4 {
            assert!(fast[j] >= e.band_depth(j));
        }
    }

    #[test]
    fn l2_norm_closed_forms() {
        let e = constants(&[0.0, -3.0], 11);
        assert_eq!(e.l2_norms(), vec![0.0, 3.0]);
        let grid = uniform_grid(0.0, 1.0, 2001);
        let y: Vec<f64> = grid.iter().map(|&t| libm::sin(3.0 * t) + t * t).collect();
        let e = CurveEnsemble::new(Matrix::from_rows(&[y]), grid).unwrap();
        // ∫ (sin 3t + t²)² on [0,1] in closed form
        let exact = 0.5 - libm::sin(6.0) / 12.0 + 0.2 + 2.0 * (-libm::cos(3.0) / 3.0 + 2.0 * libm::sin(3.0) / 9.0 + 2.0 * (libm::cos(3.0) - 1.0) / 27.0);
        assert!((e.l2_norms()[0] - libm::sqrt(exact)).abs() < 1e-6);
    }

    #[test]
    fn envelope_rules() {
        let e = constants(&[-1.0, 0.5, 2.0, -0.2], 3);
        let all = central_envelope(&e, 0.0, Ordering::L2).unwrap();
        assert_eq!((all.lower[0], all.upper[0]), (-1.0, 2.0));
        let two = central_envelope(&e, 0.5, Ordering::L2).unwrap();
        assert_eq!((two.lower[0], two.upper[0]), (-0.2, 0.5));
        assert_eq!(central_count(500, 0.05).unwrap(), 475);
        assert_eq!(central_count(200, 0.05).unwrap(), 190);
        assert!(matches!(central_count(1, 0.5), Err(Error::Level(_))));
        assert!(central_count(10, 1.0).is_err());
    }

    #[test]
    fn symmetric_pair_band() {
        let e = constants(&[0.3, -0.3], 4);
        let band = central_envelope(&e, 0.0, Ordering::Mbd).unwrap();
        let w = band_width(&band);
        assert!(w.width.iter().all(|&v| (v - 0.6).abs() < 1e-15));
        assert_eq!(w.max, w.mean);
    }

    #[test]
    fn coverage_metrics() {
        let band = Band { lower: vec![0.0; 4], upper: vec![1.0; 4] };
        assert_eq!(domain_coverage(&band, &[0.5, 1.0, 1.5, -0.1]).unwrap(), 0.5);
        assert_eq!(domain_coverage(&band, &[2.0; 4]).unwrap(), 0.0);
        assert!(domain_coverage(&band, &[0.0; 3]).is_err());
        assert_eq!(functional_coverage(&[1.0, 0.95, 0.8], 1.0).unwrap(), 1.0 / 3.0);
        assert_eq!(functional_coverage(&[1.0, 0.95, 0.8], 0.9).unwrap(), 2.0 / 3.0);
        assert_eq!(functional_coverage(&[0.0, 0.2], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn parse_names() {
        for o in Ordering::ALL {
            assert_eq!(Ordering::parse(o.name()), Some(o));
        }
        assert_eq!(Ordering::parse("both"), None);
    }
}
