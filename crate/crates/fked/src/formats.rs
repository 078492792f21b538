//! CSV and JSON file formats.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use fked_core::ordering::{band_width, Band};
use fked_core::simlab::{ReportRow, RunRecord};
use fked_core::{BasisSpec, BootstrapResult, CurveSet, EmpiricalVariogram, Matrix, Ordering, RawObservation, Site};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.line() as u64, e.to_string()))
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

fn finite(path: &Path, line: u64, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::parse(path, line, format!("{what} is not a finite number")))
    }
}

/// Reads long-format observations `site_id,x,y,t,value`. Every site must keep
/// the same coordinates on all of its rows.
pub fn read_observations(path: &Path) -> Result<Vec<RawObservation>> {
    read_observations_from(open(path)?, path)
}

pub fn read_observations_from(reader: impl Read, path: &Path) -> Result<Vec<RawObservation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CliError::parse(path, csv_line(&e).max(1), e.to_string()))?.clone();
    for col in ["site_id", "x", "y", "t", "value"] {
        if !headers.iter().any(|h| h == col) {
            return Err(CliError::parse(path, 1, format!("missing column `{col}`")));
        }
    }
    let mut out: Vec<RawObservation> = Vec::new();
    let mut coords: HashMap<String, (f64, f64)> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::parse(path, csv_line(&e), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let obs: RawObservation = rec.deserialize(Some(&headers)).map_err(|e| CliError::parse(path, line, e.to_string()))?;
        for (what, v) in [("x", obs.x), ("y", obs.y), ("t", obs.t), ("value", obs.value)] {
            finite(path, line, what, v)?;
        }
        match coords.get(&obs.site_id) {
            Some(&c) if c != (obs.x, obs.y) => {
                return Err(CliError::parse(path, line, format!("site `{}` changes coordinates", obs.site_id)));
            }
            Some(_) => {}
            None => {
                coords.insert(obs.site_id.clone(), (obs.x, obs.y));
            }
        }
        out.push(obs);
    }
    if out.is_empty() {
        return Err(CliError::parse(path, 1, "no observations"));
    }
    Ok(out)
}

pub fn observations_csv(rows: &[RawObservation]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    finish(w)
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(internal)
}

/// `site_id,x,y,coef_1..coef_Nb`.
pub fn curves_csv(curves: &CurveSet) -> Result<Vec<u8>> {
    let nb = curves.basis.n_basis;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["site_id".to_string(), "x".into(), "y".into()];
    header.extend((1..=nb).map(|l| format!("coef_{l}")));
    w.write_record(&header).map_err(internal)?;
    for (i, s) in curves.sites.iter().enumerate() {
        let mut rec = vec![s.id.clone(), s.x.to_string(), s.y.to_string()];
        rec.extend(curves.coeffs.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(internal)?;
    }
    finish(w)
}

/// Inverse of [`curves_csv`] given the basis descriptor.
pub fn read_curves(path: &Path, basis: BasisSpec) -> Result<CurveSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| CliError::parse(path, 1, e.to_string()))?.clone();
    let nb = basis.n_basis;
    if headers.len() != 3 + nb {
        return Err(CliError::parse(path, 1, format!("expected {} columns for {nb} basis functions", 3 + nb)));
    }
    let mut sites = Vec::new();
    let mut coeffs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::parse(path, csv_line(&e), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |j: usize| -> Result<f64> {
            let v: f64 = rec[j].parse().map_err(|_| CliError::parse(path, line, format!("column {} is not a number", j + 1)))?;
            finite(path, line, &headers[j], v)
        };
        sites.push(Site::new(&rec[0], num(1)?, num(2)?));
        for j in 3..3 + nb {
            coeffs.push(num(j)?);
        }
    }
    if sites.is_empty() {
        return Err(CliError::parse(path, 1, "no curves"));
    }
    let grid = fked_core::fcurves::uniform_grid(basis.domain.0, basis.domain.1, fked_core::fcurves::default_grid_len(nb));
    let n = sites.len();
    CurveSet::new(sites, Matrix::from_vec(n, nb, coeffs), basis, grid).map_err(|e| CliError::input(e.to_string()))
}

/// `h,gamma,count`.
pub fn empirical_csv(emp: &EmpiricalVariogram) -> Result<Vec<u8>> {
    #[derive(Serialize)]
    struct Row {
        h: f64,
        gamma: f64,
        count: usize,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for k in 0..emp.len() {
        w.serialize(Row { h: emp.bins[k], gamma: emp.gamma[k], count: emp.counts[k] }).map_err(internal)?;
    }
    finish(w)
}

/// `t,value` columns for several named curves sharing one grid.
pub fn curve_table(grid: &[f64], header: &[&str], columns: &[&[f64]]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(internal)?;
    for (j, t) in grid.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(columns.iter().map(|c| c[j].to_string()));
        w.write_record(&rec).map_err(internal)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub target_id: String,
    pub t: f64,
    pub predicted_value: f64,
}

pub fn predictions_csv(rows: &[PredictionRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub target_id: String,
    pub site_id: String,
    pub weight: f64,
}

pub fn weights_csv(rows: &[WeightRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    finish(w)
}

/// `replicate,t,contrast_value`, replicates numbered in kept order.
pub fn contrasts_csv(result: &BootstrapResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replicate", "t", "contrast_value"]).map_err(internal)?;
    for j in 0..result.contrasts.rows() {
        for (t, v) in result.grid.iter().zip(result.contrasts.row(j)) {
            w.write_record([j.to_string(), t.to_string(), v.to_string()]).map_err(internal)?;
        }
    }
    finish(w)
}

/// Reads a contrast ensemble back as `(grid, B x M matrix)`.
pub fn read_contrasts(path: &Path) -> Result<(Vec<f64>, Matrix)> {
    #[derive(Deserialize)]
    struct Row {
        replicate: usize,
        t: f64,
        contrast_value: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut rows: Vec<Vec<(f64, f64)>> = Vec::new();
    for rec in rdr.deserialize::<Row>() {
        let r = rec.map_err(|e| CliError::parse(path, csv_line(&e), e.to_string()))?;
        if r.replicate > rows.len() {
            return Err(CliError::parse(path, 0, format!("replicate {} appears out of order", r.replicate)));
        }
        if r.replicate == rows.len() {
            rows.push(Vec::new());
        }
        rows[r.replicate].push((r.t, r.contrast_value));
    }
    let Some(first) = rows.first() else {
        return Err(CliError::parse(path, 1, "no contrasts"));
    };
    let grid: Vec<f64> = first.iter().map(|p| p.0).collect();
    let m = grid.len();
    let mut data = Vec::with_capacity(rows.len() * m);
    for (j, r) in rows.iter().enumerate() {
        if r.len() != m || r.iter().zip(&grid).any(|(p, t)| p.0 != *t) {
            return Err(CliError::parse(path, 0, format!("replicate {j} is on a different grid")));
        }
        data.extend(r.iter().map(|p| p.1));
    }
    Ok((grid, Matrix::from_vec(rows.len(), m, data)))
}

/// `t,prediction,lower,upper`.
pub fn band_csv(grid: &[f64], prediction: &[f64], band: &Band) -> Result<Vec<u8>> {
    curve_table(grid, &["t", "prediction", "lower", "upper"], &[prediction, &band.lower, &band.upper])
}

/// Reads a `t,prediction,lower,upper` file.
pub fn read_band(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Band)> {
    #[derive(Deserialize)]
    struct Row {
        t: f64,
        prediction: f64,
        lower: f64,
        upper: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let (mut grid, mut pred, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.deserialize::<Row>() {
        let r = rec.map_err(|e| CliError::parse(path, csv_line(&e), e.to_string()))?;
        grid.push(r.t);
        pred.push(r.prediction);
        lower.push(r.lower);
        upper.push(r.upper);
    }
    Ok((grid, pred, Band { lower, upper }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub site_id: String,
    pub method: Ordering,
    pub mean_width: f64,
    pub max_width: f64,
    pub domain_coverage: f64,
}

impl CoverageRow {
    pub fn new(site_id: impl Into<String>, method: Ordering, band: &Band, coverage: f64) -> Self {
        let w = band_width(band);
        Self { site_id: site_id.into(), method, mean_width: w.mean, max_width: w.max, domain_coverage: coverage }
    }
}

pub fn coverage_csv(rows: &[CoverageRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    finish(w)
}

pub fn report_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    finish(w)
}

/// Per-run records of one or more scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scenario: String,
    pub n: usize,
    pub sigma2: f64,
    pub phi: f64,
    pub rep: u64,
    pub site: String,
    pub method: Ordering,
    pub mean_width: f64,
    pub max_width: f64,
    pub domain_coverage: f64,
}

impl RunRow {
    pub fn record(&self) -> RunRecord {
        RunRecord {
            rep: self.rep,
            site: self.site.clone(),
            method: self.method,
            mean_width: self.mean_width,
            max_width: self.max_width,
            domain_coverage: self.domain_coverage,
        }
    }
}

pub fn runs_csv(rows: &[RunRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    finish(w)
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let rows = rdr
        .deserialize::<RunRow>()
        .map(|r| r.map_err(|e| CliError::parse(path, csv_line(&e), e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(CliError::parse(path, 1, "no run records"));
    }
    Ok(rows)
}

/// Linear interpolation of `(t, y)` samples onto `grid`; `None` when the
/// grid reaches outside the sampled range.
pub fn interpolate(t: &[f64], y: &[f64], grid: &[f64]) -> Option<Vec<f64>> {
    let mut pts: Vec<(f64, f64)> = t.iter().copied().zip(y.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = (pts.first()?.0, pts.last()?.0);
    let tol = 1e-9 * (hi - lo).abs().max(1.0);
    grid.iter()
        .map(|&g| {
            if g < lo - tol || g > hi + tol {
                return None;
            }
            let k = pts.partition_point(|p| p.0 < g);
            Some(match k {
                0 => pts[0].1,
                k if k == pts.len() => pts[k - 1].1,
                k => {
                    let (a, b) = (pts[k - 1], pts[k]);
                    if b.0 == a.0 { b.1 } else { a.1 + (b.1 - a.1) * (g - a.0) / (b.0 - a.0) }
                }
            })
        })
        .collect()
}
