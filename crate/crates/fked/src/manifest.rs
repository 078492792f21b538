//! Covariate manifest: which scalar and functional covariates enter the
//! drift, where they are read from, and where the prediction targets are.
//!
//! Scalar covariates come from a CSV with a `site_id` column plus one column
//! per covariate; functional covariates use the long observation format and
//! are smoothed like the response. Both files list fitting sites and targets.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use fked_core::fcurves::smooth;
use fked_core::{BasisSpec, CovariateSet, CurveSet, Matrix, TargetCovariates};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::formats::{open, read_json, read_observations};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateManifest {
    /// Use the site coordinates as the scalar covariates `x` and `y`.
    pub coordinates: bool,
    pub scalars: Option<ScalarSource>,
    pub functionals: Vec<FunctionalSource>,
    /// CSV `target_id,x,y` of prediction sites.
    pub targets: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarSource {
    pub file: PathBuf,
    /// Columns to use; all non-id columns when absent.
    #[serde(default)]
    pub columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSource {
    pub name: String,
    pub file: PathBuf,
    /// Basis size and penalty; the response basis settings when absent.
    #[serde(default)]
    pub n_basis: Option<usize>,
    #[serde(default)]
    pub penalty: Option<f64>,
    #[serde(default)]
    pub domain: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl CovariateManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: CovariateManifest = read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(s) = &mut m.scalars {
            fix(&mut s.file);
        }
        for f in &mut m.functionals {
            fix(&mut f.file);
        }
        if let Some(t) = &mut m.targets {
            fix(t);
        }
        Ok(m)
    }

    /// Covariates at the response sites, in response order.
    pub fn covariates(&self, response: &CurveSet) -> Result<CovariateSet> {
        let n = response.len();
        let mut names = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        if self.coordinates {
            names.extend(["x".to_string(), "y".to_string()]);
            columns.push(response.sites.iter().map(|s| s.x).collect());
            columns.push(response.sites.iter().map(|s| s.y).collect());
        }
        if let Some(src) = &self.scalars {
            let table = ScalarTable::read(src)?;
            for (k, name) in table.names.iter().enumerate() {
                names.push(name.clone());
                let col = response
                    .sites
                    .iter()
                    .map(|s| table.value(&s.id, k, &src.file))
                    .collect::<Result<Vec<f64>>>()?;
                columns.push(col);
            }
        }
        let scalars = Matrix::from_fn(n, columns.len(), |i, p| columns[p][i]);
        let mut fnames = Vec::new();
        let mut curves = Vec::new();
        for src in &self.functionals {
            let all = smooth_functional(src, &source_basis(src, &response.basis)?)?;
            let idx = response
                .sites
                .iter()
                .map(|s| position(&all, &s.id, &src.file))
                .collect::<Result<Vec<usize>>>()?;
            fnames.push(src.name.clone());
            curves.push(all.subset(&idx));
        }
        CovariateSet::new(names, scalars, fnames, curves).map_err(|e| CliError::input(e.to_string()))
    }

    pub fn targets(&self) -> Result<Vec<Target>> {
        let path = self.targets.as_deref().ok_or_else(|| CliError::input("the covariate manifest lists no targets"))?;
        read_targets(path)
    }

    /// Covariates at each target, matching the covariates a model was fitted
    /// with. Functional covariates are smoothed on the model's bases.
    pub fn target_covariates(&self, fitted: &CovariateSet, targets: &[Target]) -> Result<Vec<TargetCovariates>> {
        let coord_names = if self.coordinates { 2 } else { 0 };
        let table = self.scalars.as_ref().map(ScalarTable::read).transpose()?;
        let mut names: Vec<String> = Vec::new();
        if self.coordinates {
            names.extend(["x".to_string(), "y".to_string()]);
        }
        if let Some(t) = &table {
            names.extend(t.names.iter().cloned());
        }
        if names != fitted.scalar_names {
            return Err(CliError::input(format!(
                "manifest scalar covariates {names:?} differ from the model's {:?}",
                fitted.scalar_names
            )));
        }
        let fnames: Vec<&String> = self.functionals.iter().map(|f| &f.name).collect();
        if fnames.len() != fitted.functional_names.len() || fnames.iter().zip(&fitted.functional_names).any(|(a, b)| *a != b) {
            return Err(CliError::input(format!(
                "manifest functional covariates {fnames:?} differ from the model's {:?}",
                fitted.functional_names
            )));
        }
        let smoothed = self
            .functionals
            .iter()
            .zip(&fitted.functionals)
            .map(|(src, f)| smooth_functional(src, &f.basis))
            .collect::<Result<Vec<CurveSet>>>()?;
        targets
            .iter()
            .map(|t| {
                let mut scalars = Vec::with_capacity(names.len());
                if coord_names > 0 {
                    scalars.extend([t.x, t.y]);
                }
                if let (Some(table), Some(src)) = (&table, &self.scalars) {
                    for k in 0..table.names.len() {
                        scalars.push(table.value(&t.id, k, &src.file)?);
                    }
                }
                let functionals = smoothed
                    .iter()
                    .zip(&self.functionals)
                    .map(|(cs, src)| Ok(cs.coeffs.row(position(cs, &t.id, &src.file)?).to_vec()))
                    .collect::<Result<Vec<Vec<f64>>>>()?;
                Ok(TargetCovariates { scalars, functionals })
            })
            .collect()
    }
}

fn position(curves: &CurveSet, id: &str, file: &Path) -> Result<usize> {
    curves
        .sites
        .iter()
        .position(|s| s.id == id)
        .ok_or_else(|| CliError::input(format!("{} has no observations for site `{id}`", file.display())))
}

fn source_basis(src: &FunctionalSource, response: &BasisSpec) -> Result<BasisSpec> {
    let (a, b) = src.domain.unwrap_or(response.domain);
    BasisSpec::uniform(a, b, src.n_basis.unwrap_or(response.n_basis), src.penalty.unwrap_or(response.penalty))
        .map_err(|e| CliError::input(format!("functional covariate `{}`: {e}", src.name)))
}

fn smooth_functional(src: &FunctionalSource, basis: &BasisSpec) -> Result<CurveSet> {
    let raw = read_observations(&src.file)?;
    smooth(&raw, basis).map_err(|e| CliError::input(format!("functional covariate `{}`: {e}", src.name)))
}

struct ScalarTable {
    names: Vec<String>,
    rows: HashMap<String, Vec<f64>>,
}

impl ScalarTable {
    fn read(src: &ScalarSource) -> Result<Self> {
        let path = &src.file;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
        let headers = rdr.headers().map_err(|e| CliError::parse(path, 1, e.to_string()))?.clone();
        let id_col = headers
            .iter()
            .position(|h| h == "site_id")
            .ok_or_else(|| CliError::parse(path, 1, "missing column `site_id`"))?;
        let names: Vec<String> = match &src.columns {
            Some(c) => c.clone(),
            None => headers.iter().enumerate().filter(|&(j, _)| j != id_col).map(|(_, h)| h.to_string()).collect(),
        };
        let cols = names
            .iter()
            .map(|n| headers.iter().position(|h| h == n).ok_or_else(|| CliError::parse(path, 1, format!("missing column `{n}`"))))
            .collect::<Result<Vec<usize>>>()?;
        let mut rows = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let vals = cols
                .iter()
                .map(|&j| match rec[j].parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(CliError::parse(path, line, format!("`{}` is not a finite number", &headers[j]))),
                })
                .collect::<Result<Vec<f64>>>()?;
            if rows.insert(rec[id_col].to_string(), vals).is_some() {
                return Err(CliError::parse(path, line, format!("site `{}` listed twice", &rec[id_col])));
            }
        }
        Ok(Self { names, rows })
    }

    fn value(&self, id: &str, k: usize, file: &Path) -> Result<f64> {
        self.rows
            .get(id)
            .map(|r| r[k])
            .ok_or_else(|| CliError::input(format!("{} has no covariates for site `{id}`", file.display())))
    }
}

pub fn read_targets(path: &Path) -> Result<Vec<Target>> {
    #[derive(Deserialize)]
    struct Row {
        target_id: String,
        x: f64,
        y: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut out: Vec<Target> = Vec::new();
    for rec in rdr.deserialize::<Row>() {
        let r = rec.map_err(|e| CliError::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        if !(r.x.is_finite() && r.y.is_finite()) {
            return Err(CliError::parse(path, out.len() as u64 + 2, "coordinates must be finite"));
        }
        if out.iter().any(|t| t.id == r.target_id) {
            return Err(CliError::parse(path, out.len() as u64 + 2, format!("target `{}` listed twice", r.target_id)));
        }
        out.push(Target { id: r.target_id, x: r.x, y: r.y });
    }
    if out.is_empty() {
        return Err(CliError::parse(path, 1, "no targets"));
    }
    Ok(out)
}
