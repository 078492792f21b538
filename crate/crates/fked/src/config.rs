//! Run configuration shared by command-line flags and JSON config files.
//! A flag given on the command line overrides the same key in the file.

use std::path::{Path, PathBuf};

use fked_core::bootstrap::DEFAULT_SEED;
use fked_core::{BootstrapConfig, DriftConfig, Family, Ordering, RefitMode, VariogramConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::formats::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OrderingChoice {
    Mbd,
    L2,
    Both,
}

impl OrderingChoice {
    pub fn methods(self) -> Vec<Ordering> {
        match self {
            Self::Mbd => vec![Ordering::Mbd],
            Self::L2 => vec![Ordering::L2],
            Self::Both => Ordering::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NuggetMode {
    Zero,
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RefitChoice {
    Single,
    Full,
}

impl From<RefitChoice> for RefitMode {
    fn from(r: RefitChoice) -> Self {
        match r {
            RefitChoice::Single => RefitMode::SinglePass,
            RefitChoice::Full => RefitMode::FullIterative,
        }
    }
}

/// Transformation applied to response values before smoothing. Predictions
/// and bands are reported on the transformed scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ResponseTransform {
    #[default]
    None,
    Log,
}

impl ResponseTransform {
    pub fn apply(self, v: f64) -> Option<f64> {
        match self {
            Self::None => Some(v),
            Self::Log if v > 0.0 => Some(v.ln()),
            Self::Log => None,
        }
    }
}

/// Every option of every command. Keys mirror the long flag names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub ordering: Option<OrderingChoice>,
    pub families: Option<Vec<Family>>,
    pub nugget: Option<NuggetMode>,
    pub refit: Option<RefitChoice>,
    pub threads: Option<usize>,
    /// Response basis size; chosen by cross-validation when absent.
    pub n_basis: Option<usize>,
    /// Smoothing penalty; chosen by cross-validation when absent.
    pub penalty: Option<f64>,
    /// Curve domain; the observed time range when absent.
    pub domain: Option<(f64, f64)>,
    /// Drift penalty; chosen by GCV when absent.
    pub drift_penalty: Option<f64>,
    pub max_iter: Option<usize>,
    pub response_transform: Option<ResponseTransform>,
    /// Simulation repetitions per scenario.
    pub repetitions: Option<usize>,
    /// Domain-coverage threshold for functional coverage.
    pub threshold: Option<f64>,
    /// Also write the full contrast ensemble of every target.
    pub contrasts: Option<bool>,
    /// True curves for the coverage report.
    pub truth: Option<PathBuf>,
}

pub const DEFAULT_REPETITIONS: usize = 100;
pub const DEFAULT_SIM_B: usize = 500;
pub const N_BASIS_CANDIDATES: [usize; 7] = [6, 8, 10, 12, 15, 20, 30];
pub const PENALTY_CANDIDATES: [f64; 5] = [0.0, 1e-8, 1e-6, 1e-4, 1e-2];

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl RunConfig {
    /// Loads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input, &mut cfg.covariates, &mut cfg.model, &mut cfg.out, &mut cfg.truth].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// `self` with every key set in `top` replaced.
    pub fn overlay(mut self, top: &RunConfig) -> Self {
        let base = &mut self;
        overlay!(base, top; input, covariates, model, out, b, alpha, seed, ordering, families, nugget, refit,
            threads, n_basis, penalty, domain, drift_penalty, max_iter, response_transform, repetitions,
            threshold, contrasts, truth);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == Some(0) {
            return Err(CliError::input("B must be >= 1"));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(CliError::input(format!("alpha must lie in (0, 1), got {a}")));
            }
        }
        if self.threads == Some(0) {
            return Err(CliError::input("threads must be >= 1"));
        }
        if matches!(&self.families, Some(f) if f.is_empty()) {
            return Err(CliError::input("families must not be empty"));
        }
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::input(format!("threshold must lie in [0, 1], got {t}")));
            }
        }
        if let Some(p) = self.penalty.into_iter().chain(self.drift_penalty).find(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(CliError::input(format!("penalties must be finite and >= 0, got {p}")));
        }
        if let Some((a, b)) = self.domain {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(CliError::input(format!("invalid domain [{a}, {b}]")));
            }
        }
        Ok(())
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value.as_deref().ok_or_else(|| CliError::input(format!("--{flag} is required")))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.require(&self.out, "out")
    }

    pub fn ordering(&self) -> OrderingChoice {
        self.ordering.unwrap_or(OrderingChoice::Both)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn variogram(&self) -> VariogramConfig {
        let mut v = VariogramConfig::default();
        if let Some(f) = &self.families {
            v = v.with_families(f);
        }
        v.fix_nugget_zero = self.nugget.unwrap_or(NuggetMode::Zero) == NuggetMode::Zero;
        v
    }

    pub fn drift(&self) -> DriftConfig {
        let mut d = DriftConfig { penalty: self.drift_penalty, variogram: self.variogram(), ..DriftConfig::default() };
        if let Some(m) = self.max_iter {
            d.max_iter = m;
        }
        d
    }

    /// Bootstrap settings; the primary ordering is the first requested one.
    pub fn bootstrap(&self) -> BootstrapConfig {
        let d = BootstrapConfig::default();
        BootstrapConfig {
            b: self.b.unwrap_or(d.b),
            alpha: self.alpha.unwrap_or(d.alpha),
            seed: self.seed(),
            ordering: self.ordering().methods()[0],
            refit_mode: self.refit.map_or(d.refit_mode, RefitMode::from),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig { b: Some(1000), alpha: Some(0.1), seed: Some(3), ..RunConfig::default() };
        let flags = RunConfig { b: Some(20), ..RunConfig::default() };
        let merged = file.overlay(&flags);
        assert_eq!((merged.b, merged.alpha, merged.seed), (Some(20), Some(0.1), Some(3)));
    }

    #[test]
    fn keys_mirror_flags() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"B": 10, "alpha": 0.2, "ordering": "both", "nugget": "estimate", "refit": "full",
                "families": ["exponential", "spherical"], "threads": 2, "seed": 5}"#,
        )
        .unwrap();
        assert_eq!(cfg.bootstrap().refit_mode, RefitMode::FullIterative);
        assert!(!cfg.variogram().fix_nugget_zero);
        assert_eq!(cfg.variogram().families, vec![Family::Exponential, Family::Spherical]);
        assert!(serde_json::from_str::<RunConfig>(r#"{"b": 10}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            RunConfig { b: Some(0), ..RunConfig::default() },
            RunConfig { alpha: Some(1.0), ..RunConfig::default() },
            RunConfig { alpha: Some(0.0), ..RunConfig::default() },
            RunConfig { families: Some(vec![]), ..RunConfig::default() },
            RunConfig { penalty: Some(-1.0), ..RunConfig::default() },
        ] {
            assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
        }
    }
}
