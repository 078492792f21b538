//! Command-line flags.

use std::path::PathBuf;

use clap::Parser;
use fked_core::Family;

use crate::commands::Command;
use crate::config::{NuggetMode, OrderingChoice, RefitChoice, ResponseTransform, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "fked", version, about = "Functional kriging with external drift and bootstrap prediction bands")]
pub struct Args {
    /// smooth | fit | predict | bands | simulate | report
    #[arg(value_enum)]
    pub command: Command,

    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Response observations (smooth, fit), scenario JSON (simulate), or
    /// run records / bands directory (report).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Covariate manifest JSON.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bootstrap replicates.
    #[arg(long = "B")]
    pub b: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub ordering: Option<OrderingChoice>,
    /// Comma-separated variogram families.
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub nugget: Option<NuggetMode>,
    #[arg(long, value_enum)]
    pub refit: Option<RefitChoice>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub n_basis: Option<usize>,
    #[arg(long)]
    pub penalty: Option<f64>,
    #[arg(long)]
    pub drift_penalty: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub response_transform: Option<ResponseTransform>,
    /// Simulation repetitions per scenario.
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Domain-coverage threshold for functional coverage.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write the contrast ensembles as well.
    #[arg(long)]
    pub contrasts: bool,
    /// True curves for the coverage report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

impl Args {
    /// Config file values overlaid with the flags given.
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let families = self
            .families
            .as_ref()
            .map(|v| {
                v.iter()
                    .map(|f| Family::parse(f.trim()).ok_or_else(|| CliError::input(format!("unknown variogram family `{f}`"))))
                    .collect::<Result<Vec<Family>>>()
            })
            .transpose()?;
        let flags = RunConfig {
            input: self.input.clone(),
            covariates: self.covariates.clone(),
            model: self.model.clone(),
            out: self.out.clone(),
            b: self.b,
            alpha: self.alpha,
            seed: self.seed,
            ordering: self.ordering,
            families,
            nugget: self.nugget,
            refit: self.refit,
            threads: self.threads,
            n_basis: self.n_basis,
            penalty: self.penalty,
            domain: None,
            drift_penalty: self.drift_penalty,
            max_iter: self.max_iter,
            response_transform: self.response_transform,
            repetitions: self.repetitions,
            threshold: self.threshold,
            contrasts: self.contrasts.then_some(true),
            truth: self.truth.clone(),
        };
        let cfg = base.overlay(&flags);
        cfg.validate()?;
        Ok(cfg)
    }
}
