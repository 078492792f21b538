//! Rayon schedulers. Replicates and repetitions draw from their own seeded
//! streams and are merged by index, so results do not depend on the number
//! of threads.

use fked_core::bootstrap::finish;
use fked_core::simlab::{aggregate, check_run_size, repetition_bootstrap, run_repetition_with, RepetitionOutcome, ScenarioReport};
use fked_core::{BootstrapConfig, BootstrapContext, BootstrapResult, FkedModel, Scenario, TargetCovariates};
use rayon::prelude::*;

use crate::error::{CliError, Result};

pub fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

/// All replicates of one target, in replicate order.
pub fn replicates(ctx: &BootstrapContext<'_>, boot: &BootstrapConfig) -> Vec<fked_core::Result<Vec<f64>>> {
    (0..boot.b).into_par_iter().map(|j| ctx.replicate(boot.seed, j, boot.refit_mode)).collect()
}

pub fn bootstrap(model: &FkedModel, site: (f64, f64), target: &TargetCovariates, boot: &BootstrapConfig) -> Result<BootstrapResult> {
    boot.validate()?;
    let ctx = BootstrapContext::new(model, site, target)?;
    Ok(finish(&ctx, boot, replicates(&ctx, boot))?)
}

/// `s` repetitions of a scenario in parallel. Also returns the first
/// successful repetition for band and data export.
pub fn run_scenario(scenario: &Scenario, b: usize, s: usize) -> Result<(ScenarioReport, Option<RepetitionOutcome>)> {
    check_run_size(b, s).map_err(|e| CliError::input(e.to_string()))?;
    scenario.validate().map_err(|e| CliError::input(e.to_string()))?;
    let outcomes: Vec<fked_core::Result<RepetitionOutcome>> = (0..s as u64)
        .into_par_iter()
        .map(|rep| {
            let out = run_repetition_with(scenario, rep, &repetition_bootstrap(scenario, rep, b), replicates);
            match &out {
                Ok(_) => log::debug!("{} n={} repetition {rep} done", scenario.name, scenario.n),
                Err(e) => log::warn!("{} n={} repetition {rep} failed: {e}", scenario.name, scenario.n),
            }
            out
        })
        .collect();
    let first = outcomes.iter().find_map(|o| o.as_ref().ok()).cloned();
    Ok((aggregate(scenario, outcomes)?, first))
}
