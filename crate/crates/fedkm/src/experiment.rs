//! Monte-Carlo retrain-frequency runs and the grid-step sweep.

use anyhow::{bail, Result};
use fedkm_core::clustering::WeightedDataset;
use fedkm_core::eval::{self, RemovalAnalysis, RemovalMode, RetrainEstimate};
use fedkm_core::GridSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline;

/// One row of the retrain-frequency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainRow {
    pub mode: String,
    pub batch_size: usize,
    pub points: usize,
    pub k: usize,
    pub trials: u64,
    pub retrains: u64,
    pub rate: f64,
    pub std_error: f64,
    /// Exact hit probability (random) or the bound's ceiling (adversarial).
    pub reference: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
}

/// Parallel version of the serial estimator; trial `t` always uses the
/// same sub-streams, so the count does not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn retrain_estimate(
    data: &WeightedDataset,
    labels: &[usize],
    k: usize,
    trials: u64,
    mode: RemovalMode,
    r: usize,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<RetrainEstimate> {
    let (order, reference) = eval::experiment_reference(data, labels, k, mode, r)?;
    let hits = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| eval::retrain_trial(data, k, mode, r, &order, seed, t).map(u64::from))
            .try_reduce(|| 0, |a, b| Ok(a + b))
    })?;
    Ok(RetrainEstimate::new(trials, hits, reference))
}

pub fn retrain_rows(
    data: &WeightedDataset,
    labels: &[usize],
    k: usize,
    trials: u64,
    batches: &[usize],
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<Vec<RetrainRow>> {
    let analysis = RemovalAnalysis::measure(data, labels, k)?;
    let mut rows = Vec::new();
    for mode in [RemovalMode::Random, RemovalMode::Adversarial] {
        for &r in batches {
            let est = retrain_estimate(data, labels, k, trials, mode, r, seed, pool)?;
            rows.push(RetrainRow {
                mode: match mode {
                    RemovalMode::Random => "random".into(),
                    RemovalMode::Adversarial => "adversarial".into(),
                },
                batch_size: r,
                points: data.len(),
                k,
                trials,
                retrains: est.retrains,
                rate: est.rate,
                std_error: est.std_error,
                reference: est.reference,
                epsilon1: analysis.epsilon1,
                epsilon2: analysis.epsilon2,
            });
        }
    }
    Ok(rows)
}

/// One row of the grid-step sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    /// Step relative to `1/√n`.
    pub multiplier: f64,
    pub gamma: f64,
    pub bins_per_dim: u64,
    pub objective: f64,
    pub reference_objective: f64,
    pub loss_ratio: f64,
}

pub const GAMMA_MULTIPLIERS: [f64; 7] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];

/// Trains once per step `m/√n` and records the loss ratio against one
/// shared reference.
pub fn gamma_rows(
    prepared: &pipeline::Prepared,
    reference_runs: usize,
    multipliers: &[f64],
    pool: &rayon::ThreadPool,
) -> Result<Vec<GammaRow>> {
    let n: usize = prepared.datasets.iter().map(WeightedDataset::len).sum();
    let dim = prepared.config.grid.dim();
    if n == 0 {
        bail!("no data");
    }
    let mut reference = None;
    let mut rows = Vec::new();
    for &m in multipliers {
        let b = ((n as f64).sqrt() / m).round().max(1.0) as u64;
        let mut config = prepared.config.clone();
        config.grid = GridSpec::new(b, dim)?;
        let model = pipeline::train(prepared.datasets.clone(), config, pool)?;
        if reference.is_none() {
            let cfg = model.config();
            reference = Some(
                eval::reference_clustering(&model.pooled_data(), cfg.k, reference_runs, cfg.seed, cfg.max_iters, cfg.tol)?
                    .1,
            );
        }
        let phi_ref = reference.expect("set above");
        let objective = model.federated_objective()?;
        rows.push(GammaRow {
            multiplier: m,
            gamma: model.config().grid.gamma(),
            bins_per_dim: b,
            objective,
            reference_objective: phi_ref,
            loss_ratio: objective / phi_ref,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_serial_estimator() {
        let inst = eval::removal_instance(40, 3, 3, 10.0, 2).unwrap();
        let pool = pipeline::thread_pool(3).unwrap();
        for mode in [RemovalMode::Random, RemovalMode::Adversarial] {
            let par = retrain_estimate(&inst.data, &inst.labels, 3, 500, mode, 2, 9, &pool).unwrap();
            let ser = eval::retrain_probability_experiment(&inst.data, &inst.labels, 3, 500, mode, 2, 9).unwrap();
            assert_eq!(par, ser);
        }
    }
}
