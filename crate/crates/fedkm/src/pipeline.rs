//! Data preparation and parallel training.

use anyhow::{bail, Context, Result};
use fedkm_core::clustering::WeightedDataset;
use fedkm_core::eval::{self, PartitionSpec};
use fedkm_core::federation::{ClientState, FederationConfig, GenerationMode, GlobalModel, Transport};
use fedkm_core::seed::{self, Stream};
use fedkm_core::{GridSpec, ScaleTransform};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{GammaArg, GenMode, RunConfig};
use crate::io;

/// Pooled input before partitioning.
#[derive(Debug, Clone)]
pub struct Source {
    pub data: WeightedDataset,
    pub labels: Option<Vec<usize>>,
}

pub fn load_source(cfg: &RunConfig) -> Result<Source> {
    if let Some(path) = &cfg.data {
        let loaded = io::load_csv(path, cfg.labeled)?;
        return Ok(Source { data: loaded.data, labels: loaded.labels });
    }
    let Some(g) = cfg.gaussian else {
        bail!("no input: pass --data or --gaussian");
    };
    let mix = eval::gen_gaussian(&g.spec(cfg.seed))?;
    Ok(Source { data: mix.data, labels: Some(mix.labels) })
}

/// Row indices per client. Labeled data is split so that each client holds
/// at most K′ labels; unlabeled data is shuffled and dealt round-robin.
pub fn partition(cfg: &RunConfig, src: &Source) -> Result<Vec<Vec<usize>>> {
    if cfg.clients == 0 {
        bail!("need at least one client");
    }
    match &src.labels {
        Some(labels) => {
            let k = labels.iter().max().map_or(1, |m| m + 1);
            let spec = PartitionSpec { clients: cfg.clients, kprime: cfg.kprime(), seed: cfg.seed };
            Ok(eval::partition_noniid(labels, k, &spec)?)
        }
        None => {
            let mut rows: Vec<usize> = (0..src.data.len()).collect();
            rows.shuffle(&mut seed::stream_rng(cfg.seed, Stream::Partition, &[1]));
            let mut parts = vec![Vec::new(); cfg.clients];
            for (i, r) in rows.into_iter().enumerate() {
                parts[i % cfg.clients].push(r);
            }
            parts.iter_mut().for_each(|p| p.sort_unstable());
            Ok(parts)
        }
    }
}

pub fn grid_for(gamma: GammaArg, n: usize, dim: usize) -> Result<GridSpec> {
    Ok(match gamma {
        GammaArg::Auto => GridSpec::default_for(n, dim)?,
        GammaArg::Step(g) => GridSpec::from_step(g, dim).context("1/gamma must be an integer")?,
    })
}

pub fn federation_config(cfg: &RunConfig, grid: GridSpec) -> FederationConfig {
    let mut fc = FederationConfig::new(cfg.k, grid);
    fc.seed = cfg.seed;
    fc.generation = match cfg.gen_mode {
        GenMode::Weighted => GenerationMode::Weighted,
        GenMode::Uniform => GenerationMode::Uniform,
    };
    fc.transport = if cfg.secure() { Transport::Secure } else { Transport::Plaintext { prequantize: cfg.prequantize } };
    fc.decrement_counts = cfg.decrement_counts;
    fc.max_iters = cfg.max_iters;
    fc.tol = cfg.tol;
    fc
}

/// Everything needed to train: scaled client datasets and the federation
/// settings derived from the run configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scale: ScaleTransform,
    pub datasets: Vec<WeightedDataset>,
    pub config: FederationConfig,
}

pub fn prepare(cfg: &RunConfig, src: &Source) -> Result<Prepared> {
    let parts = partition(cfg, src)?;
    let (scale, datasets) = eval::scaled_client_datasets(&src.data, &parts)?;
    let grid = grid_for(cfg.gamma, src.data.len(), src.data.dim())?;
    Ok(Prepared { scale, datasets, config: federation_config(cfg, grid) })
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Trains clients in parallel, then aggregates. The result does not depend
/// on the number of workers.
pub fn train(datasets: Vec<WeightedDataset>, config: FederationConfig, pool: &rayon::ThreadPool) -> Result<GlobalModel> {
    let clients = pool.install(|| {
        datasets
            .into_par_iter()
            .enumerate()
            .map(|(id, d)| ClientState::train(id, d, None, &config))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(GlobalModel::assemble(clients, config)?)
}
