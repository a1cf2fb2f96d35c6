//! Command dispatch and output files.
//!
//! Every command writes `manifest.txt` into the output directory. Other
//! files, all comma-separated with one header row:
//!
//! * `train.csv`: one row describing the trained model (train, unlearn, bench)
//! * `model.json`: checkpoint after the last round
//! * `requests.csv`: the served removal stream (`kind,target,points`)
//! * `metrics.csv`: one [`MetricsRow`](crate::bench::MetricsRow) per request
//! * `timings.csv`: one [`TimingRow`](crate::bench::TimingRow) per request (bench)
//! * `experiment.csv`: retrain or grid-step rows (experiment)
//!
//! Everything except `timings.csv` is a function of the manifest alone.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fedkm_core::eval;
use fedkm_core::federation::{GlobalModel, RemovalRequest};
use serde::{Deserialize, Serialize};

use crate::bench::{self, MetricsRow, Reference, Repeats, TimingRow};
use crate::config::{manifest_path, Command, ExperimentKind, RunConfig};
use crate::experiment;
use crate::io::{self, Checkpoint};
use crate::pipeline::{self, Source};
use crate::requests;

/// Summary of a freshly trained or loaded model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub clients: usize,
    pub points: usize,
    pub dim: usize,
    pub k: usize,
    pub bins_per_dim: u64,
    pub total_bins: u128,
    pub modulus: u128,
    pub message_bytes: usize,
    pub server_points: usize,
    pub objective: f64,
    pub reference_objective: f64,
    pub loss_ratio: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn model_derived(model: &GlobalModel) -> Vec<(&'static str, String)> {
    let grid = &model.config().grid;
    vec![
        ("points", model.clients().iter().map(|c| c.data().len()).sum::<usize>().to_string()),
        ("dim", grid.dim().to_string()),
        ("gamma", grid.gamma().to_string()),
        ("bins_per_dim", grid.bins_per_dim().to_string()),
        ("total_bins", grid.total_bins().to_string()),
        ("modulus", model.params().modulus.value().to_string()),
    ]
}

fn train_row(model: &GlobalModel, reference: &Reference) -> Result<TrainRow> {
    let grid = &model.config().grid;
    let objective = model.federated_objective()?;
    let message_bytes = model.client_messages()?.iter().map(|m| m.byte_len()).max().unwrap_or(0);
    Ok(TrainRow {
        clients: model.clients().len(),
        points: model.clients().iter().map(|c| c.data().len()).sum(),
        dim: grid.dim(),
        k: model.config().k,
        bins_per_dim: grid.bins_per_dim(),
        total_bins: grid.total_bins(),
        modulus: model.params().modulus.value(),
        message_bytes,
        server_points: model.server().dataset().len(),
        objective,
        reference_objective: reference.objective,
        loss_ratio: objective / reference.objective,
    })
}

/// Trains from the configured source or loads `--model`.
fn obtain_model(cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<Checkpoint> {
    if let Some(path) = &cfg.model {
        return Ok(io::load_checkpoint(path)?);
    }
    let src = pipeline::load_source(cfg)?;
    let prepared = pipeline::prepare(cfg, &src)?;
    let model = pipeline::train(prepared.datasets, prepared.config, pool)?;
    Ok(Checkpoint { scale: Some(prepared.scale), model })
}

fn write_manifest(cfg: &RunConfig, derived: &[(&str, String)]) -> Result<()> {
    let path = manifest_path(&cfg.out);
    fs::write(&path, cfg.manifest(derived)).with_context(|| format!("writing {}", path.display()))
}

/// Runs one command; all artifacts go to `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let pool = pipeline::thread_pool(cfg.workers)?;
    match cfg.command {
        Command::Train => {
            let ck = obtain_model(cfg, &pool)?;
            let reference = Reference::new(&ck.model, cfg.reference_runs, cfg.seed)?;
            write_csv(&cfg.out.join("train.csv"), &[train_row(&ck.model, &reference)?])?;
            io::save_checkpoint(&cfg.out.join("model.json"), &ck)?;
            write_manifest(cfg, &model_derived(&ck.model))
        }
        Command::Unlearn | Command::Bench => serve(cfg, &pool),
        Command::Experiment => run_experiment(cfg, &pool),
    }
}

fn serve(cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<()> {
    let mut ck = obtain_model(cfg, pool)?;
    let derived = model_derived(&ck.model);
    let mut reference = Reference::new(&ck.model, cfg.reference_runs, cfg.seed)?;
    write_csv(&cfg.out.join("train.csv"), &[train_row(&ck.model, &reference)?])?;

    let replay = match &cfg.requests {
        Some(path) => Some(requests::read_requests(path)?),
        None => None,
    };
    let reps = Repeats { warmups: cfg.warmups, timed: cfg.repeats };
    let mut served: Vec<RemovalRequest> = Vec::new();
    let mut metrics: Vec<MetricsRow> = Vec::new();
    let mut timings: Vec<TimingRow> = Vec::new();
    let limit = replay.as_ref().map_or(cfg.removals, Vec::len);
    for i in 0..limit {
        let req = match &replay {
            Some(list) => list[i].clone(),
            None => {
                let round = ck.model.round() + 1;
                match requests::next_request(&ck.model, cfg.batch_size, cfg.adversarial, cfg.seed, round)? {
                    Some(r) => r,
                    None => break,
                }
            }
        };
        let report = if cfg.command == Command::Bench {
            let (report, unlearn, retrain) = bench::bench_round(&mut ck.model, &req, reps)?;
            bench::push_timing(&mut timings, &report, unlearn, retrain);
            report
        } else {
            ck.model.unlearn(&req)?
        };
        if !ck.model.server().is_degenerate() {
            reference.refresh(&ck.model)?;
        }
        metrics.push(bench::metrics_row(&ck.model, &req, &report, &reference)?);
        served.push(req);
    }

    requests::write_requests(&cfg.out.join("requests.csv"), &served)?;
    write_csv(&cfg.out.join("metrics.csv"), &metrics)?;
    if cfg.command == Command::Bench {
        write_csv(&cfg.out.join("timings.csv"), &timings)?;
    }
    io::save_checkpoint(&cfg.out.join("model.json"), &ck)?;
    write_manifest(cfg, &derived)
}

fn run_experiment(cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<()> {
    let Some(kind) = cfg.experiment else {
        bail!("--command experiment needs --experiment retrain|batch|gamma");
    };
    let path = cfg.out.join("experiment.csv");
    match kind {
        ExperimentKind::Retrain | ExperimentKind::Batch => {
            let (data, labels) = if cfg.data.is_some() || cfg.gaussian.is_some() {
                let Source { data, labels } = pipeline::load_source(cfg)?;
                let Some(labels) = labels else {
                    bail!("retrain experiments need labeled data");
                };
                (data, labels)
            } else {
                let inst = eval::removal_instance(cfg.instance_size, cfg.k, cfg.outliers, cfg.outlier_factor, cfg.seed)?;
                (inst.data, inst.labels)
            };
            let k = cfg.k;
            let batches: Vec<usize> = if kind == ExperimentKind::Batch { vec![1, 10, 30] } else { vec![cfg.batch_size] };
            let rows = experiment::retrain_rows(&data, &labels, k, cfg.trials, &batches, cfg.seed, pool)?;
            write_csv(&path, &rows)?;
            let derived = [("points", data.len().to_string()), ("dim", data.dim().to_string())];
            write_manifest(cfg, &derived)
        }
        ExperimentKind::Gamma => {
            let src = pipeline::load_source(cfg)?;
            let prepared = pipeline::prepare(cfg, &src)?;
            let rows = experiment::gamma_rows(&prepared, cfg.reference_runs, &experiment::GAMMA_MULTIPLIERS, pool)?;
            write_csv(&path, &rows)?;
            let derived = [("points", src.data.len().to_string()), ("dim", src.data.dim().to_string())];
            write_manifest(cfg, &derived)
        }
    }
}
