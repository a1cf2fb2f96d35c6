//! Serving removal streams, per-round metrics and wall-clock comparison
//! against full retraining.
//!
//! A round's unlearning time is the client-side removal plus the slowest
//! client's encoding plus the server update; clients run concurrently in a
//! real deployment, so their times combine by `max`. The baseline retrains
//! every client from scratch on its remaining data (again combined by
//! `max`) and then runs the server from an empty state. Mask generation is
//! pairwise key agreement done offline and is excluded from both.

use std::time::{Duration, Instant};

use anyhow::Result;
use fedkm_core::clustering::CentroidList;
use fedkm_core::eval;
use fedkm_core::federation::{ClientMessage, ClientState, GlobalModel, RemovalRequest, RoundReport, ServerReport};
use fedkm_core::scma::MaskShare;
use serde::{Deserialize, Serialize};

/// Centralized reference objective, refreshed as points leave.
#[derive(Debug, Clone)]
pub struct Reference {
    pub centroids: CentroidList,
    pub objective: f64,
    max_iters: usize,
    tol: f64,
}

impl Reference {
    pub fn new(model: &GlobalModel, runs: usize, seed: u64) -> Result<Self> {
        let cfg = model.config();
        let (centroids, objective) =
            eval::reference_clustering(&model.pooled_data(), cfg.k, runs, seed, cfg.max_iters, cfg.tol)?;
        Ok(Self { centroids, objective, max_iters: cfg.max_iters, tol: cfg.tol })
    }

    /// Lloyd-refines the previous reference on the model's remaining data.
    pub fn refresh(&mut self, model: &GlobalModel) -> Result<()> {
        let (c, phi) = eval::refresh_reference(&model.pooled_data(), &self.centroids, self.max_iters, self.tol)?;
        self.centroids = c;
        self.objective = phi;
        Ok(())
    }
}

/// One row of `metrics.csv`. Fully determined by the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub kind: String,
    pub target: String,
    pub removed: usize,
    /// Space-separated ids of clients that resumed seeding.
    pub retrained_clients: String,
    pub server_reclustered: bool,
    pub server_rng_words: u64,
    pub message_bytes: usize,
    pub remaining: usize,
    pub objective: f64,
    pub reference_objective: f64,
    pub loss_ratio: f64,
}

/// One row of `timings.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub round: u64,
    pub retrained: bool,
    pub unlearn_seconds: f64,
    pub retrain_seconds: f64,
    pub unlearn_accumulated: f64,
    pub retrain_accumulated: f64,
    pub speedup: f64,
}

fn remaining(model: &GlobalModel) -> usize {
    model.clients().iter().map(|c| c.data().len()).sum()
}

pub fn metrics_row(model: &GlobalModel, req: &RemovalRequest, report: &RoundReport, reference: &Reference) -> Result<MetricsRow> {
    let (kind, target, removed) = match req {
        RemovalRequest::SingleClient { client, points } => ("single", client.to_string(), points.len()),
        RemovalRequest::MultiClient { clients } => {
            let removed = report.retrained_clients.len();
            ("multi", clients.iter().map(usize::to_string).collect::<Vec<_>>().join(" "), removed)
        }
    };
    let objective = if model.server().is_degenerate() { 0.0 } else { model.federated_objective()? };
    Ok(MetricsRow {
        round: report.round,
        kind: kind.into(),
        target,
        removed,
        retrained_clients: report.retrained_clients.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
        server_reclustered: report.server.reclustered,
        server_rng_words: report.server.rng_words,
        message_bytes: report.message_bytes,
        remaining: remaining(model),
        objective,
        reference_objective: reference.objective,
        loss_ratio: if reference.objective > 0.0 { objective / reference.objective } else { 1.0 },
    })
}

fn placeholder_share(client: usize) -> MaskShare {
    MaskShare { client, keys: Vec::new() }
}

fn masks(model: &GlobalModel) -> Vec<MaskShare> {
    match model.config().transport {
        fedkm_core::federation::Transport::Secure => model.mask_shares(),
        _ => (0..model.clients().len()).map(placeholder_share).collect(),
    }
}

/// Encodes every client's message, returning them with the slowest
/// client's encoding time.
fn timed_messages(model: &GlobalModel, extra: &[Duration]) -> Result<(Vec<ClientMessage>, Duration)> {
    let shares = masks(model);
    let mut slowest = Duration::ZERO;
    let mut out = Vec::with_capacity(shares.len());
    for ((c, share), e) in model.clients().iter().zip(&shares).zip(extra) {
        let t = Instant::now();
        let msg = c.message(model.config(), model.params(), share)?;
        slowest = slowest.max(t.elapsed() + *e);
        out.push(msg);
    }
    Ok((out, slowest))
}

/// One unlearning round with its modeled wall-clock time.
fn unlearn_once(model: &GlobalModel, req: &RemovalRequest) -> Result<(GlobalModel, RoundReport, Duration)> {
    let mut m = model.clone();
    let t = Instant::now();
    let retrained_clients = m.apply_client_removal(req)?;
    let removal = t.elapsed();
    m.advance_round();
    let none = vec![Duration::ZERO; m.clients().len()];
    let (messages, encode) = timed_messages(&m, &none)?;
    let t = Instant::now();
    let server: ServerReport = m.server_update(&messages)?;
    let total = removal + encode + t.elapsed();
    let message_bytes = messages.iter().map(ClientMessage::byte_len).max().unwrap_or(0);
    let report = RoundReport { round: m.round(), retrained_clients, server, message_bytes };
    Ok((m, report, total))
}

/// Full local and global retraining on the model's current data.
fn retrain_once(model: &GlobalModel) -> Result<Duration> {
    let cfg = model.config().clone();
    let mut clients = Vec::with_capacity(model.clients().len());
    let mut train = Vec::with_capacity(model.clients().len());
    for c in model.clients() {
        if !c.is_active() {
            clients.push(c.clone());
            train.push(Duration::ZERO);
            continue;
        }
        let (data, ids) = (c.data().clone(), c.point_ids().to_vec());
        let t = Instant::now();
        let fresh = ClientState::train(c.id(), data, Some(ids), &cfg)?;
        train.push(t.elapsed());
        clients.push(fresh);
    }
    let mut m = GlobalModel::pending(clients, cfg)?;
    let (messages, client_time) = timed_messages(&m, &train)?;
    let t = Instant::now();
    m.server_update(&messages)?;
    Ok(client_time + t.elapsed())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Repeat settings for one measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Repeats {
    pub warmups: usize,
    pub timed: usize,
}

impl Default for Repeats {
    fn default() -> Self {
        Self { warmups: 3, timed: 5 }
    }
}

/// Serves `req` on `model` and times it against full retraining.
pub fn bench_round(model: &mut GlobalModel, req: &RemovalRequest, reps: Repeats) -> Result<(RoundReport, f64, f64)> {
    let timed = reps.timed.max(1);
    let mut unlearn = Vec::with_capacity(timed);
    let mut next = None;
    for i in 0..reps.warmups + timed {
        let (m, report, t) = unlearn_once(model, req)?;
        if i >= reps.warmups {
            unlearn.push(t.as_secs_f64());
        }
        next = Some((m, report));
    }
    let (m, report) = next.expect("at least one repetition");
    *model = m;
    let mut retrain = Vec::with_capacity(timed);
    for i in 0..reps.warmups + timed {
        let t = retrain_once(model)?;
        if i >= reps.warmups {
            retrain.push(t.as_secs_f64());
        }
    }
    Ok((report, median(unlearn), median(retrain)))
}

/// Appends a timing row with running totals.
pub fn push_timing(rows: &mut Vec<TimingRow>, report: &RoundReport, unlearn: f64, retrain: f64) {
    let (ua, ra) = rows.last().map_or((0.0, 0.0), |r| (r.unlearn_accumulated, r.retrain_accumulated));
    rows.push(TimingRow {
        round: report.round,
        retrained: !report.retrained_clients.is_empty(),
        unlearn_seconds: unlearn,
        retrain_seconds: retrain,
        unlearn_accumulated: ua + unlearn,
        retrain_accumulated: ra + retrain,
        speedup: retrain / unlearn.max(f64::MIN_POSITIVE),
    });
}

/// Median speed-up over rounds in which no client had to resume seeding.
pub fn median_no_retrain_speedup(rows: &[TimingRow]) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| !r.retrained).map(|r| r.speedup).collect();
    (!v.is_empty()).then(|| median(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn timing_rows_accumulate() {
        let mut rows = Vec::new();
        let r = RoundReport { round: 1, ..Default::default() };
        push_timing(&mut rows, &r, 1.0, 10.0);
        let r2 = RoundReport { round: 2, retrained_clients: vec![0], ..Default::default() };
        push_timing(&mut rows, &r2, 2.0, 10.0);
        assert_eq!(rows[1].unlearn_accumulated, 3.0);
        assert_eq!(rows[1].retrain_accumulated, 20.0);
        assert_eq!(median_no_retrain_speedup(&rows), Some(10.0));
    }
}
