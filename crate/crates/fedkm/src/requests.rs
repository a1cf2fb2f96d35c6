//! Seeded removal-request streams and their CSV form.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fedkm_core::clustering::sample_index;
use fedkm_core::eval;
use fedkm_core::federation::{GlobalModel, RemovalRequest};
use fedkm_core::seed::{self, Stream};
use serde::{Deserialize, Serialize};

/// Next request for `round`, or `None` once no client can lose `batch`
/// points and still hold `K` distinct ones.
///
/// Random: a client chosen with probability proportional to its size, then
/// `batch` of its points uniformly. Adversarial: the client holding the
/// largest contribution to the objective, then its `batch` largest.
pub fn next_request(
    model: &GlobalModel,
    batch: usize,
    adversarial: bool,
    seed: u64,
    round: u64,
) -> Result<Option<RemovalRequest>> {
    if batch == 0 {
        bail!("batch size must be positive");
    }
    let k = model.config().k;
    let eligible = |c: usize| {
        let cl = &model.clients()[c];
        cl.is_active() && cl.data().len() >= batch + k
    };
    if adversarial {
        let total: usize = model.clients().iter().map(|c| c.data().len()).sum();
        let ranked = eval::adversarial_select(model, total)?;
        let Some(top) = ranked.iter().find(|c| eligible(c.client)) else {
            return Ok(None);
        };
        let mut points: Vec<u64> =
            ranked.iter().filter(|c| c.client == top.client).take(batch).map(|c| c.point).collect();
        points.sort_unstable();
        return Ok(Some(RemovalRequest::SingleClient { client: top.client, points }));
    }
    let mass: Vec<f64> =
        (0..model.clients().len()).map(|c| if eligible(c) { model.clients()[c].data().len() as f64 } else { 0.0 }).collect();
    if mass.iter().all(|&m| m == 0.0) {
        return Ok(None);
    }
    let mut rng = seed::stream_rng(seed, Stream::Request, &[round]);
    let client = sample_index(&mut rng, &mass);
    let ids = model.clients()[client].point_ids();
    let mut points: Vec<u64> =
        rand::seq::index::sample(&mut rng, ids.len(), batch).into_iter().map(|r| ids[r]).collect();
    points.sort_unstable();
    Ok(Some(RemovalRequest::SingleClient { client, points }))
}

/// One line of `requests.csv`: `kind` is `single` (target = client, points
/// = space-separated point ids) or `multi` (target = space-separated
/// client ids, points empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRow {
    pub kind: String,
    pub target: String,
    pub points: String,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn split<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split_whitespace().map(|t| t.parse::<T>().map_err(|e| anyhow!("{t:?}: {e}"))).collect()
}

impl From<&RemovalRequest> for RequestRow {
    fn from(r: &RemovalRequest) -> Self {
        match r {
            RemovalRequest::SingleClient { client, points } => {
                Self { kind: "single".into(), target: client.to_string(), points: join(points) }
            }
            RemovalRequest::MultiClient { clients } => {
                Self { kind: "multi".into(), target: join(clients), points: String::new() }
            }
        }
    }
}

impl TryFrom<&RequestRow> for RemovalRequest {
    type Error = anyhow::Error;

    fn try_from(row: &RequestRow) -> Result<Self> {
        match row.kind.as_str() {
            "single" => Ok(RemovalRequest::SingleClient {
                client: row.target.trim().parse().with_context(|| format!("client {:?}", row.target))?,
                points: split(&row.points)?,
            }),
            "multi" => Ok(RemovalRequest::MultiClient { clients: split(&row.target)? }),
            other => bail!("unknown request kind {other:?}"),
        }
    }
}

pub fn write_requests(path: &Path, reqs: &[RemovalRequest]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in reqs {
        w.serialize(RequestRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_requests(path: &Path) -> Result<Vec<RemovalRequest>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    rd.deserialize::<RequestRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.with_context(|| format!("request {}", i + 1))?;
            RemovalRequest::try_from(&row).with_context(|| format!("request {}", i + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let reqs = vec![
            RemovalRequest::SingleClient { client: 3, points: vec![1, 9, 40] },
            RemovalRequest::MultiClient { clients: vec![0, 2] },
        ];
        for r in &reqs {
            assert_eq!(&RemovalRequest::try_from(&RequestRow::from(r)).unwrap(), r);
        }
        let bad = RequestRow { kind: "single".into(), target: "x".into(), points: String::new() };
        assert!(RemovalRequest::try_from(&bad).is_err());
    }
}
