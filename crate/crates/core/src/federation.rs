//! Client and server state machines for federated training and unlearning.
//!
//! Clients run K-means++ seeding only, quantize their centroids and report
//! per-bin cluster sizes. The server recovers the aggregate counts, turns
//! them back into points and runs full K-means. A removal request is served
//! on the owning client by resuming its seeding from the longest prefix that
//! does not touch the removed points; the server reclusters only if the
//! aggregate changed.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    self, CentroidList, ClusteringError, InducedPart, WeightedDataset, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use crate::grid::{BinIndex, GridError, GridSpec};
use crate::scma::{self, wire, MaskShare, ScmaError, ScmaParams, SparseMultiset, SyndromeVector};
use crate::seed::{self, CountingRng, ResumableRng, Stream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FederationError {
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Scma(#[from] ScmaError),
    #[error("no client datasets")]
    NoClients,
    #[error("unknown client {0}")]
    UnknownClient(usize),
    #[error("client {0} has already been removed")]
    InactiveClient(usize),
    #[error("client {client} holds no point with id {id}")]
    UnknownPoint { client: usize, id: u64 },
    #[error("removal request is empty")]
    EmptyRemoval,
    #[error("client {0}: point ids must be unique and match the row count")]
    BadPointIds(usize),
    #[error("client datasets disagree on dimension")]
    DimensionMismatch,
    #[error("message does not match the protocol parameters")]
    ParameterMismatch,
    #[error("got {got} client messages for {expected} clients")]
    MessageCount { expected: usize, got: usize },
}

/// How the server turns aggregate bin counts back into points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationMode {
    /// One point per occupied bin at its center, weighted by the count.
    Weighted,
    /// `q_j` unit-weight points drawn uniformly inside bin `j`.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    /// Masked power sums decoded at the server.
    Secure,
    /// Centroids and sizes sent in the clear. With `prequantize` the server
    /// snaps them to bin centers and merges shared bins first.
    Plaintext { prequantize: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub k: usize,
    pub grid: GridSpec,
    pub generation: GenerationMode,
    pub transport: Transport,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Decrement the owning bin when a non-centroid point is removed, instead
    /// of leaving the count stale.
    pub decrement_counts: bool,
}

impl FederationConfig {
    pub fn new(k: usize, grid: GridSpec) -> Self {
        Self {
            k,
            grid,
            generation: GenerationMode::default(),
            transport: Transport::Secure,
            seed: 0,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            decrement_counts: false,
        }
    }

    fn quantized(&self) -> bool {
        !matches!(self.transport, Transport::Plaintext { prequantize: false })
    }
}

fn sizes_to_counts(sizes: &[f64]) -> Vec<u64> {
    sizes.iter().map(|&s| libm::round(s.max(0.0)) as u64).collect()
}

/// Everything a client keeps between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    id: usize,
    active: bool,
    data: WeightedDataset,
    point_ids: Vec<u64>,
    centroids: CentroidList,
    /// Point ids of the centroids, in selection order.
    centroid_ids: Vec<u64>,
    /// Bin of each centroid.
    bins: Vec<BinIndex>,
    /// Local cluster of each point.
    labels: Vec<usize>,
    multiset: SparseMultiset,
    rng: ResumableRng,
}

impl ClientState {
    /// K-means++ seeding on the client's data. Rows get ids `0..n` unless
    /// `point_ids` is given.
    pub fn train(
        id: usize,
        data: WeightedDataset,
        point_ids: Option<Vec<u64>>,
        config: &FederationConfig,
    ) -> Result<Self, FederationError> {
        let point_ids = point_ids.unwrap_or_else(|| (0..data.len() as u64).collect());
        if point_ids.len() != data.len() || point_ids.iter().collect::<BTreeSet<_>>().len() != point_ids.len() {
            return Err(FederationError::BadPointIds(id));
        }
        let mut rng = ResumableRng::new(seed::derive(config.seed, Stream::Client, &[id as u64]));
        let centroids = clustering::kmeanspp_init(&data, config.k, &mut rng)?;
        let centroid_ids = centroids.sources().unwrap().iter().map(|&r| point_ids[r]).collect();
        let mut state = Self {
            id,
            active: true,
            data,
            point_ids,
            centroids,
            centroid_ids,
            bins: Vec::new(),
            labels: Vec::new(),
            multiset: SparseMultiset::new(),
            rng,
        };
        state.rebuild(&config.grid)?;
        Ok(state)
    }

    /// Recomputes labels, sizes, bins and the local multiset.
    fn rebuild(&mut self, grid: &GridSpec) -> Result<(), FederationError> {
        self.labels = self.centroids.assign_sizes(&self.data).labels;
        self.bins = self.centroids.centroids().map(|c| grid.quantize(c)).collect::<Result<_, _>>()?;
        self.rebuild_multiset();
        Ok(())
    }

    fn rebuild_multiset(&mut self) {
        let counts = sizes_to_counts(self.centroids.sizes());
        self.multiset = self.bins.iter().zip(counts).map(|(&b, c)| (b, c)).collect();
    }

    /// Serves a removal request; returns whether seeding had to be resumed.
    pub fn unlearn(&mut self, removed: &[u64], config: &FederationConfig) -> Result<bool, FederationError> {
        if !self.active {
            return Err(FederationError::InactiveClient(self.id));
        }
        if removed.is_empty() {
            return Err(FederationError::EmptyRemoval);
        }
        let row_of: BTreeMap<u64, usize> = self.point_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        let mut gone = BTreeSet::new();
        for &id in removed {
            row_of.get(&id).ok_or(FederationError::UnknownPoint { client: self.id, id })?;
            gone.insert(id);
        }
        let keep: Vec<usize> = (0..self.data.len()).filter(|&r| !gone.contains(&self.point_ids[r])).collect();
        let new_data = self.data.subset(&keep);
        let new_ids: Vec<u64> = keep.iter().map(|&r| self.point_ids[r]).collect();
        let first_hit = self.centroid_ids.iter().position(|id| gone.contains(id));

        let Some(prefix_len) = first_hit else {
            if config.decrement_counts {
                for &id in &gone {
                    let label = self.labels[row_of[&id]];
                    self.centroids.sizes_mut()[label] -= 1.0;
                    self.multiset.remove(self.bins[label], 1);
                }
            }
            self.labels = keep.iter().map(|&r| self.labels[r]).collect();
            self.data = new_data;
            self.point_ids = new_ids;
            self.refresh_sources();
            return Ok(false);
        };

        let distinct = new_data.distinct_count();
        if distinct < config.k {
            return Err(ClusteringError::Infeasible { k: config.k, distinct }.into());
        }
        let new_row: BTreeMap<u64, usize> = new_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        let prefix: Vec<usize> = self.centroid_ids[..prefix_len].iter().map(|id| new_row[id]).collect();
        let centroids = clustering::kmeanspp_resume(&new_data, &prefix, config.k, &mut self.rng)?;
        self.centroid_ids = centroids.sources().unwrap().iter().map(|&r| new_ids[r]).collect();
        self.centroids = centroids;
        self.data = new_data;
        self.point_ids = new_ids;
        self.rebuild(&config.grid)?;
        Ok(true)
    }

    fn refresh_sources(&mut self) {
        let row: BTreeMap<u64, usize> = self.point_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        let src = self.centroid_ids.iter().map(|id| row[id]).collect();
        self.centroids.set_sources(Some(src));
    }

    /// Drops all of the client's data; it keeps sending pure masks.
    pub fn deactivate(&mut self) {
        let dim = self.data.dim();
        self.active = false;
        self.data = WeightedDataset::new(dim, Vec::new(), Vec::new()).expect("empty dataset");
        self.point_ids.clear();
        self.centroids = CentroidList::empty(dim);
        self.centroid_ids.clear();
        self.bins.clear();
        self.labels.clear();
        self.multiset = SparseMultiset::new();
    }

    /// This round's upload.
    pub fn message(
        &self,
        config: &FederationConfig,
        params: &ScmaParams,
        mask: &MaskShare,
    ) -> Result<ClientMessage, FederationError> {
        match config.transport {
            Transport::Secure => {
                let s = scma::encode_client(&self.multiset, mask, &params.modulus, params.syndrome_len())?;
                Ok(ClientMessage::Secure(wire::encode(params, &s)?))
            }
            Transport::Plaintext { .. } => {
                Ok(ClientMessage::Plaintext { centroids: self.centroids.clone(), bins: self.bins.clone() })
            }
        }
    }

    /// Server-visible stand-ins for the local centroids.
    pub fn representatives(&self, config: &FederationConfig) -> Result<CentroidList, FederationError> {
        if !config.quantized() {
            return Ok(self.centroids.clone());
        }
        let mut coords = Vec::with_capacity(self.bins.len() * config.grid.dim());
        for &b in &self.bins {
            coords.extend(config.grid.bin_center(b)?);
        }
        Ok(CentroidList::from_points(config.grid.dim(), coords)?)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn data(&self) -> &WeightedDataset {
        &self.data
    }

    pub fn point_ids(&self) -> &[u64] {
        &self.point_ids
    }

    pub fn centroids(&self) -> &CentroidList {
        &self.centroids
    }

    pub fn centroid_ids(&self) -> &[u64] {
        &self.centroid_ids
    }

    pub fn bins(&self) -> &[BinIndex] {
        &self.bins
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn multiset(&self) -> &SparseMultiset {
        &self.multiset
    }

    pub fn rng_position(&self) -> u128 {
        self.rng.word_pos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    /// Wire-encoded masked syndromes.
    Secure(Vec<u8>),
    Plaintext { centroids: CentroidList, bins: Vec<BinIndex> },
}

impl ClientMessage {
    pub fn byte_len(&self) -> usize {
        match self {
            ClientMessage::Secure(b) => b.len(),
            ClientMessage::Plaintext { centroids, .. } => 8 * (centroids.coords().len() + centroids.len()),
        }
    }
}

/// Reconstructs server-side points from aggregate counts. Bins are visited in
/// ascending order.
pub fn generate_server_dataset<R: Rng + ?Sized>(
    q: &SparseMultiset,
    grid: &GridSpec,
    mode: GenerationMode,
    rng: &mut R,
) -> Result<WeightedDataset, FederationError> {
    let dim = grid.dim();
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    let gamma = grid.gamma();
    for (j, count) in q.iter() {
        let center = grid.bin_center(j)?;
        match mode {
            GenerationMode::Weighted => {
                coords.extend_from_slice(&center);
                weights.push(count as f64);
            }
            GenerationMode::Uniform => {
                for _ in 0..count {
                    for &c in &center {
                        coords.push(c + gamma * (rng.random::<f64>() - 0.5));
                    }
                    weights.push(1.0);
                }
            }
        }
    }
    Ok(WeightedDataset::new(dim, coords, weights)?)
}

/// Full K-means (seeding plus Lloyd) at the server.
pub fn server_cluster<R: Rng + ?Sized>(
    xs: &WeightedDataset,
    k: usize,
    rng: &mut R,
    max_iters: usize,
    tol: f64,
) -> Result<CentroidList, FederationError> {
    Ok(clustering::kmeans(xs, k, rng, max_iters, tol)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    aggregate: SparseMultiset,
    /// Unmasked aggregate syndromes of the last round (secure transport).
    syndromes: Option<SyndromeVector>,
    dataset: WeightedDataset,
    centroids: CentroidList,
    degenerate: bool,
}

impl ServerState {
    pub fn aggregate(&self) -> &SparseMultiset {
        &self.aggregate
    }

    pub fn dataset(&self) -> &WeightedDataset {
        &self.dataset
    }

    pub fn centroids(&self) -> &CentroidList {
        &self.centroids
    }

    /// True once every client has been removed.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// What the server did in one round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerReport {
    pub reclustered: bool,
    /// 32-bit words drawn from the server's generator.
    pub rng_words: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemovalRequest {
    SingleClient { client: usize, points: Vec<u64> },
    MultiClient { clients: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub retrained_clients: Vec<usize>,
    pub server: ServerReport,
    pub message_bytes: usize,
}

/// Clients, server and shared parameters after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    config: FederationConfig,
    params: ScmaParams,
    clients: Vec<ClientState>,
    server: ServerState,
    round: u64,
}

/// Trains every client, then runs the first aggregation round.
pub fn federated_train(datasets: Vec<WeightedDataset>, config: FederationConfig) -> Result<GlobalModel, FederationError> {
    let clients = datasets
        .into_iter()
        .enumerate()
        .map(|(id, d)| ClientState::train(id, d, None, &config))
        .collect::<Result<Vec<_>, _>>()?;
    GlobalModel::assemble(clients, config)
}

impl GlobalModel {
    /// Builds the model from already trained clients (ids must be `0..L` in
    /// order) and runs round 0 at the server.
    pub fn assemble(clients: Vec<ClientState>, config: FederationConfig) -> Result<Self, FederationError> {
        let mut model = Self::pending(clients, config)?;
        let messages = model.client_messages()?;
        model.server_update(&messages)?;
        Ok(model)
    }

    /// Like [`GlobalModel::assemble`] but stops before round 0, leaving the
    /// server empty until the first [`GlobalModel::server_update`].
    pub fn pending(clients: Vec<ClientState>, config: FederationConfig) -> Result<Self, FederationError> {
        if clients.is_empty() {
            return Err(FederationError::NoClients);
        }
        let dim = config.grid.dim();
        if clients.iter().any(|c| c.data.dim() != dim) {
            return Err(FederationError::DimensionMismatch);
        }
        if clients.iter().enumerate().any(|(i, c)| c.id != i) {
            return Err(FederationError::UnknownClient(clients.len()));
        }
        let n: u64 = clients.iter().map(|c| c.data.len() as u64).sum();
        let params = ScmaParams::new(config.k, clients.len(), n, config.grid.total_bins())?;
        let server = ServerState {
            aggregate: SparseMultiset::new(),
            syndromes: None,
            dataset: WeightedDataset::new(dim, Vec::new(), Vec::new())?,
            centroids: CentroidList::empty(dim),
            degenerate: false,
        };
        Ok(Self { config, params, clients, server, round: 0 })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn params(&self) -> &ScmaParams {
        &self.params
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn client(&self, id: usize) -> Option<&ClientState> {
        self.clients.get(id)
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn server_centroids(&self) -> &CentroidList {
        &self.server.centroids
    }

    /// This round's mask shares; key agreement is simulated from the seed.
    pub fn mask_shares(&self) -> Vec<MaskShare> {
        let seed = seed::derive(self.config.seed, Stream::Mask, &[self.round]);
        scma::gen_masks(self.clients.len(), self.params.syndrome_len(), &self.params.modulus, seed)
    }

    pub fn client_messages(&self) -> Result<Vec<ClientMessage>, FederationError> {
        let masks = match self.config.transport {
            Transport::Secure => self.mask_shares(),
            Transport::Plaintext { .. } => Vec::new(),
        };
        self.clients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let share = masks.get(i).cloned().unwrap_or(MaskShare { client: i, keys: Vec::new() });
                c.message(&self.config, &self.params, &share)
            })
            .collect()
    }

    fn server_rng(&self) -> ChaCha8Rng {
        seed::stream_rng(self.config.seed, Stream::Server, &[self.round])
    }

    /// Aggregates one round of messages and reclusters if the aggregate
    /// changed since the previous round.
    pub fn server_update(&mut self, messages: &[ClientMessage]) -> Result<ServerReport, FederationError> {
        if messages.len() != self.clients.len() {
            return Err(FederationError::MessageCount { expected: self.clients.len(), got: messages.len() });
        }
        let first = self.server.syndromes.is_none() && self.server.centroids.is_empty() && !self.server.degenerate;
        let mut base = self.server_rng();
        let mut rng = CountingRng::new(&mut base);
        let dataset = match self.config.transport {
            Transport::Secure => {
                let mut parts = Vec::with_capacity(messages.len());
                for m in messages {
                    let ClientMessage::Secure(bytes) = m else {
                        return Err(FederationError::ParameterMismatch);
                    };
                    let (params, s) = wire::decode(bytes)?;
                    if params != self.params {
                        return Err(FederationError::ParameterMismatch);
                    }
                    parts.push(s);
                }
                let field = &self.params.modulus;
                let agg = scma::aggregate_syndromes(&parts, field)?;
                // Distinct aggregates have distinct syndromes, so equality
                // means nothing changed and decoding can be skipped.
                if !first && self.server.syndromes.as_ref() == Some(&agg) {
                    return Ok(ServerReport::default());
                }
                let q = scma::decode(&agg, field, self.params.total_bins)?;
                self.server.syndromes = Some(agg);
                let ds = generate_server_dataset(&q, &self.config.grid, self.config.generation, &mut rng)?;
                self.server.aggregate = q;
                ds
            }
            Transport::Plaintext { prequantize } => {
                if prequantize {
                    let mut q = SparseMultiset::new();
                    for m in messages {
                        let ClientMessage::Plaintext { centroids, bins } = m else {
                            return Err(FederationError::ParameterMismatch);
                        };
                        for (&b, c) in bins.iter().zip(sizes_to_counts(centroids.sizes())) {
                            q.add(b, c);
                        }
                    }
                    if !first && q == self.server.aggregate {
                        return Ok(ServerReport::default());
                    }
                    let ds = generate_server_dataset(&q, &self.config.grid, self.config.generation, &mut rng)?;
                    self.server.aggregate = q;
                    ds
                } else {
                    let mut coords = Vec::new();
                    let mut weights = Vec::new();
                    for m in messages {
                        let ClientMessage::Plaintext { centroids, .. } = m else {
                            return Err(FederationError::ParameterMismatch);
                        };
                        for (c, &w) in centroids.centroids().zip(centroids.sizes()) {
                            if w > 0.0 {
                                coords.extend_from_slice(c);
                                weights.push(w);
                            }
                        }
                    }
                    let ds = WeightedDataset::new(self.config.grid.dim(), coords, weights)?;
                    if !first && ds == self.server.dataset {
                        return Ok(ServerReport::default());
                    }
                    ds
                }
            }
        };
        if dataset.is_empty() {
            self.server.degenerate = true;
            self.server.centroids = CentroidList::empty(self.config.grid.dim());
        } else {
            self.server.centroids =
                server_cluster(&dataset, self.config.k, &mut rng, self.config.max_iters, self.config.tol)?;
        }
        self.server.dataset = dataset;
        Ok(ServerReport { reclustered: true, rng_words: rng.words() })
    }

    /// Client-side part of a removal request; returns the clients that had
    /// to resume seeding (or were dropped).
    pub fn apply_client_removal(&mut self, req: &RemovalRequest) -> Result<Vec<usize>, FederationError> {
        match req {
            RemovalRequest::SingleClient { client, points } => {
                let c = self.clients.get_mut(*client).ok_or(FederationError::UnknownClient(*client))?;
                let retrained = c.unlearn(points, &self.config)?;
                Ok(if retrained { vec![*client] } else { Vec::new() })
            }
            RemovalRequest::MultiClient { clients } => {
                if clients.is_empty() {
                    return Err(FederationError::EmptyRemoval);
                }
                let ids: BTreeSet<usize> = clients.iter().copied().collect();
                for &id in &ids {
                    let c = self.clients.get(id).ok_or(FederationError::UnknownClient(id))?;
                    if !c.active {
                        return Err(FederationError::InactiveClient(id));
                    }
                }
                for &id in &ids {
                    self.clients[id].deactivate();
                }
                Ok(ids.into_iter().collect())
            }
        }
    }

    /// Moves to the next round, which changes the masks and server stream.
    pub fn advance_round(&mut self) {
        self.round += 1;
    }

    /// Serves one removal request end to end.
    pub fn unlearn(&mut self, req: &RemovalRequest) -> Result<RoundReport, FederationError> {
        let retrained_clients = self.apply_client_removal(req)?;
        self.advance_round();
        let messages = self.client_messages()?;
        let message_bytes = messages.iter().map(ClientMessage::byte_len).max().unwrap_or(0);
        let server = self.server_update(&messages)?;
        Ok(RoundReport { round: self.round, retrained_clients, server, message_bytes })
    }

    /// All remaining client points as one dataset.
    pub fn pooled_data(&self) -> WeightedDataset {
        let dim = self.config.grid.dim();
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for c in self.clients.iter().filter(|c| c.active) {
            coords.extend_from_slice(c.data.coords());
            weights.extend_from_slice(c.data.weights());
        }
        WeightedDataset::new(dim, coords, weights).expect("client data already validated")
    }

    /// Objective under the induced assignment: each point follows its local
    /// centroid's representative to the nearest server centroid.
    pub fn federated_objective(&self) -> Result<f64, FederationError> {
        let reps = self
            .clients
            .iter()
            .filter(|c| c.active)
            .map(|c| c.representatives(&self.config))
            .collect::<Result<Vec<_>, _>>()?;
        let parts: Vec<InducedPart<'_>> = self
            .clients
            .iter()
            .filter(|c| c.active)
            .zip(&reps)
            .map(|(c, r)| InducedPart { data: &c.data, labels: &c.labels, representatives: r })
            .collect();
        Ok(clustering::federated_objective(&parts, &self.server.centroids)?)
    }

    /// Server centroid assigned to each remaining point of each client under
    /// the induced assignment.
    pub fn induced_assignment(&self) -> Result<Vec<Vec<usize>>, FederationError> {
        self.clients
            .iter()
            .map(|c| {
                if !c.active {
                    return Ok(Vec::new());
                }
                let map = clustering::induced_mapping(&c.representatives(&self.config)?, &self.server.centroids);
                Ok(c.labels.iter().map(|&l| map[l]).collect())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn line_data(xs: &[f64]) -> WeightedDataset {
        WeightedDataset::unweighted(1, xs.to_vec()).unwrap()
    }

    fn config(k: usize, b: u64, dim: usize) -> FederationConfig {
        FederationConfig::new(k, GridSpec::new(b, dim).unwrap())
    }

    #[test]
    fn client_train_counts_every_point() {
        let cfg = config(2, 10, 1);
        let c = ClientState::train(0, line_data(&[-0.4, -0.3, 0.1, 0.2, 0.3]), None, &cfg).unwrap();
        assert_eq!(c.multiset().total(), 5);
        assert!(c.multiset().len() <= 2);
        assert_eq!(c.centroid_ids().len(), 2);
    }

    #[test]
    fn shared_bins_hold_summed_counts() {
        // both points snap to the center bin at 0 with γ = 0.25
        let cfg = config(2, 4, 1);
        let c = ClientState::train(0, line_data(&[0.01, -0.02]), None, &cfg).unwrap();
        assert_eq!(c.multiset().len(), 1);
        assert_eq!(c.multiset().iter().next().unwrap().1, 2);
    }

    #[test]
    fn removing_a_non_centroid_keeps_everything() {
        let cfg = config(2, 10, 1);
        let mut c = ClientState::train(0, line_data(&[-0.4, -0.35, -0.3, 0.3, 0.35, 0.4]), None, &cfg).unwrap();
        let before = c.clone();
        let victim = (0..6u64).find(|id| !c.centroid_ids().contains(id)).unwrap();
        assert!(!c.unlearn(&[victim], &cfg).unwrap());
        assert_eq!(c.centroids().coords(), before.centroids().coords());
        assert_eq!(c.multiset(), before.multiset());
        assert_eq!(c.data().len(), 5);
        assert!(!c.point_ids().contains(&victim));
    }

    #[test]
    fn decrement_flag_updates_counts() {
        let mut cfg = config(2, 10, 1);
        cfg.decrement_counts = true;
        let mut c = ClientState::train(0, line_data(&[-0.4, -0.35, -0.3, 0.3, 0.35, 0.4]), None, &cfg).unwrap();
        let victim = (0..6u64).find(|id| !c.centroid_ids().contains(id)).unwrap();
        assert!(!c.unlearn(&[victim], &cfg).unwrap());
        assert_eq!(c.multiset().total(), 5);
    }

    #[test]
    fn removing_first_centroid_reseeds() {
        let cfg = config(2, 10, 1);
        let mut c = ClientState::train(0, line_data(&[-0.4, -0.35, -0.3, 0.3, 0.35, 0.4]), None, &cfg).unwrap();
        let first = c.centroid_ids()[0];
        assert!(c.unlearn(&[first], &cfg).unwrap());
        assert!(!c.centroid_ids().contains(&first));
        assert_eq!(c.multiset().total(), 5);
    }

    #[test]
    fn removal_errors() {
        let cfg = config(2, 10, 1);
        let mut c = ClientState::train(0, line_data(&[-0.4, 0.0, 0.4]), None, &cfg).unwrap();
        assert_eq!(c.unlearn(&[], &cfg), Err(FederationError::EmptyRemoval));
        assert_eq!(c.unlearn(&[9], &cfg), Err(FederationError::UnknownPoint { client: 0, id: 9 }));
        let snapshot = c.clone();
        let all: Vec<u64> = vec![c.centroid_ids()[0], 0, 1];
        assert!(matches!(c.unlearn(&all, &cfg), Err(FederationError::Clustering(ClusteringError::Infeasible { .. }))));
        assert_eq!(c, snapshot);
    }

    #[test]
    fn server_dataset_modes() {
        let grid = GridSpec::new(4, 2).unwrap();
        let q: SparseMultiset = [(1u128, 3u64)].into_iter().collect();
        let w = generate_server_dataset(&q, &grid, GenerationMode::Weighted, &mut rng_from(0)).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.point(0), grid.bin_center(1).unwrap().as_slice());
        assert_eq!(w.total_weight(), 3.0);
        let u = generate_server_dataset(&q, &grid, GenerationMode::Uniform, &mut rng_from(0)).unwrap();
        assert_eq!(u.len(), 3);
        let center = grid.bin_center(1).unwrap();
        for p in u.points() {
            for (a, c) in p.iter().zip(&center) {
                assert!((a - c).abs() <= grid.gamma() / 2.0);
            }
        }
    }

    fn two_clients() -> Vec<WeightedDataset> {
        vec![
            line_data(&[-0.45, -0.4, -0.38, 0.1, 0.12, 0.15]),
            line_data(&[-0.41, -0.39, 0.3, 0.33, 0.35, 0.4, 0.42]),
        ]
    }

    #[test]
    fn training_round_trip() {
        let cfg = config(2, 20, 1);
        let m = federated_train(two_clients(), cfg).unwrap();
        assert_eq!(m.server().aggregate().total(), 13);
        assert_eq!(m.server_centroids().len(), 2);
        let phi_f = m.federated_objective().unwrap();
        let phi_c = clustering::objective(&m.pooled_data(), m.server_centroids()).unwrap();
        assert!(phi_f >= phi_c - 1e-12);
    }

    #[test]
    fn secure_matches_prequantized_plaintext() {
        for generation in [GenerationMode::Weighted, GenerationMode::Uniform] {
            let mut a = config(2, 20, 1);
            a.generation = generation;
            let mut b = a.clone();
            b.transport = Transport::Plaintext { prequantize: true };
            let ma = federated_train(two_clients(), a).unwrap();
            let mb = federated_train(two_clients(), b).unwrap();
            assert_eq!(ma.server().dataset(), mb.server().dataset());
            assert_eq!(ma.server_centroids(), mb.server_centroids());
        }
    }

    #[test]
    fn non_centroid_removal_skips_server() {
        let mut m = federated_train(two_clients(), config(2, 20, 1)).unwrap();
        let before = m.server_centroids().clone();
        let other = m.client(1).unwrap().clone();
        let victim = (0..6u64).find(|id| !m.client(0).unwrap().centroid_ids().contains(id)).unwrap();
        let r = m.unlearn(&RemovalRequest::SingleClient { client: 0, points: vec![victim] }).unwrap();
        assert!(r.retrained_clients.is_empty());
        assert!(!r.server.reclustered);
        assert_eq!(r.server.rng_words, 0);
        assert_eq!(m.server_centroids(), &before);
        assert_eq!(m.client(1).unwrap(), &other);
    }

    #[test]
    fn centroid_removal_touches_only_its_client() {
        let mut m = federated_train(two_clients(), config(2, 20, 1)).unwrap();
        let other = m.client(1).unwrap().clone();
        let victim = m.client(0).unwrap().centroid_ids()[0];
        let r = m.unlearn(&RemovalRequest::SingleClient { client: 0, points: vec![victim] }).unwrap();
        assert_eq!(r.retrained_clients, vec![0]);
        assert_eq!(m.client(1).unwrap(), &other);
        assert_eq!(m.server().aggregate().total(), 12);
    }

    #[test]
    fn removing_every_client_is_degenerate() {
        let mut m = federated_train(two_clients(), config(2, 20, 1)).unwrap();
        let r = m.unlearn(&RemovalRequest::MultiClient { clients: vec![0, 1] }).unwrap();
        assert_eq!(r.retrained_clients, vec![0, 1]);
        assert!(m.server().is_degenerate());
        assert!(m.server().aggregate().is_empty());
        assert!(m.server_centroids().is_empty());
        assert!(m.unlearn(&RemovalRequest::MultiClient { clients: vec![0] }).is_err());
    }

    #[test]
    fn singleton_bins_expose_quantized_points() {
        let data = line_data(&[-0.4, 0.0, 0.3]);
        let mut cfg = config(3, 100, 1);
        cfg.generation = GenerationMode::Weighted;
        let m = federated_train(vec![data.clone()], cfg.clone()).unwrap();
        let mut got: Vec<f64> = m.server_centroids().centroids().map(|c| c[0]).collect();
        got.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = data.points().map(|p| cfg.grid.reconstruct(p).unwrap()[0]).collect();
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
    }
}
