//! Synthetic data, non-iid partitions, quality metrics and Monte-Carlo
//! experiments on removal behaviour.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clustering::{self, CentroidList, ClusteringError, CompensatedSum, WeightedDataset};
use crate::federation::{FederationError, GlobalModel};
use crate::grid::{GridError, ScaleTransform};
use crate::seed::{self, Stream};

/// Constant used for the adversarial retrain ceiling.
pub const ADVERSARIAL_CEILING_CONSTANT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid mixture: {0}")]
    InvalidMixture(&'static str),
    #[error("{clients} clients holding {kprime} labels each cannot cover {k} clusters")]
    Partition { clients: usize, kprime: usize, k: usize },
    #[error("label {label} is outside 0..{k}")]
    BadLabel { label: usize, k: usize },
    #[error("cannot remove {r} of {n} points")]
    TooManyRemovals { r: usize, n: usize },
    #[error("reference run count must be positive")]
    NoReferenceRuns,
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub k: usize,
    pub dim: usize,
    pub count: usize,
    pub variance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub data: WeightedDataset,
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

/// Spherical Gaussian clusters with centers uniform in `[0, 1]^d`; points are
/// grouped by cluster.
pub fn gen_gaussian(spec: &GaussianMixtureSpec) -> Result<LabeledDataset, EvalError> {
    if spec.k == 0 || spec.dim == 0 || spec.count == 0 {
        return Err(EvalError::InvalidMixture("K, d and count must be positive"));
    }
    if !(spec.variance > 0.0 && spec.variance.is_finite()) {
        return Err(EvalError::InvalidMixture("variance must be positive"));
    }
    let mut rng = seed::stream_rng(spec.seed, Stream::Data, &[]);
    let centers: Vec<Vec<f64>> = (0..spec.k).map(|_| (0..spec.dim).map(|_| rng.random::<f64>()).collect()).collect();
    let noise = Normal::new(0.0, libm::sqrt(spec.variance)).expect("positive deviation");
    let mut coords = Vec::with_capacity(spec.k * spec.count * spec.dim);
    let mut labels = Vec::with_capacity(spec.k * spec.count);
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..spec.count {
            coords.extend(c.iter().map(|&m| m + noise.sample(&mut rng)));
            labels.push(label);
        }
    }
    Ok(LabeledDataset { data: WeightedDataset::unweighted(spec.dim, coords)?, labels, centers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub clients: usize,
    pub kprime: usize,
    pub seed: u64,
}

/// Labels held by `client`: `(client·K′ + t) mod K` for `t < K′`.
pub fn labels_of_client(client: usize, kprime: usize, k: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..kprime.min(k)).map(|t| (client * kprime + t) % k).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Row indices for each client. Every cluster's rows are shuffled and dealt
/// round-robin to the clients holding its label.
pub fn partition_noniid(labels: &[usize], k: usize, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>, EvalError> {
    let kprime = spec.kprime.clamp(1, k.max(1));
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(EvalError::BadLabel { label, k });
    }
    let mut holders = vec![Vec::new(); k];
    for client in 0..spec.clients {
        for l in labels_of_client(client, kprime, k) {
            holders[l].push(client);
        }
    }
    let mut by_label = vec![Vec::new(); k];
    for (row, &l) in labels.iter().enumerate() {
        by_label[l].push(row);
    }
    if by_label.iter().zip(&holders).any(|(rows, h)| !rows.is_empty() && h.is_empty()) {
        return Err(EvalError::Partition { clients: spec.clients, kprime: spec.kprime, k });
    }
    let mut rng = seed::stream_rng(spec.seed, Stream::Partition, &[]);
    let mut parts = vec![Vec::new(); spec.clients];
    for (rows, h) in by_label.iter_mut().zip(&holders) {
        rows.shuffle(&mut rng);
        for (i, &row) in rows.iter().enumerate() {
            parts[h[i % h.len()]].push(row);
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Scales the pooled data into the centered unit cube and splits it by
/// `parts`.
pub fn scaled_client_datasets(
    data: &WeightedDataset,
    parts: &[Vec<usize>],
) -> Result<(ScaleTransform, Vec<WeightedDataset>), EvalError> {
    let scale = ScaleTransform::fit(data.coords(), data.dim())?;
    let scaled = WeightedDataset::new(data.dim(), scale.apply(data.coords()), data.weights().to_vec())?;
    Ok((scale, parts.iter().map(|p| scaled.subset(p)).collect()))
}

/// Best of `runs` centralized K-means runs.
pub fn reference_clustering(
    data: &WeightedDataset,
    k: usize,
    runs: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<(CentroidList, f64), EvalError> {
    if runs == 0 {
        return Err(EvalError::NoReferenceRuns);
    }
    let mut best: Option<(CentroidList, f64)> = None;
    for run in 0..runs {
        let mut rng = seed::stream_rng(seed, Stream::Reference, &[run as u64]);
        let c = clustering::kmeans(data, k, &mut rng, max_iters, tol)?;
        let phi = clustering::objective(data, &c)?;
        if best.as_ref().is_none_or(|b| phi < b.1) {
            best = Some((c, phi));
        }
    }
    Ok(best.unwrap())
}

/// Lloyd-refines a previous reference on changed data.
pub fn refresh_reference(
    data: &WeightedDataset,
    previous: &CentroidList,
    max_iters: usize,
    tol: f64,
) -> Result<(CentroidList, f64), EvalError> {
    let refined = clustering::lloyd(data, previous, max_iters, tol)?;
    let phi = clustering::objective(data, &refined)?;
    Ok((refined, phi))
}

/// Induced federated objective over the reference objective.
pub fn loss_ratio(model: &GlobalModel, reference_objective: f64) -> Result<f64, EvalError> {
    Ok(model.federated_objective()? / reference_objective)
}

/// A point picked for adversarial removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub client: usize,
    pub point: u64,
    pub value: f64,
}

/// The `r` points with the largest `w·d²` to their induced server centroid,
/// ties broken by (client, point id).
pub fn adversarial_select(model: &GlobalModel, r: usize) -> Result<Vec<Contribution>, EvalError> {
    let induced = model.induced_assignment()?;
    let server = model.server_centroids();
    let mut all = Vec::new();
    for (c, targets) in model.clients().iter().zip(&induced) {
        for (row, &t) in targets.iter().enumerate() {
            let value = c.data().weight(row) * clustering::sq_dist(c.data().point(row), server.centroid(t));
            all.push(Contribution { client: c.id(), point: c.point_ids()[row], value });
        }
    }
    if r > all.len() {
        return Err(EvalError::TooManyRemovals { r, n: all.len() });
    }
    all.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.client.cmp(&b.client)).then(a.point.cmp(&b.point)));
    all.truncate(r);
    Ok(all)
}

/// Rows of `data` ordered by decreasing `w·d²` to their nearest centroid.
pub fn contribution_order(data: &WeightedDataset, centroids: &CentroidList) -> Vec<usize> {
    let value: Vec<f64> = data.points().zip(data.weights()).map(|(x, &w)| w * centroids.nearest(x).1).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| value[b].total_cmp(&value[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalMode {
    Random,
    Adversarial,
}

/// Cluster-imbalance and outlier measurements of a clustered instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalAnalysis {
    /// `n / (K · s_min)`.
    pub epsilon1: f64,
    /// Largest `‖x − c‖² · |C| / φ(C)` over points and their clusters.
    pub epsilon2: f64,
}

impl RemovalAnalysis {
    pub fn measure(data: &WeightedDataset, labels: &[usize], k: usize) -> Result<Self, EvalError> {
        let dim = data.dim();
        let mut mass = vec![0.0; k];
        let mut sums = vec![0.0; k * dim];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(EvalError::BadLabel { label: l, k });
            }
            let w = data.weight(i);
            mass[l] += w;
            for (s, &x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(data.point(i)) {
                *s += w * x;
            }
        }
        let s_min = mass.iter().copied().fold(f64::INFINITY, f64::min);
        let n = data.total_weight();
        let means: Vec<f64> =
            sums.chunks(dim).zip(&mass).flat_map(|(s, &m)| s.iter().map(move |v| v / m)).collect();
        let mut phi = vec![CompensatedSum::default(); k];
        let mut far = vec![0.0f64; k];
        for (i, &l) in labels.iter().enumerate() {
            let d = clustering::sq_dist(data.point(i), &means[l * dim..(l + 1) * dim]);
            phi[l].add(data.weight(i) * d);
            far[l] = far[l].max(d);
        }
        let epsilon2 = (0..k)
            .filter(|&l| mass[l] > 0.0 && phi[l].value() > 0.0)
            .map(|l| far[l] * mass[l] / phi[l].value())
            .fold(1.0, f64::max);
        Ok(Self { epsilon1: n / (k as f64 * s_min), epsilon2 })
    }

    /// `min{1, c·R·K²·ε₁·ε₂ / n}`.
    pub fn adversarial_ceiling(&self, r: usize, k: usize, n: usize) -> f64 {
        let v = ADVERSARIAL_CEILING_CONSTANT * (r * k * k) as f64 * self.epsilon1 * self.epsilon2 / n as f64;
        v.min(1.0)
    }
}

/// `P(a uniformly random R-subset hits K fixed points) = 1 − C(n−K, R)/C(n, R)`.
pub fn random_hit_probability(n: usize, k: usize, r: usize) -> f64 {
    if r + k > n {
        return 1.0;
    }
    let mut miss = 1.0;
    for i in 0..r {
        miss *= (n - k - i) as f64 / (n - i) as f64;
    }
    1.0 - miss
}

/// Whether a fresh seeding of `data` under trial seed `trial` would be hit
/// by the removal set.
pub fn retrain_trial(
    data: &WeightedDataset,
    k: usize,
    mode: RemovalMode,
    r: usize,
    adversarial_order: &[usize],
    seed: u64,
    trial: u64,
) -> Result<bool, EvalError> {
    let n = data.len();
    if r > n {
        return Err(EvalError::TooManyRemovals { r, n });
    }
    let mut rng = seed::stream_rng(seed, Stream::Client, &[trial]);
    let c = clustering::kmeanspp_init(data, k, &mut rng)?;
    let sources = c.sources().unwrap();
    let removed: Vec<usize> = match mode {
        RemovalMode::Random => {
            let mut req = seed::stream_rng(seed, Stream::Request, &[trial]);
            rand::seq::index::sample(&mut req, n, r).into_vec()
        }
        RemovalMode::Adversarial => adversarial_order[..r].to_vec(),
    };
    Ok(removed.iter().any(|i| sources.contains(i)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainEstimate {
    pub trials: u64,
    pub retrains: u64,
    pub rate: f64,
    /// Binomial standard error at the reference value.
    pub std_error: f64,
    /// Exact hit probability (random mode) or the adversarial ceiling.
    pub reference: f64,
}

impl RetrainEstimate {
    pub fn new(trials: u64, retrains: u64, reference: f64) -> Self {
        let rate = retrains as f64 / trials as f64;
        let p = reference.clamp(0.0, 1.0);
        Self { trials, retrains, rate, std_error: libm::sqrt(p * (1.0 - p) / trials as f64), reference }
    }

    /// `|rate − reference| ≤ z · SE`.
    pub fn within(&self, z: f64) -> bool {
        (self.rate - self.reference).abs() <= z * self.std_error
    }
}

/// Serial Monte-Carlo estimate of the retrain probability.
pub fn retrain_probability_experiment(
    data: &WeightedDataset,
    labels: &[usize],
    k: usize,
    trials: u64,
    mode: RemovalMode,
    r: usize,
    seed: u64,
) -> Result<RetrainEstimate, EvalError> {
    let (order, reference) = experiment_reference(data, labels, k, mode, r)?;
    let mut hits = 0;
    for t in 0..trials {
        if retrain_trial(data, k, mode, r, &order, seed, t)? {
            hits += 1;
        }
    }
    Ok(RetrainEstimate::new(trials, hits, reference))
}

/// Adversarial removal order and the reference probability for a mode.
pub fn experiment_reference(
    data: &WeightedDataset,
    labels: &[usize],
    k: usize,
    mode: RemovalMode,
    r: usize,
) -> Result<(Vec<usize>, f64), EvalError> {
    match mode {
        RemovalMode::Random => Ok((Vec::new(), random_hit_probability(data.len(), k, r))),
        RemovalMode::Adversarial => {
            let centroids = label_means(data, labels, k)?;
            let analysis = RemovalAnalysis::measure(data, labels, k)?;
            Ok((contribution_order(data, &centroids), analysis.adversarial_ceiling(r, k, data.len())))
        }
    }
}

/// Weighted mean of each labeled group.
pub fn label_means(data: &WeightedDataset, labels: &[usize], k: usize) -> Result<CentroidList, EvalError> {
    let dim = data.dim();
    let mut mass = vec![0.0; k];
    let mut sums = vec![0.0; k * dim];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(EvalError::BadLabel { label: l, k });
        }
        mass[l] += data.weight(i);
        for (s, &x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(data.point(i)) {
            *s += data.weight(i) * x;
        }
    }
    for (l, m) in mass.iter().enumerate() {
        for s in &mut sums[l * dim..(l + 1) * dim] {
            *s /= m.max(f64::MIN_POSITIVE);
        }
    }
    Ok(CentroidList::from_points(dim, sums)?)
}

/// Small labeled instance for removal experiments: `k` well separated
/// groups of `n / k` jittered points in the plane, plus `outliers` points
/// planted `factor` group radii away from their group center.
pub fn removal_instance(n: usize, k: usize, outliers: usize, factor: f64, seed: u64) -> Result<LabeledDataset, EvalError> {
    if k == 0 || n < k {
        return Err(EvalError::InvalidMixture("need at least one point per group"));
    }
    let mut rng = seed::stream_rng(seed, Stream::Data, &[n as u64, k as u64]);
    let centers: Vec<Vec<f64>> = (0..k).map(|g| vec![10.0 * g as f64, 0.0]).collect();
    let mut coords = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let regular = n - outliers.min(n - k);
    for i in 0..regular {
        let g = i % k;
        coords.push(centers[g][0] + rng.random_range(-1.0..1.0));
        coords.push(centers[g][1] + rng.random_range(-1.0..1.0));
        labels.push(g);
    }
    for i in 0..(n - regular) {
        let g = i % k;
        let angle = rng.random_range(0.0..core::f64::consts::TAU);
        coords.push(centers[g][0] + factor * libm::cos(angle));
        coords.push(centers[g][1] + factor * libm::sin(angle));
        labels.push(g);
    }
    Ok(LabeledDataset { data: WeightedDataset::unweighted(2, coords)?, labels, centers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::{federated_train, FederationConfig, GenerationMode};
    use crate::grid::GridSpec;

    #[test]
    fn gaussian_shapes() {
        let one = gen_gaussian(&GaussianMixtureSpec { k: 1, dim: 3, count: 5, variance: 0.5, seed: 1 }).unwrap();
        assert_eq!(one.data.len(), 5);
        assert!(one.labels.iter().all(|&l| l == 0));

        let spec = GaussianMixtureSpec { k: 10, dim: 10, count: 3000, variance: 0.5, seed: 3 };
        let g = gen_gaussian(&spec).unwrap();
        assert_eq!(g.data.len(), 30_000);
        assert!(g.centers.iter().flatten().all(|&c| (0.0..1.0).contains(&c)));
        let sd = libm::sqrt(0.5);
        for (label, center) in g.centers.iter().enumerate() {
            for (m, &c) in center.iter().enumerate() {
                let mean: f64 = (0..3000).map(|i| g.data.point(label * 3000 + i)[m]).sum::<f64>() / 3000.0;
                assert!((mean - c).abs() < 4.0 * sd / libm::sqrt(3000.0));
            }
        }
    }

    #[test]
    fn gaussian_rejects_bad_spec() {
        assert!(gen_gaussian(&GaussianMixtureSpec { k: 1, dim: 1, count: 1, variance: 0.0, seed: 0 }).is_err());
    }

    fn check_partition(labels: &[usize], k: usize, spec: &PartitionSpec) -> Vec<Vec<usize>> {
        let parts = partition_noniid(labels, k, spec).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for p in &parts {
            let mut ls: Vec<usize> = p.iter().map(|&r| labels[r]).collect();
            ls.sort_unstable();
            ls.dedup();
            assert!(ls.len() <= spec.kprime);
        }
        parts
    }

    #[test]
    fn partition_examples() {
        let labels: Vec<usize> = (0..30_000).map(|i| i / 3000).collect();
        check_partition(&labels, 10, &PartitionSpec { clients: 100, kprime: 3, seed: 1 });

        let parts = check_partition(&labels, 10, &PartitionSpec { clients: 10, kprime: 1, seed: 1 });
        for p in &parts {
            assert_eq!(p.len(), 3000);
        }

        let parts = check_partition(&labels, 10, &PartitionSpec { clients: 7, kprime: 10, seed: 1 });
        assert!(parts.iter().all(|p| p.len() > 4000));

        assert_eq!(
            partition_noniid(&labels, 10, &PartitionSpec { clients: 3, kprime: 3, seed: 0 }),
            Err(EvalError::Partition { clients: 3, kprime: 3, k: 10 })
        );
    }

    #[test]
    fn epsilon1_matches_definition() {
        let d = WeightedDataset::unweighted(1, vec![0.0, 0.1, 0.2, 5.0]).unwrap();
        let a = RemovalAnalysis::measure(&d, &[0, 0, 0, 1], 2).unwrap();
        assert_eq!(a.epsilon1, 4.0 / (2.0 * 1.0));
        assert!(a.epsilon2 >= 1.0);
    }

    #[test]
    fn hit_probability() {
        assert!((random_hit_probability(100, 5, 1) - 0.05).abs() < 1e-15);
        assert_eq!(random_hit_probability(10, 2, 10), 1.0);
    }

    #[test]
    fn removing_everything_always_retrains() {
        let inst = removal_instance(20, 2, 0, 0.0, 1).unwrap();
        let est = retrain_probability_experiment(&inst.data, &inst.labels, 2, 200, RemovalMode::Random, 20, 9).unwrap();
        assert_eq!(est.rate, 1.0);
    }

    #[test]
    fn planted_outlier_is_selected_first() {
        let inst = removal_instance(40, 2, 1, 10.0, 4).unwrap();
        let centroids = label_means(&inst.data, &inst.labels, 2).unwrap();
        assert_eq!(contribution_order(&inst.data, &centroids)[0], 39);
    }

    #[test]
    fn adversarial_hits_more_often_than_random() {
        let inst = removal_instance(100, 5, 5, 15.0, 2).unwrap();
        let rnd = retrain_probability_experiment(&inst.data, &inst.labels, 5, 4000, RemovalMode::Random, 1, 5).unwrap();
        let adv =
            retrain_probability_experiment(&inst.data, &inst.labels, 5, 4000, RemovalMode::Adversarial, 1, 5).unwrap();
        assert!(adv.rate > rnd.rate);
        assert!(adv.rate <= adv.reference + 1e-12);
    }

    #[test]
    fn adversarial_select_on_model() {
        let g = gen_gaussian(&GaussianMixtureSpec { k: 3, dim: 2, count: 40, variance: 0.01, seed: 8 }).unwrap();
        let parts = partition_noniid(&g.labels, 3, &PartitionSpec { clients: 3, kprime: 2, seed: 8 }).unwrap();
        let (_, datasets) = scaled_client_datasets(&g.data, &parts).unwrap();
        let mut cfg = FederationConfig::new(3, GridSpec::default_for(120, 2).unwrap());
        cfg.generation = GenerationMode::Weighted;
        let model = federated_train(datasets, cfg).unwrap();
        let all = adversarial_select(&model, 120).unwrap();
        assert_eq!(all.len(), 120);
        assert!(all.windows(2).all(|w| w[0].value >= w[1].value));
        assert!(adversarial_select(&model, 121).is_err());

        let (_, phi) = reference_clustering(&model.pooled_data(), 3, 5, 1, 100, 1e-6).unwrap();
        assert!(loss_ratio(&model, phi).unwrap() >= 1.0 - 1e-9);
    }
}
