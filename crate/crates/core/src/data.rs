//! Synthetic data, Dirichlet non-IID partitioning and client roles.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, tag};

/// Resample budget for [`dirichlet_partition`].
pub const MAX_PARTITION_ATTEMPTS: usize = 100;

/// Dense feature matrix (row-major) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 || num_classes < 2 {
            return Err(Error::InvalidArgument(
                "dataset needs dim >= 1 and at least two classes".into(),
            ));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Class centres with pairwise distance exactly `separation` whenever
/// `dim >= num_classes` (scaled basis vectors), otherwise on a circle (or a
/// line for `dim == 1`) with adjacent distance `separation`.
pub fn class_means(num_classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if dim >= num_classes {
                m[c] = separation / std::f64::consts::SQRT_2;
            } else if dim == 1 {
                m[0] = c as f64 * separation;
            } else {
                let step = std::f64::consts::PI / num_classes as f64;
                let radius = separation / (2.0 * step.sin());
                let angle = 2.0 * step * c as f64;
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
            }
            m
        })
        .collect()
}

/// Unit-covariance Gaussian clusters, `samples_per_class` rows per class,
/// grouped by class.
pub fn make_blobs(
    num_classes: usize,
    dim: usize,
    samples_per_class: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || dim == 0 || samples_per_class == 0 {
        return Err(Error::InvalidArgument(
            "make_blobs needs >= 2 classes and positive dim and sample counts".into(),
        ));
    }
    if !class_separation.is_finite() || class_separation <= 0.0 {
        return Err(Error::InvalidArgument(
            "class separation must be positive".into(),
        ));
    }
    let means = class_means(num_classes, dim, class_separation);
    let mut rng = seed::rng(seed);
    let n = num_classes * samples_per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            for m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + z);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim, num_classes)
}

/// Random split into (train, test); the test side gets
/// `round(N * test_fraction)` rows, at least one and leaving at least one.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if data.len() < 2 {
        return Err(Error::InvalidArgument("need at least two rows to split".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(seed));
    let n_test = ((data.len() as f64 * test_fraction).round() as usize).clamp(1, data.len() - 1);
    let (test, train) = order.split_at(n_test);
    Ok((data.subset(train), data.subset(test)))
}

/// Role of a client in the federation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Role {
    Labeled,
    Unlabeled,
    /// Every client holds a fraction of labeled samples.
    Partial { labeled_fraction: f64 },
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Labeled => "labeled",
            Role::Unlabeled => "unlabeled",
            Role::Partial { .. } => "partial",
        }
    }

    pub fn labeled_fraction(&self) -> f64 {
        match self {
            Role::Labeled => 1.0,
            Role::Unlabeled => 0.0,
            Role::Partial { labeled_fraction } => *labeled_fraction,
        }
    }
}

/// One client's slice of the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientShard {
    pub id: usize,
    pub role: Option<Role>,
    /// Sorted indices into the training split.
    pub indices: Vec<usize>,
    /// For partial clients: the sorted subset of `indices` whose labels are
    /// visible. Empty for other roles.
    pub labeled_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    pub clients: Vec<ClientShard>,
}

/// How roles are handed out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RoleSpec {
    /// The first `labeled` clients are fully labeled, the rest unlabeled.
    Split { labeled: usize, unlabeled: usize },
    /// Every client is partially labeled.
    Partial { fraction: f64 },
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(|c| c.indices.len()).sum()
    }

    /// Writes the per-client dump used for exact replay.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = PlanDoc {
            clients: self
                .clients
                .iter()
                .map(|c| ClientDoc {
                    id: c.id,
                    role: c.role.map_or("unassigned", |r| r.name()).to_string(),
                    labeled_fraction: c.role.map_or(0.0, |r| r.labeled_fraction()),
                    indices: c.indices.clone(),
                    labeled_indices: match c.role {
                        Some(Role::Partial { .. }) => Some(c.labeled_indices.clone()),
                        _ => None,
                    },
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: PlanDoc = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let mut clients = Vec::with_capacity(doc.clients.len());
        for (pos, c) in doc.clients.into_iter().enumerate() {
            if c.id != pos {
                return Err(Error::InvalidArgument(format!(
                    "partition file lists client {} at position {pos}",
                    c.id
                )));
            }
            let role = match c.role.as_str() {
                "labeled" => Some(Role::Labeled),
                "unlabeled" => Some(Role::Unlabeled),
                "partial" => Some(Role::Partial {
                    labeled_fraction: c.labeled_fraction,
                }),
                "unassigned" => None,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown role {other:?} for client {pos}"
                    )))
                }
            };
            clients.push(ClientShard {
                id: c.id,
                role,
                indices: c.indices,
                labeled_indices: c.labeled_indices.unwrap_or_default(),
            });
        }
        Ok(PartitionPlan { clients })
    }

    /// Checks the plan is a disjoint cover of `0..n` with every client
    /// holding at least `min_client_samples` rows.
    pub fn validate(&self, n: usize, min_client_samples: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for c in &self.clients {
            if c.indices.len() < min_client_samples {
                return Err(Error::InvalidArgument(format!(
                    "client {} has {} samples, fewer than {min_client_samples}",
                    c.id,
                    c.indices.len()
                )));
            }
            for &i in &c.indices {
                if i >= n || seen[i] {
                    return Err(Error::InvalidArgument(format!(
                        "index {i} out of range or assigned twice"
                    )));
                }
                seen[i] = true;
            }
            if c.labeled_indices.iter().any(|i| c.indices.binary_search(i).is_err()) {
                return Err(Error::InvalidArgument(format!(
                    "client {} labels indices outside its shard",
                    c.id
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "partition does not cover the training split".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDoc {
    clients: Vec<ClientDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientDoc {
    id: usize,
    role: String,
    labeled_fraction: f64,
    indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labeled_indices: Option<Vec<usize>>,
}

/// Splits `total` into integer counts proportional to `props` using the
/// largest-remainder method; ties go to the lower index.
pub fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn sample_dirichlet<R: Rng>(gamma: &Gamma<f64>, k: usize, rng: &mut R) -> Option<Vec<f64>> {
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    (sum > 0.0 && sum.is_finite()).then(|| draws.into_iter().map(|d| d / sum).collect())
}

/// Per-class Dirichlet split: each class's indices are shuffled and divided
/// across clients by proportions drawn from `Dir(gamma · 1)`. Attempts are
/// repeated with fresh sub-seeds until every client has at least
/// `min_client_samples` rows.
pub fn dirichlet_partition(
    labels: &[usize],
    num_clients: usize,
    gamma: f64,
    min_client_samples: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if num_clients < 2 {
        return Err(Error::InvalidArgument("need at least two clients".into()));
    }
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "Dirichlet concentration must be positive, got {gamma}"
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let dist = Gamma::new(gamma, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("bad Dirichlet concentration: {e}")))?;

    'attempt: for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut rng = seed::rng(seed::derive(seed, &[tag::PARTITION, attempt as u64]));
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        for class_indices in &by_class {
            let mut idx = class_indices.clone();
            idx.shuffle(&mut rng);
            let Some(props) = sample_dirichlet(&dist, num_clients, &mut rng) else {
                continue 'attempt;
            };
            let counts = largest_remainder(&props, idx.len());
            let mut start = 0;
            for (shard, count) in shards.iter_mut().zip(counts) {
                shard.extend_from_slice(&idx[start..start + count]);
                start += count;
            }
        }
        if shards.iter().all(|s| s.len() >= min_client_samples) {
            let clients = shards
                .into_iter()
                .enumerate()
                .map(|(id, mut indices)| {
                    indices.sort_unstable();
                    ClientShard {
                        id,
                        role: None,
                        indices,
                        labeled_indices: Vec::new(),
                    }
                })
                .collect();
            return Ok(PartitionPlan { clients });
        }
    }
    Err(Error::PartitionInfeasible {
        attempts: MAX_PARTITION_ATTEMPTS,
        min_client_samples,
    })
}

/// Number of labeled samples a partial client with `n` rows receives:
/// nearest integer to `fraction · n`, at least one.
pub fn partial_labeled_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.max(1))
}

/// Assigns roles without touching any index list.
pub fn assign_roles(plan: &PartitionPlan, roles: RoleSpec, seed: u64) -> Result<PartitionPlan> {
    let n = plan.num_clients();
    let mut out = plan.clone();
    match roles {
        RoleSpec::Split { labeled, unlabeled } => {
            if labeled + unlabeled != n {
                return Err(Error::InvalidArgument(format!(
                    "{labeled} labeled + {unlabeled} unlabeled clients != {n} clients"
                )));
            }
            for c in &mut out.clients {
                c.role = Some(if c.id < labeled {
                    Role::Labeled
                } else {
                    Role::Unlabeled
                });
                c.labeled_indices.clear();
            }
        }
        RoleSpec::Partial { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "partial labeled fraction must lie in (0, 1], got {fraction}"
                )));
            }
            for c in &mut out.clients {
                let k = partial_labeled_count(c.indices.len(), fraction);
                let mut rng = seed::rng(seed::derive(seed, &[tag::ROLES, c.id as u64]));
                let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, c.indices.len(), k)
                    .into_iter()
                    .map(|pos| c.indices[pos])
                    .collect();
                chosen.sort_unstable();
                c.role = Some(Role::Partial {
                    labeled_fraction: fraction,
                });
                c.labeled_indices = chosen;
            }
        }
    }
    Ok(out)
}

/// Additive isotropic Gaussian noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub noise_sigma: f64,
}

/// `x + ε`, `ε ~ N(0, σ² I)`, seeded.
pub fn augment(x: &[f64], spec: &AugmentationSpec, seed: u64) -> Vec<f64> {
    augment_with(x, spec, &mut seed::rng(seed))
}

pub fn augment_with<R: Rng>(x: &[f64], spec: &AugmentationSpec, rng: &mut R) -> Vec<f64> {
    if spec.noise_sigma == 0.0 {
        return x.to_vec();
    }
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated by config");
    x.iter().map(|v| v + noise.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
        let d = train.dim();
        let mut sums = vec![vec![0.0; d]; train.num_classes()];
        let counts = train.class_histogram();
        for i in 0..train.len() {
            for (s, v) in sums[train.label(i)].iter_mut().zip(train.row(i)) {
                *s += v;
            }
        }
        let centroids: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
            .collect();
        let correct = (0..test.len())
            .filter(|&i| {
                let x = test.row(i);
                let best = (0..centroids.len())
                    .min_by(|&a, &b| {
                        let da: f64 = centroids[a].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                        let db: f64 = centroids[b].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == test.label(i)
            })
            .count();
        correct as f64 / test.len() as f64
    }

    #[test]
    fn blobs_have_requested_shape() {
        let d = make_blobs(3, 2, 100, 5.0, 1).unwrap();
        assert_eq!(d.len(), 300);
        assert_eq!(d.class_histogram(), vec![100, 100, 100]);
        assert_eq!(d, make_blobs(3, 2, 100, 5.0, 1).unwrap());
        assert_ne!(d, make_blobs(3, 2, 100, 5.0, 2).unwrap());
    }

    #[test]
    fn class_means_respect_separation() {
        for (c, dim) in [(3, 2), (3, 20), (5, 3), (4, 1), (2, 2)] {
            let m = class_means(c, dim, 6.0);
            for a in 0..c {
                for b in a + 1..c {
                    let d: f64 = m[a].iter().zip(&m[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    assert!(d >= 6.0 - 1e-9, "classes {a},{b} in dim {dim}: {d}");
                }
            }
        }
    }

    #[test]
    fn well_separated_blobs_are_nearly_linearly_separable() {
        let d = make_blobs(3, 2, 100, 10.0, 4).unwrap();
        let (train, test) = train_test_split(&d, 0.3, 9).unwrap();
        assert!(nearest_centroid_accuracy(&train, &test) > 0.99);
    }

    #[test]
    fn split_sizes() {
        let d = make_blobs(2, 3, 50, 2.0, 0).unwrap();
        let (train, test) = train_test_split(&d, 0.2, 0).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        assert!(train_test_split(&d, 1.0, 0).is_err());
    }

    #[test]
    fn largest_remainder_is_exact() {
        // 3.5, 1.75, 1.75: floors 3, 1, 1 and the two spare units go to the 0.75 remainders
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 7), vec![3, 2, 2]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 1.0], 5), vec![0, 5]);
    }

    fn labels(num_classes: usize, per_class: usize) -> Vec<usize> {
        (0..num_classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
    }

    #[test]
    fn huge_concentration_is_nearly_uniform() {
        let labels = labels(3, 400);
        let k = 5;
        let mut share = vec![vec![0.0f64; 3]; k];
        for s in 0..20 {
            let plan = dirichlet_partition(&labels, k, 1e6, 8, s).unwrap();
            for (c, client) in plan.clients.iter().enumerate() {
                for &i in &client.indices {
                    share[c][labels[i]] += 1.0 / (400.0 * 20.0);
                }
            }
        }
        for row in &share {
            for &p in row {
                assert!((p - 0.2).abs() <= 0.02, "share {p}");
            }
        }
    }

    #[test]
    fn low_concentration_leaves_classes_missing() {
        // a share rounds to zero when p·n < 1/2, so small classes make gaps likely
        let labels = labels(3, 100);
        let missing = (0..20)
            .filter(|&s| {
                let plan = dirichlet_partition(&labels, 10, 0.8, 8, s).unwrap();
                plan.clients.iter().any(|c| {
                    let present: HashSet<usize> = c.indices.iter().map(|&i| labels[i]).collect();
                    present.len() < 3
                })
            })
            .count();
        assert!(missing >= 10, "only {missing}/20 seeds had a client missing a class");
    }

    #[test]
    fn impossible_minimum_exhausts_budget() {
        let labels = labels(2, 10);
        assert!(matches!(
            dirichlet_partition(&labels, 4, 0.8, 6, 0),
            Err(Error::PartitionInfeasible { attempts: 100, .. })
        ));
        assert!(dirichlet_partition(&labels, 1, 0.8, 1, 0).is_err());
        assert!(dirichlet_partition(&labels, 2, 0.0, 1, 0).is_err());
    }

    #[test]
    fn split_roles_label_lowest_indices() {
        let plan = dirichlet_partition(&labels(3, 200), 10, 0.8, 8, 3).unwrap();
        let one = assign_roles(&plan, RoleSpec::Split { labeled: 1, unlabeled: 9 }, 0).unwrap();
        let roles: Vec<Role> = one.clients.iter().map(|c| c.role.unwrap()).collect();
        assert_eq!(roles[0], Role::Labeled);
        assert!(roles[1..].iter().all(|r| *r == Role::Unlabeled));
        let two = assign_roles(&plan, RoleSpec::Split { labeled: 2, unlabeled: 8 }, 0).unwrap();
        assert_eq!(two.clients[1].role, Some(Role::Labeled));
        assert_eq!(two.clients[2].role, Some(Role::Unlabeled));
        for (a, b) in plan.clients.iter().zip(&two.clients) {
            assert_eq!(a.indices, b.indices);
        }
        assert!(assign_roles(&plan, RoleSpec::Split { labeled: 2, unlabeled: 7 }, 0).is_err());
    }

    #[test]
    fn partial_roles_pick_rounded_counts() {
        let plan = PartitionPlan {
            clients: vec![
                ClientShard {
                    id: 0,
                    role: None,
                    indices: (0..50).collect(),
                    labeled_indices: vec![],
                },
                ClientShard {
                    id: 1,
                    role: None,
                    indices: (50..53).collect(),
                    labeled_indices: vec![],
                },
            ],
        };
        let out = assign_roles(&plan, RoleSpec::Partial { fraction: 0.1 }, 5).unwrap();
        assert_eq!(out.clients[0].labeled_indices.len(), 5);
        assert_eq!(out.clients[1].labeled_indices.len(), 1);
        assert!(out.clients[0].labeled_indices.iter().all(|i| *i < 50));
        assert_eq!(out, assign_roles(&plan, RoleSpec::Partial { fraction: 0.1 }, 5).unwrap());
    }

    #[test]
    fn plan_dump_round_trips() {
        let plan = dirichlet_partition(&labels(3, 60), 4, 0.8, 4, 2).unwrap();
        let plan = assign_roles(&plan, RoleSpec::Partial { fraction: 0.2 }, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        plan.save(&path).unwrap();
        assert_eq!(PartitionPlan::load(&path).unwrap(), plan);
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(doc["clients"][0]["role"], "partial");
        assert_eq!(doc["clients"][0]["labeled_fraction"], 0.2);
    }

    #[test]
    fn augmentation_noise() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(augment(&x, &AugmentationSpec { noise_sigma: 0.0 }, 3), x);
        let spec = AugmentationSpec { noise_sigma: 0.1 };
        assert_ne!(augment(&x, &spec, 1), augment(&x, &spec, 2));
        assert_eq!(augment(&x, &spec, 1), augment(&x, &spec, 1));

        // ‖ε‖²/dim ~ σ² χ²_1000 / 1000: mean 0.01, sd ≈ 0.00045
        let zeros = vec![0.0; 1000];
        for s in 0..10 {
            let e = augment(&zeros, &spec, s);
            let msq = e.iter().map(|v| v * v).sum::<f64>() / 1000.0;
            assert!((0.008..=0.012).contains(&msq), "seed {s}: {msq}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn partition_is_a_disjoint_cover(
            classes in 2usize..5, per_class in 20usize..80, clients in 2usize..6,
            gamma in 0.3f64..5.0, seed in any::<u64>(),
        ) {
            let labels = labels(classes, per_class);
            if let Ok(plan) = dirichlet_partition(&labels, clients, gamma, 2, seed) {
                prop_assert!(plan.validate(labels.len(), 2).is_ok());
                prop_assert_eq!(plan.total_samples(), labels.len());
                prop_assert_eq!(plan, dirichlet_partition(&labels, clients, gamma, 2, seed).unwrap());
            }
        }
    }
}
