//! Client-side training.
//!
//! Labeled clients run supervised SGD on cross-entropy. Unlabeled clients run
//! a mean-teacher loop: two noisy views per sample, the teacher's sharpened
//! prediction on one view is the MSE target for the student's prediction on
//! the other, only the student takes SGD steps, and the teacher follows by
//! EMA after every iteration. Partially labeled clients mix both losses.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{fedavg, WeightedModel};
use crate::data::{augment_with, AugmentationSpec, ClientShard, Dataset, Role};
use crate::error::{Error, Result};
use crate::nn::{
    backprop_weighted, ema_update, forward, sgd_step, sharpen, ParamVector, Sample, Target,
};
use crate::seed::{self, tag};

/// Local optimisation hyper-parameters shared by all trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalTrainConfig {
    pub lr_labeled: f64,
    pub lr_unlabeled: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Sharpening temperature.
    pub tau: f64,
    /// EMA coefficient on the student.
    pub alpha: f64,
    pub augmentation: AugmentationSpec,
    /// Weight of the consistency term on partially labeled clients.
    pub partial_lambda: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        LocalTrainConfig {
            lr_labeled: 0.03,
            lr_unlabeled: 0.021,
            local_epochs: 1,
            batch_size: 16,
            tau: 0.5,
            alpha: 0.001,
            augmentation: AugmentationSpec { noise_sigma: 1.0 },
            partial_lambda: 1.0,
        }
    }
}

impl LocalTrainConfig {
    /// Field-level problems, each prefixed with `prefix`.
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                out.push(format!("{prefix}{field}: {msg}"));
            }
        };
        check(self.lr_labeled >= 0.0 && self.lr_labeled.is_finite(), "lr_labeled", "must be finite and >= 0");
        check(self.lr_unlabeled >= 0.0 && self.lr_unlabeled.is_finite(), "lr_unlabeled", "must be finite and >= 0");
        check(self.local_epochs >= 1, "local_epochs", "must be at least 1");
        check(self.batch_size >= 1, "batch_size", "must be at least 1");
        check(self.tau > 0.0 && self.tau <= 1.0, "tau", "must lie in (0, 1]");
        check((0.0..=1.0).contains(&self.alpha), "alpha", "must lie in [0, 1]");
        check(
            self.augmentation.noise_sigma >= 0.0 && self.augmentation.noise_sigma.is_finite(),
            "augmentation.noise_sigma",
            "must be finite and >= 0",
        );
        check(
            self.partial_lambda >= 0.0 && self.partial_lambda.is_finite(),
            "partial_lambda",
            "must be finite and >= 0",
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems("");
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

/// Persistent per-client state held by the server-side simulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub role: Role,
    /// Sorted indices into the training split.
    pub indices: Vec<usize>,
    /// Sorted visible-label subset for partial clients.
    pub labeled_indices: Vec<usize>,
    teacher: Option<ParamVector>,
    ever_selected: bool,
}

impl ClientState {
    pub fn new(id: usize, role: Role, indices: Vec<usize>) -> Self {
        let labeled_indices = match role {
            Role::Partial { .. } => indices.clone(),
            _ => Vec::new(),
        };
        ClientState {
            id,
            role,
            indices,
            labeled_indices,
            teacher: None,
            ever_selected: false,
        }
    }

    pub fn from_shard(shard: &ClientShard) -> Result<Self> {
        let role = shard.role.ok_or_else(|| {
            Error::InvalidArgument(format!("client {} has no role assigned", shard.id))
        })?;
        Ok(ClientState {
            id: shard.id,
            role,
            indices: shard.indices.clone(),
            labeled_indices: shard.labeled_indices.clone(),
            teacher: None,
            ever_selected: false,
        })
    }

    /// `N_i`: every sample on the client, labeled or not.
    pub fn data_size(&self) -> usize {
        self.indices.len()
    }

    pub fn teacher(&self) -> Option<&ParamVector> {
        self.teacher.as_ref()
    }

    pub fn ever_selected(&self) -> bool {
        self.ever_selected
    }

    pub fn has_labels(&self) -> bool {
        match self.role {
            Role::Labeled => true,
            Role::Unlabeled => false,
            Role::Partial { .. } => !self.labeled_indices.is_empty(),
        }
    }

    /// Indices whose labels the client may use.
    pub fn supervised_indices(&self) -> &[usize] {
        match self.role {
            Role::Labeled => &self.indices,
            Role::Unlabeled => &[],
            Role::Partial { .. } => &self.labeled_indices,
        }
    }

    /// Records that the client trained this round and keeps its teacher.
    pub fn apply(&mut self, outcome: &LocalOutcome) {
        debug_assert_eq!(outcome.client, self.id);
        self.ever_selected = true;
        if let Some(t) = &outcome.teacher {
            self.teacher = Some(t.clone());
        }
    }
}

/// Per-call training diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Sample-weighted mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub iterations: usize,
    /// Number of per-sample cross-entropy evaluations.
    pub ce_samples: usize,
    /// Number of per-sample consistency evaluations.
    pub consistency_samples: usize,
}

#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub client: usize,
    /// The model uploaded to the server (θ_l, or the student θ_u).
    pub params: ParamVector,
    /// Updated teacher for unlabeled and partial clients.
    pub teacher: Option<ParamVector>,
    pub data_size: usize,
    pub log: TrainLog,
}

impl LocalOutcome {
    pub fn weighted(&self) -> WeightedModel {
        WeightedModel {
            params: self.params.clone(),
            data_size: self.data_size,
        }
    }
}

fn wrong_role(client: &ClientState, expected: &'static str) -> Error {
    Error::WrongRole {
        client: client.id,
        expected,
        actual: client.role.name(),
    }
}

struct Streams {
    shuffle: ChaCha8Rng,
    augment: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            shuffle: seed::rng(seed::derive(seed, &[tag::SHUFFLE])),
            augment: seed::rng(seed::derive(seed, &[tag::AUGMENT])),
        }
    }

    fn epoch_order(&mut self, indices: &[usize]) -> Vec<usize> {
        let mut order = indices.to_vec();
        order.shuffle(&mut self.shuffle);
        order
    }
}

fn supervised(
    data: &Dataset,
    indices: &[usize],
    start: &ParamVector,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<(ParamVector, TrainLog)> {
    let mut streams = Streams::new(seed);
    let mut params = start.clone();
    let mut log = TrainLog::default();
    for _ in 0..epochs {
        let order = streams.epoch_order(indices);
        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            let w = 1.0 / batch.len() as f64;
            let samples: Vec<(Sample<'_>, f64)> = batch
                .iter()
                .map(|&i| {
                    (
                        Sample {
                            x: data.row(i),
                            target: Target::Class(data.label(i)),
                        },
                        w,
                    )
                })
                .collect();
            let g = backprop_weighted(&params, &samples)?;
            params = sgd_step(&params, &g.grads, lr)?;
            total += g.loss * batch.len() as f64;
            log.iterations += 1;
            log.ce_samples += batch.len();
        }
        log.epoch_losses.push(total / indices.len() as f64);
    }
    Ok((params, log))
}

/// Supervised local training on a labeled client.
pub fn train_labeled(
    client: &ClientState,
    data: &Dataset,
    global: &ParamVector,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<LocalOutcome> {
    if client.role != Role::Labeled {
        return Err(wrong_role(client, "labeled"));
    }
    if client.indices.is_empty() {
        return Err(Error::EmptyShard { client: client.id });
    }
    let (params, log) = supervised(
        data,
        &client.indices,
        global,
        cfg.lr_labeled,
        cfg.local_epochs,
        cfg.batch_size,
        seed,
    )?;
    Ok(LocalOutcome {
        client: client.id,
        params,
        teacher: None,
        data_size: client.data_size(),
        log,
    })
}

/// Sharpened teacher target on one view, student sample on another.
fn consistency_pair(
    data: &Dataset,
    i: usize,
    teacher: &ParamVector,
    cfg: &LocalTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let view_teacher = augment_with(data.row(i), &cfg.augmentation, rng);
    let view_student = augment_with(data.row(i), &cfg.augmentation, rng);
    let target = sharpen(&forward(teacher, &view_teacher)?, cfg.tau)?;
    Ok((view_student, target.probs().to_vec()))
}

/// Mean-teacher training on an unlabeled client.
pub fn train_unlabeled(
    client: &ClientState,
    data: &Dataset,
    global: &ParamVector,
    initial_global: &ParamVector,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<LocalOutcome> {
    train_unlabeled_observed(client, data, global, initial_global, cfg, seed, &mut |_| {})
}

/// [`train_unlabeled`], calling `observer` with the student after every SGD
/// step (before the teacher update).
pub fn train_unlabeled_observed(
    client: &ClientState,
    data: &Dataset,
    global: &ParamVector,
    initial_global: &ParamVector,
    cfg: &LocalTrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(&ParamVector),
) -> Result<LocalOutcome> {
    if client.role != Role::Unlabeled {
        return Err(wrong_role(client, "unlabeled"));
    }
    if client.indices.is_empty() {
        return Err(Error::EmptyShard { client: client.id });
    }
    let mut streams = Streams::new(seed);
    let mut student = global.clone();
    let mut teacher = client
        .teacher
        .clone()
        .unwrap_or_else(|| initial_global.clone());
    let mut log = TrainLog::default();

    for _ in 0..cfg.local_epochs {
        let order = streams.epoch_order(&client.indices);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let pairs = batch
                .iter()
                .map(|&i| consistency_pair(data, i, &teacher, cfg, &mut streams.augment))
                .collect::<Result<Vec<_>>>()?;
            let w = 1.0 / batch.len() as f64;
            let samples: Vec<(Sample<'_>, f64)> = pairs
                .iter()
                .map(|(x, t)| {
                    (
                        Sample {
                            x,
                            target: Target::Soft(t),
                        },
                        w,
                    )
                })
                .collect();
            let g = backprop_weighted(&student, &samples)?;
            student = sgd_step(&student, &g.grads, cfg.lr_unlabeled)?;
            observer(&student);
            teacher = ema_update(&teacher, &student, cfg.alpha)?;
            total += g.loss * batch.len() as f64;
            log.iterations += 1;
            log.consistency_samples += batch.len();
        }
        log.epoch_losses.push(total / client.indices.len() as f64);
    }

    Ok(LocalOutcome {
        client: client.id,
        params: student,
        teacher: Some(teacher),
        data_size: client.data_size(),
        log,
    })
}

/// Mixed training on a partially labeled client: per batch, mean CE over
/// the labeled members plus `partial_lambda` times mean consistency MSE
/// over the unlabeled members.
pub fn train_partial(
    client: &ClientState,
    data: &Dataset,
    global: &ParamVector,
    initial_global: &ParamVector,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<LocalOutcome> {
    if !matches!(client.role, Role::Partial { .. }) {
        return Err(wrong_role(client, "partial"));
    }
    if client.indices.is_empty() {
        return Err(Error::EmptyShard { client: client.id });
    }
    if client.labeled_indices.is_empty() {
        return Err(Error::Empty("labeled subset of partial client"));
    }
    let mut streams = Streams::new(seed);
    let mut params = global.clone();
    let mut teacher = client
        .teacher
        .clone()
        .unwrap_or_else(|| initial_global.clone());
    let mut log = TrainLog::default();
    let use_consistency = cfg.partial_lambda > 0.0;

    for _ in 0..cfg.local_epochs {
        let order = streams.epoch_order(&client.indices);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (labeled, unlabeled): (Vec<usize>, Vec<usize>) = batch
                .iter()
                .partition(|i| client.labeled_indices.binary_search(i).is_ok());
            let pairs = if use_consistency {
                unlabeled
                    .iter()
                    .map(|&i| consistency_pair(data, i, &teacher, cfg, &mut streams.augment))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let mut samples: Vec<(Sample<'_>, f64)> = Vec::with_capacity(batch.len());
            if !labeled.is_empty() {
                let w = 1.0 / labeled.len() as f64;
                samples.extend(labeled.iter().map(|&i| {
                    (
                        Sample {
                            x: data.row(i),
                            target: Target::Class(data.label(i)),
                        },
                        w,
                    )
                }));
            }
            if !pairs.is_empty() {
                let w = cfg.partial_lambda / pairs.len() as f64;
                samples.extend(pairs.iter().map(|(x, t)| {
                    (
                        Sample {
                            x,
                            target: Target::Soft(t),
                        },
                        w,
                    )
                }));
            }
            if samples.is_empty() {
                continue;
            }
            let g = backprop_weighted(&params, &samples)?;
            params = sgd_step(&params, &g.grads, cfg.lr_labeled)?;
            teacher = ema_update(&teacher, &params, cfg.alpha)?;
            total += g.loss * batch.len() as f64;
            log.iterations += 1;
            log.ce_samples += labeled.len();
            log.consistency_samples += pairs.len();
        }
        log.epoch_losses.push(total / client.indices.len() as f64);
    }

    Ok(LocalOutcome {
        client: client.id,
        params,
        teacher: Some(teacher),
        data_size: client.data_size(),
        log,
    })
}

/// Dispatches on the client's role.
pub fn train_client(
    client: &ClientState,
    data: &Dataset,
    global: &ParamVector,
    initial_global: &ParamVector,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<LocalOutcome> {
    match client.role {
        Role::Labeled => train_labeled(client, data, global, cfg, seed),
        Role::Unlabeled => train_unlabeled(client, data, global, initial_global, cfg, seed),
        Role::Partial { .. } => train_partial(client, data, global, initial_global, cfg, seed),
    }
}

/// Seed used for a client's warm-up training.
pub fn warmup_seed(master_seed: u64, client: usize) -> u64 {
    seed::derive(master_seed, &[tag::WARMUP, client as u64])
}

/// Supervised warm-up: every client with labels trains `init` for `epochs`
/// epochs on its labeled samples, and the results are averaged by the
/// number of labeled samples used.
pub fn warmup(
    clients: &[ClientState],
    data: &Dataset,
    init: &ParamVector,
    epochs: usize,
    cfg: &LocalTrainConfig,
    master_seed: u64,
) -> Result<ParamVector> {
    let labeled: Vec<&ClientState> = clients.iter().filter(|c| c.has_labels()).collect();
    if labeled.is_empty() {
        return Err(Error::Empty("labeled clients for warm-up"));
    }
    if epochs == 0 {
        return Ok(init.clone());
    }
    let models = labeled
        .iter()
        .map(|c| {
            let idx = c.supervised_indices();
            let (params, _) = supervised(
                data,
                idx,
                init,
                cfg.lr_labeled,
                epochs,
                cfg.batch_size,
                warmup_seed(master_seed, c.id),
            )?;
            Ok(WeightedModel {
                params,
                data_size: idx.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fedavg(&models)
}
