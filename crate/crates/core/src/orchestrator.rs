//! Synchronization-round drivers.
//!
//! A [`Federation`] owns all mutable simulation state: the global model, the
//! round-0 model that seeds teachers, and every client's persistent state.
//! Within a round, client trainings are pure tasks keyed by
//! `(master_seed, round, client)` and may run concurrently; aggregation runs
//! afterwards on the calling thread in a fixed order.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;

use crate::aggregation::{
    consensus_mean, dma_weights, fedavg, size_weights, weight_adjusted_coefficients,
    weighted_sum, WeightedModel,
};
use crate::config::{ExperimentConfig, MethodConfig, MethodKind};
use crate::data::{
    assign_roles, dirichlet_partition, make_blobs, train_test_split, Dataset, PartitionPlan, Role,
};
use crate::error::{Error, Result};
use crate::local::{train_client, warmup, ClientState, LocalOutcome, LocalTrainConfig};
use crate::metrics::{evaluate, MetricsReport};
use crate::nn::{init_params, ModelSpec, ParamVector};
use crate::seed::{self, tag};

/// One sub-sampling event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetDraw {
    pub round: usize,
    pub subset_index: usize,
    /// Distinct client ids, ascending.
    pub client_ids: Vec<usize>,
}

/// Model transfers in one round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommCounters {
    /// One download per (subset, client) slot: `M·K` for sub-sampling.
    pub downloads_naive: usize,
    /// One download per distinct client that trains.
    pub downloads_cached: usize,
    pub uploads: usize,
}

#[derive(Clone, Debug)]
pub struct RoundRecord {
    /// Completed rounds after this record; 0 is the warm-up model.
    pub round: usize,
    pub method: MethodKind,
    pub global_params: ParamVector,
    pub subsets: Vec<SubsetDraw>,
    pub sub_consensus: Vec<ParamVector>,
    pub dma_weights_per_subset: Vec<Vec<f64>>,
    pub metrics: Option<MetricsReport>,
    pub comm: CommCounters,
    pub wall_ms: u128,
}

/// Compares everything except `wall_ms`, which is timing metadata and not
/// part of the simulated outcome.
impl PartialEq for RoundRecord {
    fn eq(&self, other: &Self) -> bool {
        self.round == other.round
            && self.method == other.method
            && self.global_params == other.global_params
            && self.subsets == other.subsets
            && self.sub_consensus == other.sub_consensus
            && self.dma_weights_per_subset == other.dma_weights_per_subset
            && self.metrics == other.metrics
            && self.comm == other.comm
    }
}

/// How client trainings inside a round are executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Schedule {
    Sequential,
    #[default]
    Parallel,
}

/// `M` independent draws of `K` distinct clients each.
pub fn draw_subsets(
    num_clients: usize,
    m: usize,
    k: usize,
    round: usize,
    master_seed: u64,
) -> Result<Vec<SubsetDraw>> {
    if k == 0 || k > num_clients {
        return Err(Error::InvalidArgument(format!(
            "subset size {k} must lie in [1, {num_clients}]"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one subset".into()));
    }
    Ok((0..m)
        .map(|subset_index| {
            let mut rng = seed::rng(seed::derive(
                master_seed,
                &[tag::SUBSET, round as u64, subset_index as u64],
            ));
            let mut client_ids = rand::seq::index::sample(&mut rng, num_clients, k).into_vec();
            client_ids.sort_unstable();
            SubsetDraw {
                round,
                subset_index,
                client_ids,
            }
        })
        .collect())
}

/// Server-side simulation state between rounds.
#[derive(Clone, Debug)]
pub struct Federation {
    train: Dataset,
    test: Dataset,
    clients: Vec<ClientState>,
    initial_global: ParamVector,
    global: ParamVector,
    round: usize,
    master_seed: u64,
    train_cfg: LocalTrainConfig,
    schedule: Schedule,
}

impl Federation {
    /// `initial_global` is θ_glob^0 (normally the warm-up output); it becomes
    /// both the current global model and the teacher seed.
    pub fn new(
        train: Dataset,
        test: Dataset,
        clients: Vec<ClientState>,
        initial_global: ParamVector,
        train_cfg: LocalTrainConfig,
        master_seed: u64,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::Empty("client list"));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.id != i {
                return Err(Error::InvalidArgument(format!(
                    "client at position {i} has id {}",
                    c.id
                )));
            }
        }
        train_cfg.validate()?;
        Ok(Federation {
            train,
            test,
            clients,
            global: initial_global.clone(),
            initial_global,
            round: 0,
            master_seed,
            train_cfg,
            schedule: Schedule::default(),
        })
    }

    /// Builds data, partition, model and warm-up from a configuration.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let setup = Setup::from_config(cfg)?;
        let spec = Arc::new(ModelSpec::new(
            cfg.dataset.dim,
            cfg.model.hidden_dims.clone(),
            cfg.dataset.num_classes,
        )?);
        let init = init_params(&spec, seed::derive(cfg.master_seed, &[tag::INIT]));
        let clients = setup
            .plan
            .clients
            .iter()
            .map(ClientState::from_shard)
            .collect::<Result<Vec<_>>>()?;
        let warm = warmup(
            &clients,
            &setup.train,
            &init,
            cfg.schedule.warmup_epochs,
            &cfg.training,
            cfg.master_seed,
        )?;
        Federation::new(
            setup.train,
            setup.test,
            clients,
            warm,
            cfg.training.clone(),
            cfg.master_seed,
        )
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn initial_global(&self) -> &ParamVector {
        &self.initial_global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn train_config(&self) -> &LocalTrainConfig {
        &self.train_cfg
    }

    pub fn evaluate(&self) -> Result<MetricsReport> {
        evaluate(&self.global, &self.test)
    }

    /// Trains the given clients from the current global model, each exactly
    /// once. Results come back in the order of `ids`.
    pub fn train_clients(&self, ids: &[usize]) -> Result<Vec<LocalOutcome>> {
        let task = |&id: &usize| {
            let client = self
                .clients
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("no client {id}")))?;
            train_client(
                client,
                &self.train,
                &self.global,
                &self.initial_global,
                &self.train_cfg,
                seed::client_round_seed(self.master_seed, self.round, id),
            )
        };
        match self.schedule {
            Schedule::Sequential => ids.iter().map(task).collect(),
            Schedule::Parallel => ids.par_iter().map(task).collect(),
        }
    }

    fn commit(&mut self, outcomes: &[LocalOutcome], global: ParamVector) {
        for o in outcomes {
            self.clients[o.client].apply(o);
        }
        self.global = global;
        self.round += 1;
    }

    /// Record for the current global model without running a round.
    pub fn snapshot(&self, method: MethodKind, with_metrics: bool) -> Result<RoundRecord> {
        Ok(RoundRecord {
            round: self.round,
            method,
            global_params: self.global.clone(),
            subsets: Vec::new(),
            sub_consensus: Vec::new(),
            dma_weights_per_subset: Vec::new(),
            metrics: if with_metrics { Some(self.evaluate()?) } else { None },
            comm: CommCounters::default(),
            wall_ms: 0,
        })
    }
}

/// Data and partition derived from a configuration.
#[derive(Clone, Debug)]
pub struct Setup {
    pub train: Dataset,
    pub test: Dataset,
    pub plan: PartitionPlan,
}

impl Setup {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let d = &cfg.dataset;
        let full = make_blobs(
            d.num_classes,
            d.dim,
            d.samples_per_class,
            d.separation,
            seed::derive(cfg.master_seed, &[tag::DATA]),
        )?;
        let (train, test) = train_test_split(
            &full,
            d.test_fraction,
            seed::derive(cfg.master_seed, &[tag::SPLIT]),
        )?;
        let p = &cfg.partition;
        let plan = match &p.plan_path {
            Some(path) => {
                let plan = PartitionPlan::load(path)?;
                plan.validate(train.len(), 1)?;
                if plan.num_clients() != p.num_clients {
                    return Err(Error::Config(vec![format!(
                        "partition.plan_path: file has {} clients, config says {}",
                        plan.num_clients(),
                        p.num_clients
                    )]));
                }
                if plan.clients.iter().any(|c| c.role.is_none()) {
                    assign_roles(&plan, p.roles, seed::derive(cfg.master_seed, &[tag::ROLES]))?
                } else {
                    plan
                }
            }
            None => {
                let plan = dirichlet_partition(
                    train.labels(),
                    p.num_clients,
                    p.gamma,
                    p.min_client_samples,
                    seed::derive(cfg.master_seed, &[tag::PARTITION]),
                )?;
                assign_roles(&plan, p.roles, seed::derive(cfg.master_seed, &[tag::ROLES]))?
            }
        };
        Ok(Setup { train, test, plan })
    }
}

fn models_for(ids: &[usize], trained: &BTreeMap<usize, LocalOutcome>) -> Vec<WeightedModel> {
    ids.iter().map(|id| trained[id].weighted()).collect()
}

fn subsampled_round(fed: &mut Federation, method: &MethodConfig, use_dma: bool) -> Result<RoundRecord> {
    let start = Instant::now();
    let subsets = draw_subsets(
        fed.clients.len(),
        method.m,
        method.k,
        fed.round,
        fed.master_seed,
    )?;
    let mut distinct: Vec<usize> = subsets.iter().flat_map(|s| s.client_ids.iter().copied()).collect();
    distinct.sort_unstable();
    distinct.dedup();

    // a client sampled into several subsets trains once; its model is reused
    let outcomes = fed.train_clients(&distinct)?;
    let trained: BTreeMap<usize, LocalOutcome> =
        outcomes.iter().cloned().map(|o| (o.client, o)).collect();

    let mut sub_consensus = Vec::with_capacity(subsets.len());
    let mut weights = Vec::with_capacity(subsets.len());
    for s in &subsets {
        let models = models_for(&s.client_ids, &trained);
        let w = if use_dma {
            dma_weights(&models, method.beta)?
        } else {
            size_weights(&models)
        };
        sub_consensus.push(weighted_sum(models.iter().map(|m| &m.params), &w)?);
        weights.push(w);
    }
    let global = consensus_mean(&sub_consensus)?;

    let comm = CommCounters {
        downloads_naive: method.m * method.k,
        downloads_cached: distinct.len(),
        uploads: distinct.len(),
    };
    debug!(
        "round {}: {} distinct clients over {} subsets",
        fed.round,
        distinct.len(),
        subsets.len()
    );
    fed.commit(&outcomes, global);
    Ok(RoundRecord {
        round: fed.round,
        method: if use_dma { MethodKind::Rscfed } else { MethodKind::RscfedNoDma },
        global_params: fed.global.clone(),
        subsets,
        sub_consensus,
        dma_weights_per_subset: weights,
        metrics: None,
        comm,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// One round of random sub-sampling consensus with distance-reweighted
/// aggregation inside each subset.
pub fn run_round_rscfed(fed: &mut Federation, method: &MethodConfig) -> Result<RoundRecord> {
    subsampled_round(fed, method, true)
}

/// One round of a baseline driver selected by `method.kind`.
pub fn run_round_baseline(fed: &mut Federation, method: &MethodConfig) -> Result<RoundRecord> {
    let start = Instant::now();
    let kind = method.kind;
    let ids: Vec<usize> = match kind {
        MethodKind::Rscfed => {
            return Err(Error::InvalidArgument(
                "run_round_baseline does not run the sub-sampling consensus method".into(),
            ))
        }
        MethodKind::RscfedNoDma => return subsampled_round(fed, method, false),
        MethodKind::FedConsist => (0..fed.clients.len()).collect(),
        MethodKind::FedAvgSupervised => fed
            .clients
            .iter()
            .filter(|c| c.role == Role::Labeled)
            .map(|c| c.id)
            .collect(),
    };
    if ids.is_empty() {
        return Err(Error::Empty("labeled clients for supervised FedAvg"));
    }
    let outcomes = fed.train_clients(&ids)?;

    let (global, coeffs) = match kind {
        MethodKind::FedConsist => {
            let (labeled, unlabeled): (Vec<&LocalOutcome>, Vec<&LocalOutcome>) = outcomes
                .iter()
                .partition(|o| fed.clients[o.client].role == Role::Labeled);
            if labeled.is_empty() || unlabeled.is_empty() {
                // nothing to re-balance (all labeled, or all partial)
                let models: Vec<WeightedModel> = outcomes.iter().map(|o| o.weighted()).collect();
                let w = size_weights(&models);
                (fedavg(&models)?, w)
            } else {
                let l: Vec<WeightedModel> = labeled.iter().map(|o| o.weighted()).collect();
                let u: Vec<WeightedModel> = unlabeled.iter().map(|o| o.weighted()).collect();
                let c = weight_adjusted_coefficients(&l, &u, method.labeled_share)?;
                let g = weighted_sum(l.iter().chain(&u).map(|m| &m.params), &c)?;
                // report coefficients in client-id order
                let order: Vec<usize> = labeled.iter().chain(&unlabeled).map(|o| o.client).collect();
                let mut by_id = vec![0.0; c.len()];
                for (pos, id) in order.iter().enumerate() {
                    let slot = ids.iter().position(|x| x == id).expect("trained id");
                    by_id[slot] = c[pos];
                }
                (g, by_id)
            }
        }
        _ => {
            let models: Vec<WeightedModel> = outcomes.iter().map(|o| o.weighted()).collect();
            let w = size_weights(&models);
            (fedavg(&models)?, w)
        }
    };

    let comm = CommCounters {
        downloads_naive: ids.len(),
        downloads_cached: ids.len(),
        uploads: ids.len(),
    };
    let round = fed.round;
    fed.commit(&outcomes, global);
    Ok(RoundRecord {
        round: fed.round,
        method: kind,
        global_params: fed.global.clone(),
        subsets: vec![SubsetDraw {
            round,
            subset_index: 0,
            client_ids: ids,
        }],
        sub_consensus: vec![fed.global.clone()],
        dma_weights_per_subset: vec![coeffs],
        metrics: None,
        comm,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Dispatches on `method.kind`.
pub fn run_round(fed: &mut Federation, method: &MethodConfig) -> Result<RoundRecord> {
    match method.kind {
        MethodKind::Rscfed => run_round_rscfed(fed, method),
        _ => run_round_baseline(fed, method),
    }
}

/// True when the metrics stream gets a row after `completed` rounds.
pub fn is_eval_round(completed: usize, total: usize, eval_every: usize) -> bool {
    completed >= 1 && (completed.is_multiple_of(eval_every) || completed == total)
}

/// Warm-up followed by `schedule.rounds` rounds. The first record is the
/// evaluated warm-up model; later records carry metrics on evaluation rounds.
/// `on_round` sees every record as soon as it is produced.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    schedule: Schedule,
    on_round: &mut dyn FnMut(&RoundRecord) -> Result<()>,
) -> Result<Vec<RoundRecord>> {
    let mut fed = Federation::from_config(cfg)?.with_schedule(schedule);
    let mut records = Vec::with_capacity(cfg.schedule.rounds + 1);
    let warm = fed.snapshot(cfg.method.kind, true)?;
    if let Some(m) = &warm.metrics {
        info!(
            "{} warm-up: acc {:.4} auc {:.4}",
            cfg.method.kind, m.accuracy, m.auc_macro_ovr
        );
    }
    on_round(&warm)?;
    records.push(warm);

    let total = cfg.schedule.rounds;
    for _ in 0..total {
        let mut rec = run_round(&mut fed, &cfg.method)?;
        if is_eval_round(rec.round, total, cfg.schedule.eval_every) {
            let m = fed.evaluate()?;
            info!(
                "{} round {}/{}: acc {:.4} auc {:.4}",
                cfg.method.kind, rec.round, total, m.accuracy, m.auc_macro_ovr
            );
            rec.metrics = Some(m);
        }
        on_round(&rec)?;
        records.push(rec);
    }
    Ok(records)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    run_experiment_with(cfg, Schedule::Parallel, &mut |_| Ok(()))
}

/// Metrics of the last evaluated record.
pub fn final_metrics(records: &[RoundRecord]) -> Option<MetricsReport> {
    records.iter().rev().find_map(|r| r.metrics)
}
