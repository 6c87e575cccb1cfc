//! Full experiment pipeline: split, warm-up FedAvg, clustering and
//! per-cluster FedAvg or FedAP, with step-budget accounting.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cluster::{
    compute_updates, cut_threshold, pairwise_euclidean, ward_dendrogram, ClusterAssignment,
    Dendrogram, UpdateMatrix,
};
use crate::data::{self, ClientDataset, LabeledDataset, SyntheticSpec};
use crate::engine::{
    self, hash_hex, map_in_order, meta_lr_over, personalization_steps, FedConfig, FedState,
    Federation, RoundRecord,
};
use crate::model::{steps_per_epoch, ModelKind, ModelSpec, ParamVector};
use crate::rng::{self, fnv1a, tag};
use crate::stats;
use crate::{Error, Result};

/// Stream key of the unclustered population; cluster `c` uses `c + 1`.
pub const POPULATION_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "centralized")]
    Centralized,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedavg_hc")]
    FedAvgHc,
    #[serde(rename = "fedap")]
    FedAp,
    #[serde(rename = "fedap_hc")]
    FedApHc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Centralized,
        Method::FedAvg,
        Method::FedAvgHc,
        Method::FedAp,
        Method::FedApHc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Centralized => "centralized",
            Method::FedAvg => "fedavg",
            Method::FedAvgHc => "fedavg_hc",
            Method::FedAp => "fedap",
            Method::FedApHc => "fedap_hc",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Centralized => "Centralized",
            Method::FedAvg => "FedAvg",
            Method::FedAvgHc => "FedAvg + HC",
            Method::FedAp => "FedAP",
            Method::FedApHc => "FedAP + HC",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn clustered(self) -> bool {
        matches!(self, Method::FedAvgHc | Method::FedApHc)
    }

    pub fn personalized(self) -> bool {
        matches!(self, Method::FedAp | Method::FedApHc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: String,
        label_column: String,
        feature_columns: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Per-class row cap applied before sharding.
    pub undersample_cap: Option<usize>,
    pub shard_size: usize,
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            undersample_cap: Some(500),
            shard_size: 35,
            train_fraction: 0.8,
        }
    }
}

/// The Gaussian-mixture benchmark used by the default configuration:
/// 7 classes of 500 rows, separation three times the noise level.
pub fn desk_benchmark(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 7,
        input_dim: 2,
        per_class_count: 500,
        class_separation: 10_000.0,
        noise_sigma: 10_000.0 / 3.0,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub model: ModelKind,
    pub fed: FedConfig,
    pub cluster_init_rounds: usize,
    pub max_distance: f64,
    pub data: DataSource,
    pub split: SplitConfig,
    /// Rounds appended after `fed.total_rounds`; the meta learning rate
    /// stays at `fed.etak` for them.
    pub extra_rounds: usize,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::FedApHc,
            model: ModelKind::LogisticRegression,
            fed: FedConfig::default(),
            cluster_init_rounds: 20,
            max_distance: 5.0,
            data: DataSource::Synthetic(desk_benchmark(0)),
            split: SplitConfig::default(),
            extra_rounds: 0,
            output_dir: String::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.fed.validate()?;
        if self.method.clustered() && self.cluster_init_rounds >= self.fed.total_rounds {
            return Err(Error::Config(format!(
                "cluster_init_rounds ({}) must be below fed.total_rounds ({})",
                self.cluster_init_rounds, self.fed.total_rounds
            )));
        }
        if self.max_distance.is_nan() || self.max_distance <= 0.0 {
            return Err(Error::Config(format!(
                "max_distance must be positive, got {}",
                self.max_distance
            )));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }

    pub fn rounds_to_run(&self) -> usize {
        self.fed.total_rounds + self.extra_rounds
    }
}

/// Member list and per-round parameter hashes of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTrajectory {
    pub cluster: usize,
    pub client_ids: Vec<usize>,
    pub params_hashes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub num_clients: usize,
    pub client_classes: Vec<Vec<usize>>,
    pub rounds: Vec<RoundRecord>,
    /// Index of the first round trained inside clusters.
    pub clustering_round: Option<usize>,
    /// Cumulative steps when clustering happened.
    pub clustering_step: Option<u64>,
    pub cluster_assignment: Option<ClusterAssignment>,
    pub dendrogram: Option<Dendrogram>,
    pub cluster_trajectories: Vec<ClusterTrajectory>,
    pub final_per_client_accuracy: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    /// Filled in by callers that can read a clock; not serialized so that
    /// reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

/// Total SGD mini-batch steps recorded in the report.
pub fn account_budget(report: &ExperimentReport) -> u64 {
    report.rounds.last().map_or(0, |r| r.cumulative_steps)
}

pub fn model_spec(cfg: &ExperimentConfig, data: &LabeledDataset) -> Result<ModelSpec> {
    ModelSpec::new(cfg.model, data.input_dim(), data.num_classes())
}

/// Undersamples and shards `data` into clients.
pub fn prepare_clients(cfg: &ExperimentConfig, data: &LabeledDataset) -> Result<Vec<ClientDataset>> {
    let seed = rng::derive_seed(cfg.fed.seed, &[tag::SPLIT]);
    let capped;
    let source = match cfg.split.undersample_cap {
        Some(cap) => {
            capped = data::undersample(data, cap, seed)?;
            &capped
        }
        None => data,
    };
    data::shard_split(source, cfg.split.shard_size, cfg.split.train_fraction, seed)
}

/// Steps a FedAvg run over `rounds` rounds of the whole population spends.
pub fn fedavg_budget(spec: &ModelSpec, clients: &[ClientDataset], fed: &FedConfig, rounds: usize) -> Result<u64> {
    let population = Federation::new(spec, clients, fed, POPULATION_STREAM)?;
    let mut steps = 0;
    for t in 0..rounds {
        steps += population
            .sample(t)?
            .iter()
            .map(|&i| engine::local_steps(&clients[i], fed))
            .sum::<u64>();
    }
    Ok(steps)
}

pub fn run_experiment(cfg: &ExperimentConfig, data: &LabeledDataset) -> Result<ExperimentReport> {
    match cfg.method {
        Method::Centralized => run_centralized(cfg, data),
        _ => run_federated(cfg, data),
    }
}

/// Trains one model on the pooled training rows for as many steps as the
/// FedAvg baseline spends, then scores it on every client's test rows.
pub fn run_centralized(cfg: &ExperimentConfig, data: &LabeledDataset) -> Result<ExperimentReport> {
    cfg.validate()?;
    let spec = model_spec(cfg, data)?;
    let clients = prepare_clients(cfg, data)?;
    let budget = fedavg_budget(&spec, &clients, &cfg.fed, cfg.rounds_to_run())?;
    run_centralized_with_budget(cfg, &spec, &clients, budget)
}

pub fn run_centralized_with_budget(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    clients: &[ClientDataset],
    budget: u64,
) -> Result<ExperimentReport> {
    let (train, _) = data::pool(clients)?;
    let rounds = cfg.rounds_to_run() as u64;
    let mut rng = rng::stream(cfg.fed.seed, &[tag::CENTRAL]);
    let mut params = spec.init(cfg.fed.seed);
    let mut records = Vec::with_capacity(rounds as usize);
    let all_ids: Vec<usize> = clients.iter().map(|c| c.client_id).collect();
    let mut spent = 0;
    for t in 0..rounds {
        let target = budget * (t + 1) / rounds;
        params = spec.sgd_steps(
            &params,
            &train,
            cfg.fed.local_lr,
            cfg.fed.batch_size,
            target - spent,
            &mut rng,
        )?;
        spent = target;
        let acc = map_in_order(clients, |c| Ok(spec.evaluate(&params, &c.test)?.accuracy))?;
        records.push(RoundRecord::new(
            t as usize,
            all_ids.clone(),
            hash_hex(params.content_hash()),
            acc,
            spent,
        ));
    }
    Ok(finish_report(cfg, clients, records, None))
}

struct Clustering {
    assignment: ClusterAssignment,
    dendrogram: Dendrogram,
    steps: u64,
}

/// Every client trains one epoch from `global`; the resulting updates are
/// Ward-clustered and cut at `max_distance`.
pub fn cluster_clients(
    spec: &ModelSpec,
    clients: &[ClientDataset],
    global: &ParamVector,
    fed: &FedConfig,
    max_distance: f64,
) -> Result<(ClusterAssignment, Dendrogram, u64)> {
    let c = cluster_clients_inner(spec, clients, global, fed, max_distance)?;
    Ok((c.assignment, c.dendrogram, c.steps))
}

fn cluster_clients_inner(
    spec: &ModelSpec,
    clients: &[ClientDataset],
    global: &ParamVector,
    fed: &FedConfig,
    max_distance: f64,
) -> Result<Clustering> {
    let locals = map_in_order(clients, |c| {
        let mut rng = rng::stream(fed.seed, &[tag::CLUSTER_PASS, c.client_id as u64]);
        spec.sgd_epoch(global, &c.train, fed.local_lr, fed.batch_size, &mut rng)
    })?;
    let steps = clients
        .iter()
        .map(|c| steps_per_epoch(c.train.len(), fed.batch_size))
        .sum();
    let updates = compute_updates(&locals, global)?;
    let updates = UpdateMatrix::new(
        updates.rows().to_vec(),
        clients.iter().map(|c| c.client_id).collect(),
    )?;
    let dendrogram = ward_dendrogram(&pairwise_euclidean(&updates)?)?;
    let assignment = cut_threshold(&dendrogram, max_distance);
    Ok(Clustering {
        assignment,
        dendrogram,
        steps,
    })
}

/// Output of [`train_clusters`].
#[derive(Debug, Clone)]
pub struct ClusterPhase {
    /// One record per round; accuracies follow the order of `clients`.
    pub records: Vec<RoundRecord>,
    pub trajectories: Vec<ClusterTrajectory>,
    pub final_params: Vec<ParamVector>,
}

/// Trains each cluster as its own federation, starting from `start`, for
/// `rounds` rounds numbered from `first_round`. FedAP restarts its linear
/// schedule over `schedule_horizon` rounds. Records carry cumulative steps
/// on top of `steps_before`, including the closing personalization for
/// personalized methods.
#[allow(clippy::too_many_arguments)]
pub fn train_clusters(
    spec: &ModelSpec,
    clients: &[ClientDataset],
    assignment: &ClusterAssignment,
    start: &ParamVector,
    fed: &FedConfig,
    personalized: bool,
    first_round: usize,
    rounds: usize,
    schedule_horizon: usize,
    steps_before: u64,
) -> Result<ClusterPhase> {
    let members = assignment.members();
    let groups: Vec<(usize, Vec<ClientDataset>)> = members
        .iter()
        .enumerate()
        .map(|(c, idx)| (c, idx.iter().map(|&i| clients[i].clone()).collect()))
        .collect();

    struct Run {
        records: Vec<RoundRecord>,
        params: ParamVector,
        final_steps: u64,
    }
    let runs = map_in_order(&groups, |(c, group)| {
        let fed_c = Federation::capped(spec, group, fed, *c as u64 + 1)?;
        let mut state = FedState {
            global: start.clone(),
            cumulative_steps: 0,
        };
        let mut records = Vec::with_capacity(rounds);
        for r in 0..rounds {
            let t = first_round + r;
            let (next, rec) = if personalized {
                let eta = meta_lr_over(r.min(schedule_horizon - 1), schedule_horizon, fed)?;
                fed_c.fedap_round_with_rate(&state, t, eta)?
            } else {
                fed_c.fedavg_round(&state, t)?
            };
            state = next;
            records.push(rec);
        }
        let final_steps = if personalized {
            group.iter().map(|c| personalization_steps(c, fed)).sum()
        } else {
            0
        };
        Ok(Run {
            records,
            params: state.global,
            final_steps,
        })
    })?;

    let mut records = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let mut acc = vec![0.0; clients.len()];
        let mut participating = Vec::new();
        let mut hashes = Vec::new();
        let mut steps = steps_before;
        for (run, idx) in runs.iter().zip(&members) {
            let rec = &run.records[r];
            for (&i, &a) in idx.iter().zip(&rec.per_client_test_accuracy) {
                acc[i] = a;
            }
            participating.extend_from_slice(&rec.participating_clients);
            hashes.push(u64::from_str_radix(&rec.global_params_hash, 16).unwrap_or_default());
            steps += rec.cumulative_steps;
            if r + 1 == rounds {
                steps += run.final_steps;
            }
        }
        participating.sort_unstable();
        records.push(RoundRecord::new(
            first_round + r,
            participating,
            hash_hex(fnv1a(hashes)),
            acc,
            steps,
        ));
    }
    let trajectories = runs
        .iter()
        .zip(&members)
        .enumerate()
        .map(|(c, (run, idx))| ClusterTrajectory {
            cluster: c,
            client_ids: idx.iter().map(|&i| clients[i].client_id).collect(),
            params_hashes: run
                .records
                .iter()
                .map(|r| r.global_params_hash.clone())
                .collect(),
        })
        .collect();
    Ok(ClusterPhase {
        records,
        trajectories,
        final_params: runs.into_iter().map(|r| r.params).collect(),
    })
}

/// Runs FedAvg, FedAP or one of their clustered variants.
pub fn run_federated(cfg: &ExperimentConfig, data: &LabeledDataset) -> Result<ExperimentReport> {
    cfg.validate()?;
    let spec = model_spec(cfg, data)?;
    let clients = prepare_clients(cfg, data)?;
    run_federated_on(cfg, &spec, &clients)
}

pub fn run_federated_on(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    clients: &[ClientDataset],
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.method == Method::Centralized {
        return Err(Error::Config("centralized is not a federated method".into()));
    }
    let fed = &cfg.fed;
    let total = cfg.rounds_to_run();
    let warm_up = if cfg.method.clustered() {
        cfg.cluster_init_rounds
    } else {
        total
    };
    let population = Federation::new(spec, clients, fed, POPULATION_STREAM)?;
    let mut state = FedState {
        global: spec.init(fed.seed),
        cumulative_steps: 0,
    };
    let mut records = Vec::with_capacity(total);
    let personalized_only = cfg.method == Method::FedAp;
    for t in 0..warm_up {
        let (next, rec) = if personalized_only {
            let eta = meta_lr_over(t.min(fed.total_rounds - 1), fed.total_rounds, fed)?;
            population.fedap_round_with_rate(&state, t, eta)?
        } else {
            population.fedavg_round(&state, t)?
        };
        state = next;
        records.push(rec);
    }

    if !cfg.method.clustered() {
        if personalized_only {
            let extra: u64 = clients.iter().map(|c| personalization_steps(c, fed)).sum();
            if let Some(last) = records.last_mut() {
                last.cumulative_steps += extra;
            }
        }
        return Ok(finish_report(cfg, clients, records, None));
    }

    let clustering = cluster_clients_inner(spec, clients, &state.global, fed, cfg.max_distance)?;
    let steps_at_clustering = state.cumulative_steps + clustering.steps;
    let phase = train_clusters(
        spec,
        clients,
        &clustering.assignment,
        &state.global,
        fed,
        cfg.method.personalized(),
        warm_up,
        total - warm_up,
        fed.total_rounds - warm_up,
        steps_at_clustering,
    )?;
    records.extend(phase.records);
    let mut report = finish_report(cfg, clients, records, Some((clustering, steps_at_clustering)));
    report.cluster_trajectories = phase.trajectories;
    Ok(report)
}

fn finish_report(
    cfg: &ExperimentConfig,
    clients: &[ClientDataset],
    rounds: Vec<RoundRecord>,
    clustering: Option<(Clustering, u64)>,
) -> ExperimentReport {
    let final_acc = rounds
        .last()
        .map(|r| r.per_client_test_accuracy.clone())
        .unwrap_or_default();
    let (assignment, dendrogram, round, step) = match clustering {
        Some((c, step)) => (
            Some(c.assignment),
            Some(c.dendrogram),
            Some(cfg.cluster_init_rounds),
            Some(step),
        ),
        None => (None, None, None, None),
    };
    ExperimentReport {
        config: cfg.clone(),
        num_clients: clients.len(),
        client_classes: clients.iter().map(|c| c.classes_present.clone()).collect(),
        rounds,
        clustering_round: round,
        clustering_step: step,
        cluster_assignment: assignment,
        dendrogram,
        cluster_trajectories: Vec::new(),
        final_mean: stats::mean(&final_acc),
        final_std: stats::std_dev(&final_acc),
        final_per_client_accuracy: final_acc,
        wall_time_seconds: 0.0,
    }
}
