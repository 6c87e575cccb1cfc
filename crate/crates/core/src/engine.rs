//! FedAvg and FedAP rounds over one population of clients.
//!
//! A [`Federation`] is a set of clients that share one global model: the
//! whole population before clustering, or a single cluster afterwards. Its
//! `stream` key separates the random streams of different populations.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::model::{steps_per_epoch, ModelSpec, ParamVector};
use crate::rng::{self, tag};
use crate::stats;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub local_lr: f64,
    pub inner_epochs: usize,
    pub batch_size: usize,
    /// Clients sampled per round.
    pub meta_batch: usize,
    pub total_rounds: usize,
    /// Meta learning rate at the first round.
    pub eta0: f64,
    /// Meta learning rate at the last round.
    pub etak: f64,
    pub personalization_epochs: usize,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            local_lr: 0.001,
            inner_epochs: 1,
            batch_size: 16,
            meta_batch: 5,
            total_rounds: 220,
            eta0: 1.0,
            etak: 0.46,
            personalization_epochs: 7,
            seed: 0,
        }
    }
}

impl FedConfig {
    /// Checks everything that does not depend on the population size.
    pub fn validate(&self) -> Result<()> {
        if !(self.local_lr >= 0.0 && self.local_lr.is_finite()) {
            return Err(Error::Config(format!(
                "fed.local_lr must be >= 0, got {}",
                self.local_lr
            )));
        }
        if self.inner_epochs == 0 {
            return Err(Error::Config("fed.inner_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("fed.batch_size must be >= 1".into()));
        }
        if self.meta_batch == 0 {
            return Err(Error::Config("fed.meta_batch must be >= 1".into()));
        }
        if self.total_rounds == 0 {
            return Err(Error::Config("fed.total_rounds must be >= 1".into()));
        }
        if !(self.etak > 0.0 && self.etak <= self.eta0 && self.eta0.is_finite()) {
            return Err(Error::Config(format!(
                "meta learning rates must satisfy 0 < fed.etak <= fed.eta0, got eta0={} etak={}",
                self.eta0, self.etak
            )));
        }
        Ok(())
    }
}

/// Metrics after one federated round, covering every client of the
/// population that ran it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: usize,
    pub participating_clients: Vec<usize>,
    pub global_params_hash: String,
    pub per_client_test_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub cumulative_steps: u64,
}

impl RoundRecord {
    pub fn new(
        round_index: usize,
        participating_clients: Vec<usize>,
        global_params_hash: String,
        per_client_test_accuracy: Vec<f64>,
        cumulative_steps: u64,
    ) -> Self {
        Self {
            round_index,
            participating_clients,
            global_params_hash,
            mean_accuracy: stats::mean(&per_client_test_accuracy),
            std_accuracy: stats::std_dev(&per_client_test_accuracy),
            per_client_test_accuracy,
            cumulative_steps,
        }
    }
}

pub fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

/// Global parameters plus the number of SGD steps spent so far.
#[derive(Debug, Clone, PartialEq)]
pub struct FedState {
    pub global: ParamVector,
    pub cumulative_steps: u64,
}

/// How the per-client accuracies of a round record are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    /// The aggregated model as is.
    Global,
    /// A throwaway personalized copy per client.
    Personalized,
}

/// `Σ (w_i / Σw) θ_i`, accumulated in list order.
pub fn weighted_average(params: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let first = params
        .first()
        .ok_or_else(|| Error::EmptyData("no parameter vectors to average".into()))?;
    if params.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} vectors but {} weights",
            params.len(),
            weights.len()
        )));
    }
    for p in &params[1..] {
        first.same_spec(p)?;
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Config("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("weights must have a positive sum".into()));
    }
    let mut out = alloc::vec![0.0; first.len()];
    for (p, w) in params.iter().zip(weights) {
        let share = w / total;
        for (acc, v) in out.iter_mut().zip(p.values()) {
            *acc += share * v;
        }
    }
    Ok(first.with_values(out))
}

/// `n` distinct client positions drawn uniformly without replacement,
/// returned in ascending order.
pub fn sample_clients<R: Rng + ?Sized>(num_clients: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || n > num_clients {
        return Err(Error::Config(format!(
            "cannot sample {n} clients from a population of {num_clients}"
        )));
    }
    let mut picked = index::sample(rng, num_clients, n).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Linear decay from `eta0` at round 0 to `etak` at round `total_rounds - 1`.
pub fn meta_lr(round_index: usize, cfg: &FedConfig) -> Result<f64> {
    meta_lr_over(round_index, cfg.total_rounds, cfg)
}

/// [`meta_lr`] over an explicit horizon, for schedules that restart.
pub fn meta_lr_over(round_index: usize, horizon: usize, cfg: &FedConfig) -> Result<f64> {
    if round_index >= horizon {
        return Err(Error::Config(format!(
            "round {round_index} is outside a schedule of {horizon} rounds"
        )));
    }
    if horizon == 1 {
        return Ok(cfg.eta0);
    }
    Ok(cfg.eta0 + (cfg.etak - cfg.eta0) * round_index as f64 / (horizon - 1) as f64)
}

/// Fine-tunes a copy of `global` on the client's training rows for
/// `personalization_epochs` epochs. The shuffle stream depends only on the
/// experiment seed and the client id.
pub fn personalize(
    spec: &ModelSpec,
    global: &ParamVector,
    client: &ClientDataset,
    cfg: &FedConfig,
) -> Result<ParamVector> {
    let mut rng = rng::stream(cfg.seed, &[tag::PERSONALIZE, client.client_id as u64]);
    let mut params = global.clone();
    for _ in 0..cfg.personalization_epochs {
        params = spec.sgd_epoch(&params, &client.train, cfg.local_lr, cfg.batch_size, &mut rng)?;
    }
    Ok(params)
}

pub fn personalization_steps(client: &ClientDataset, cfg: &FedConfig) -> u64 {
    cfg.personalization_epochs as u64 * steps_per_epoch(client.train.len(), cfg.batch_size)
}

pub fn local_steps(client: &ClientDataset, cfg: &FedConfig) -> u64 {
    cfg.inner_epochs as u64 * steps_per_epoch(client.train.len(), cfg.batch_size)
}

/// Clients that share one global model.
#[derive(Debug, Clone, Copy)]
pub struct Federation<'a> {
    pub spec: &'a ModelSpec,
    pub clients: &'a [ClientDataset],
    pub cfg: &'a FedConfig,
    /// Distinguishes the random streams of separate populations.
    pub stream: u64,
    meta_batch: usize,
}

/// Result of local training on the sampled clients of one round.
#[derive(Debug, Clone)]
pub struct LocalRound {
    /// Positions into the federation's client slice, ascending.
    pub sampled: Vec<usize>,
    pub params: Vec<ParamVector>,
    pub steps: u64,
}

impl<'a> Federation<'a> {
    /// The whole population; sampling more clients than exist is an error.
    pub fn new(
        spec: &'a ModelSpec,
        clients: &'a [ClientDataset],
        cfg: &'a FedConfig,
        stream: u64,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::EmptyData("federation has no clients".into()));
        }
        cfg.validate()?;
        if cfg.meta_batch > clients.len() {
            return Err(Error::Config(format!(
                "fed.meta_batch={} exceeds the {} available clients",
                cfg.meta_batch,
                clients.len()
            )));
        }
        Ok(Self {
            spec,
            clients,
            cfg,
            stream,
            meta_batch: cfg.meta_batch,
        })
    }

    /// A sub-population whose per-round sample is capped at its size.
    pub fn capped(
        spec: &'a ModelSpec,
        clients: &'a [ClientDataset],
        cfg: &'a FedConfig,
        stream: u64,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::EmptyData("federation has no clients".into()));
        }
        cfg.validate()?;
        Ok(Self {
            spec,
            clients,
            cfg,
            stream,
            meta_batch: cfg.meta_batch.min(clients.len()),
        })
    }

    pub fn meta_batch(&self) -> usize {
        self.meta_batch
    }

    pub fn sample(&self, round_index: usize) -> Result<Vec<usize>> {
        let mut rng = rng::stream(
            self.cfg.seed,
            &[tag::SAMPLE, self.stream, round_index as u64],
        );
        sample_clients(self.clients.len(), self.meta_batch, &mut rng)
    }

    /// `inner_epochs` SGD epochs from a fresh copy of `global`.
    pub fn train_local(
        &self,
        global: &ParamVector,
        client: &ClientDataset,
        round_index: usize,
    ) -> Result<ParamVector> {
        let mut rng = rng::stream(
            self.cfg.seed,
            &[tag::LOCAL, self.stream, round_index as u64, client.client_id as u64],
        );
        let mut params = global.clone();
        for _ in 0..self.cfg.inner_epochs {
            params = self.spec.sgd_epoch(
                &params,
                &client.train,
                self.cfg.local_lr,
                self.cfg.batch_size,
                &mut rng,
            )?;
        }
        Ok(params)
    }

    pub fn local_round(&self, global: &ParamVector, round_index: usize) -> Result<LocalRound> {
        let sampled = self.sample(round_index)?;
        let chosen: Vec<&ClientDataset> = sampled.iter().map(|&i| &self.clients[i]).collect();
        let params = map_in_order(&chosen, |c| self.train_local(global, c, round_index))?;
        let steps = chosen.iter().map(|c| local_steps(c, self.cfg)).sum();
        Ok(LocalRound {
            sampled,
            params,
            steps,
        })
    }

    fn sample_weights(&self, local: &LocalRound) -> Vec<f64> {
        local
            .sampled
            .iter()
            .map(|&i| self.clients[i].train.len() as f64)
            .collect()
    }

    /// Test accuracy of every client, in slice order.
    pub fn evaluate(&self, global: &ParamVector, mode: Evaluation) -> Result<Vec<f64>> {
        let all: Vec<&ClientDataset> = self.clients.iter().collect();
        map_in_order(&all, |c| {
            let model = match mode {
                Evaluation::Global => global.clone(),
                Evaluation::Personalized => personalize(self.spec, global, c, self.cfg)?,
            };
            Ok(self.spec.evaluate(&model, &c.test)?.accuracy)
        })
    }

    fn finish(
        &self,
        state: &FedState,
        local: LocalRound,
        global: ParamVector,
        round_index: usize,
        mode: Evaluation,
    ) -> Result<(FedState, RoundRecord)> {
        let accuracies = self.evaluate(&global, mode)?;
        let cumulative_steps = state.cumulative_steps + local.steps;
        let record = RoundRecord::new(
            round_index,
            local
                .sampled
                .iter()
                .map(|&i| self.clients[i].client_id)
                .collect(),
            hash_hex(global.content_hash()),
            accuracies,
            cumulative_steps,
        );
        Ok((
            FedState {
                global,
                cumulative_steps,
            },
            record,
        ))
    }

    /// Sample, train locally, replace the global model by the size-weighted
    /// average of the local models, then evaluate all clients on it.
    pub fn fedavg_round(&self, state: &FedState, round_index: usize) -> Result<(FedState, RoundRecord)> {
        let local = self.local_round(&state.global, round_index)?;
        let global = weighted_average(&local.params, &self.sample_weights(&local))?;
        self.finish(state, local, global, round_index, Evaluation::Global)
    }

    /// FedAP with the rate taken from the linear schedule at `round_index`.
    pub fn fedap_round(&self, state: &FedState, round_index: usize) -> Result<(FedState, RoundRecord)> {
        let eta = meta_lr(round_index, self.cfg)?;
        self.fedap_round_with_rate(state, round_index, eta)
    }

    /// Moves the global model a fraction `eta` of the way towards the
    /// size-weighted average of the local models, then evaluates every
    /// client on its own personalized copy.
    ///
    /// The step is written as `(1 - eta) * global + eta * average`, which
    /// equals `global + eta * Σ w_i (θ_i - global)` for normalized weights
    /// and makes `eta = 1` reproduce FedAvg bit for bit.
    pub fn fedap_round_with_rate(
        &self,
        state: &FedState,
        round_index: usize,
        eta: f64,
    ) -> Result<(FedState, RoundRecord)> {
        let local = self.local_round(&state.global, round_index)?;
        let avg = weighted_average(&local.params, &self.sample_weights(&local))?;
        let global = meta_step(&state.global, &avg, eta)?;
        self.finish(state, local, global, round_index, Evaluation::Personalized)
    }
}

/// `(1 - eta) * from + eta * to`.
pub fn meta_step(from: &ParamVector, to: &ParamVector, eta: f64) -> Result<ParamVector> {
    from.same_spec(to)?;
    let keep = 1.0 - eta;
    Ok(from.with_values(
        from.values()
            .iter()
            .zip(to.values())
            .map(|(g, a)| keep * g + eta * a)
            .collect(),
    ))
}

/// Applies `f` to every item and returns results in input order. Runs on
/// the rayon pool when the `parallel` feature is on.
pub(crate) fn map_in_order<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
