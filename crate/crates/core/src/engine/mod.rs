//! The asynchronous island engine.
//!
//! Every worker loops over its generations without waiting for anyone:
//! breed from the local active population, evaluate, share the result with
//! island peers, then absorb whatever has arrived. Islands exchange
//! individuals either by migration (the emigrant leaves its source island)
//! or by pollination (a copy is sent and replaces a victim on arrival).
//! Deactivations are gossiped as notices; notices that overtake their
//! individual wait in the ledger's cache. After the last generation the
//! workers settle between barriers until no envelope is left in flight.
//!
//! The migration path follows the prose description of exclusive
//! emigration: each worker may only send individuals it bred itself that are
//! still active, which keeps the candidate sets disjoint without any
//! coordination.

mod config;
pub mod events;
pub mod output;
mod worker;

use std::sync::Arc;

use thiserror::Error;

use crate::ledger::{LedgerError, PopulationLedger};
use crate::objective::Objective;
use crate::propagators::{engine_propagator, Propagator, PropagatorConfig, PropagatorError};
use crate::space::{validate_space, Identity, Individual, SearchSpace};
use crate::transport::sim::{SimNetwork, SimOptions};
use crate::transport::{Layout, Transport, TransportError};

pub use config::{ConfigError, EmigrationPolicy, ExchangeMode, ImmigrationPolicy, IslandConfig};
pub use events::{Event, EventKind};
pub use worker::{coordinator_rank, Worker, WorkerOutput, WorkerStats};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error("worker {worker} finished with {pending} unresolved deactivation(s)")]
    ResidualCache { worker: String, pending: usize },
}

/// Everything a worker needs that is shared across the run.
pub struct Engine {
    pub(crate) space: Arc<SearchSpace>,
    pub(crate) objective: Arc<dyn Objective>,
    pub(crate) propagator: Arc<dyn Propagator>,
    pub(crate) config: IslandConfig,
}

impl Engine {
    /// Validates the configs and builds the default breeding rule.
    pub fn new(
        space: SearchSpace,
        objective: Arc<dyn Objective>,
        propagator: &PropagatorConfig,
        config: IslandConfig,
    ) -> Result<Self, EngineError> {
        validate_space(&space).map_err(|e| ConfigError::new("gene", e.to_string()))?;
        propagator
            .validate()
            .map_err(|e| ConfigError::new("propagator", e.to_string()))?;
        let space = Arc::new(space);
        let rule = engine_propagator(propagator, space.clone())?;
        Self::with_propagator(space, objective, Arc::new(rule), config)
    }

    /// Uses a caller-supplied breeding rule.
    pub fn with_propagator(
        space: Arc<SearchSpace>,
        objective: Arc<dyn Objective>,
        propagator: Arc<dyn Propagator>,
        config: IslandConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            space,
            objective,
            propagator,
            config,
        })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn config(&self) -> &IslandConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    /// Runs one worker to completion on `transport`.
    pub fn run_worker<T: Transport>(&self, transport: T) -> Result<WorkerOutput, EngineError> {
        if transport.layout() != &self.layout() {
            return Err(ConfigError::new("island_sizes", "transport layout does not match the island config").into());
        }
        Worker::new(self, transport).run()
    }

    /// Runs every worker on the in-process virtual-clock backend.
    pub fn run_simulated(&self, options: SimOptions) -> Result<RunResult, EngineError> {
        let layout = self.layout();
        let report = SimNetwork::new(layout.clone(), options).run(|ep| self.run_worker(ep));
        let mut outputs = Vec::with_capacity(report.results.len());
        let mut errors = Vec::new();
        for r in report.results {
            match r {
                Ok(o) => outputs.push(o),
                Err(e) => errors.push(e),
            }
        }
        // A failing worker leaves its peers stuck in a barrier; report the cause.
        let timeout = EngineError::Transport(TransportError::TimeoutExceeded);
        if let Some(i) = errors.iter().position(|e| *e != timeout).or((!errors.is_empty()).then_some(0)) {
            return Err(errors.swap_remove(i));
        }
        Ok(RunResult::new(layout, outputs, report.makespan))
    }
}

/// Convenience wrapper: default breeding rule on the virtual-clock backend.
pub fn run(
    space: SearchSpace,
    objective: Arc<dyn Objective>,
    propagator: &PropagatorConfig,
    config: IslandConfig,
    options: SimOptions,
) -> Result<RunResult, EngineError> {
    Engine::new(space, objective, propagator, config)?.run_simulated(options)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub layout: Layout,
    /// Worker outputs in global-id order.
    pub workers: Vec<WorkerOutput>,
    pub makespan: f64,
}

impl RunResult {
    pub fn new(layout: Layout, mut workers: Vec<WorkerOutput>, makespan: f64) -> Self {
        workers.sort_by_key(|w| w.address.global_id);
        Self {
            layout,
            workers,
            makespan,
        }
    }

    pub fn ledgers(&self) -> impl Iterator<Item = &PopulationLedger> {
        self.workers.iter().map(|w| &w.ledger)
    }

    /// Every distinct evaluated individual, ordered by identity.
    pub fn evaluated(&self) -> Vec<&Individual> {
        let mut seen = std::collections::BTreeMap::<Identity, &Individual>::new();
        for l in self.ledgers() {
            for r in l.records() {
                seen.entry(r.id.expect("recorded")).or_insert(r);
            }
        }
        seen.into_values().collect()
    }

    pub fn evaluations(&self) -> usize {
        self.evaluated().len()
    }

    /// The `n` lowest-loss distinct individuals, ascending.
    pub fn top_n(&self, n: usize) -> Vec<Individual> {
        let mut all: Vec<Individual> = self.evaluated().into_iter().cloned().collect();
        all.sort_by(|a, b| a.loss_or_inf().total_cmp(&b.loss_or_inf()).then(a.id.cmp(&b.id)));
        all.truncate(n);
        all
    }

    pub fn best(&self) -> Option<Individual> {
        self.top_n(1).pop()
    }

    /// Every worker's events merged by time; ties by worker then log order.
    pub fn merged_events(&self) -> Vec<Event> {
        let mut all: Vec<(usize, usize, &Event)> = self
            .workers
            .iter()
            .enumerate()
            .flat_map(|(w, o)| o.events.iter().enumerate().map(move |(i, e)| (w, i, e)))
            .collect();
        all.sort_by(|a, b| a.2.time.total_cmp(&b.2.time).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        all.into_iter().map(|(_, _, e)| e.clone()).collect()
    }
}
