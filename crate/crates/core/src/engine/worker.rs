use log::{debug, warn};
use rand::Rng;

use crate::ledger::{Deactivation, LedgerError, PopulationLedger, Recorded};
use crate::propagators::{breed_one, select_best, select_uniform, select_worst};
use crate::rng::{self, Stream, WorkerRng};
use crate::space::{Identity, Individual};
use crate::transport::{Body, Channel, Envelope, Transport, WorkerAddress};

use super::events::{Event, EventKind};
use super::{EmigrationPolicy, Engine, EngineError, ExchangeMode, ImmigrationPolicy};

const COORDINATOR_KEY: u64 = 0xC0_0D;

/// Rank on `target` that picks the victim for a pollinated copy of `id`.
///
/// Every sender of the same identity to the same island names the same rank,
/// so duplicate copies never trigger a second replacement.
pub fn coordinator_rank(seed: u64, id: Identity, target: u32, island_size: u32) -> u32 {
    let h = rng::hash_keys(
        seed,
        &[COORDINATOR_KEY, id.island.into(), id.rank.into(), id.generation, target.into()],
    );
    (h % u64::from(island_size)) as u32
}

/// Per-worker counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub bred: u64,
    pub received: u64,
    pub emigrated: u64,
    pub immigrated: u64,
    /// Pollinated copies of identities already present.
    pub duplicates: u64,
    pub victims: u64,
    /// Notices that arrived before their individual.
    pub deferred: u64,
    /// Deferred notices applied once the individual arrived.
    pub resolved_late: u64,
    pub objective_failures: u64,
    pub skipped_emigrations: u64,
    pub posts: u64,
}

/// What a worker hands back after finalizing.
#[derive(Debug, Clone)]
pub struct WorkerOutput {
    pub address: WorkerAddress,
    pub ledger: PopulationLedger,
    pub events: Vec<Event>,
    pub stats: WorkerStats,
    pub finish_time: f64,
}

/// One sequential optimization context: a ledger, three random streams and
/// a transport endpoint.
pub struct Worker<'a, T: Transport> {
    engine: &'a Engine,
    transport: T,
    addr: WorkerAddress,
    ledger: PopulationLedger,
    breeding: WorkerRng,
    objective: WorkerRng,
    exchange: WorkerRng,
    generation: u64,
    events: Vec<Event>,
    stats: WorkerStats,
}

impl<'a, T: Transport> Worker<'a, T> {
    pub fn new(engine: &'a Engine, transport: T) -> Self {
        let addr = transport.address();
        let seed = engine.config.seed;
        Self {
            engine,
            addr,
            ledger: PopulationLedger::new(addr.island, addr.rank),
            breeding: rng::worker_rng(seed, addr.global_id, Stream::Breeding),
            objective: rng::worker_rng(seed, addr.global_id, Stream::Objective),
            exchange: rng::worker_rng(seed, addr.global_id, Stream::Exchange),
            transport,
            generation: 0,
            events: Vec::new(),
            stats: WorkerStats::default(),
        }
    }

    pub fn address(&self) -> WorkerAddress {
        self.addr
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn ledger(&self) -> &PopulationLedger {
        &self.ledger
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn stats(&self) -> &WorkerStats {
        &self.stats
    }

    pub fn transport(&mut self) -> &mut T {
        &mut self.transport
    }

    /// Runs every generation, finalizes and shuts the endpoint down.
    pub fn run(self) -> Result<WorkerOutput, EngineError> {
        let (out, mut transport) = self.finish_open();
        transport.shutdown();
        out
    }

    /// Like [`Worker::run`] but hands the endpoint back still open, for
    /// callers that synchronize again after writing results.
    pub fn finish_open(mut self) -> (Result<WorkerOutput, EngineError>, T) {
        let outcome = self.run_steps().map(|()| WorkerOutput {
            address: self.addr,
            finish_time: self.transport.now(),
            ledger: self.ledger,
            events: self.events,
            stats: self.stats,
        });
        (outcome, self.transport)
    }

    fn run_steps(&mut self) -> Result<(), EngineError> {
        while self.generation < self.engine.config.generations {
            self.step()?;
        }
        self.finalize()
    }

    /// One generation of the worker loop.
    pub fn step(&mut self) -> Result<(), EngineError> {
        self.breed_and_evaluate()?;
        self.drain_intra_island()?;
        if self.exchange.random_bool(self.engine.config.exchange_probability) {
            self.emigrate()?;
        }
        self.receive_immigrants()?;
        self.process_deactivation_notices();
        self.flush_cache();
        self.generation += 1;
        Ok(())
    }

    pub fn breed_and_evaluate(&mut self) -> Result<Identity, EngineError> {
        let child = {
            let pop = self.ledger.active_view();
            breed_one(&*self.engine.propagator, &pop, &mut self.breeding)?
        };
        let id = Identity::new(self.addr.island, self.addr.rank, self.generation);
        let loss = match self.engine.objective.evaluate(&child.genes, &mut self.objective) {
            Ok(l) if !l.is_nan() => l,
            Ok(_) => {
                warn!("{id}: objective returned NaN, recording +inf");
                self.stats.objective_failures += 1;
                f64::INFINITY
            }
            Err(e) => {
                warn!("{id}: {e}, recording +inf");
                self.stats.objective_failures += 1;
                f64::INFINITY
            }
        };
        self.transport.pause_for_evaluation(self.generation);
        let ind = Individual::evaluated(child.genes, id, loss);
        self.ledger.record(ind.clone())?;
        self.stats.bred += 1;
        self.log(EventKind::Bred, id, loss, None);
        for peer in self.island_peers() {
            self.post(peer, Body::Result(ind.clone()))?;
        }
        Ok(id)
    }

    pub fn drain_intra_island(&mut self) -> Result<usize, EngineError> {
        let envelopes = self.transport.poll(Channel::IntraIsland);
        let n = envelopes.len();
        for env in envelopes {
            let Body::Result(ind) = env.body else { continue };
            let id = ind.id.ok_or(LedgerError::MissingIdentity)?;
            let loss = ind.loss_or_inf();
            let outcome = self.ledger.record(ind)?;
            self.stats.received += 1;
            self.log(EventKind::Received, id, loss, Some((env.sender.island, Some(env.sender.rank))));
            self.note_condemned(outcome, id, loss);
        }
        Ok(n)
    }

    /// Sends emigrants to every successor island. Returns how many
    /// (individual, island) pairs went out.
    pub fn emigrate(&mut self) -> Result<usize, EngineError> {
        let engine = self.engine;
        let cfg = &engine.config;
        let targets = cfg.successors(self.addr.island);
        let mut sent = 0;
        match cfg.exchange_mode {
            ExchangeMode::Migration => {
                let (island, rank) = (self.addr.island, self.addr.rank);
                let mut pool: Vec<Individual> = self
                    .ledger
                    .active_view()
                    .into_iter()
                    .filter(|r| r.id.is_some_and(|id| id.island == island && id.rank == rank))
                    .cloned()
                    .collect();
                let mut departed = Vec::new();
                for target in targets {
                    if pool.is_empty() {
                        break;
                    }
                    let chosen = self.choose_emigrants(&pool);
                    pool.retain(|r| !chosen.iter().any(|c| c.id == r.id));
                    for ind in chosen {
                        self.send_to_island(target, ind.clone(), ExchangeMode::Migration, None)?;
                        departed.push(ind);
                        sent += 1;
                    }
                }
                if departed.is_empty() {
                    self.stats.skipped_emigrations += 1;
                    debug!("{}: no eligible emigrants", self.addr);
                }
                for ind in departed {
                    let id = ind.id.expect("recorded");
                    for peer in self.island_peers() {
                        self.post(peer, Body::Deactivate(id))?;
                    }
                    self.ledger.deactivate(id);
                    self.log(EventKind::Deactivated, id, ind.loss_or_inf(), None);
                }
            }
            ExchangeMode::Pollination => {
                let seed = cfg.seed;
                for target in targets {
                    let pool: Vec<Individual> = self
                        .ledger
                        .active_view()
                        .into_iter()
                        .filter(|r| r.id.is_some_and(|id| id.island != target))
                        .cloned()
                        .collect();
                    if pool.is_empty() {
                        self.stats.skipped_emigrations += 1;
                        debug!("{}: no pollinators for island {target}", self.addr);
                        continue;
                    }
                    let size = self.transport.layout().island_size(target);
                    for ind in self.choose_emigrants(&pool) {
                        let coord = coordinator_rank(seed, ind.id.expect("recorded"), target, size);
                        self.send_to_island(target, ind, ExchangeMode::Pollination, Some(coord))?;
                        sent += 1;
                    }
                }
            }
        }
        Ok(sent)
    }

    pub fn receive_immigrants(&mut self) -> Result<usize, EngineError> {
        let envelopes = self.transport.poll(Channel::Emigrant);
        let mut batch = Vec::new();
        let mut pending_victims = 0;
        for env in envelopes {
            let Body::Emigrant {
                individual,
                mode,
                coordinator,
            } = env.body
            else {
                continue;
            };
            let id = individual.id.ok_or(LedgerError::MissingIdentity)?;
            if self.ledger.contains(&id) {
                if mode == ExchangeMode::Pollination {
                    self.stats.duplicates += 1;
                    continue;
                }
                return Err(LedgerError::DuplicateIdentity(id).into());
            }
            let loss = individual.loss_or_inf();
            let outcome = self.ledger.record(individual)?;
            self.stats.immigrated += 1;
            self.log(EventKind::Immigrated, id, loss, Some((env.sender.island, Some(env.sender.rank))));
            self.note_condemned(outcome, id, loss);
            batch.push(id);
            if mode == ExchangeMode::Pollination && coordinator == Some(self.addr.rank) && id.island != self.addr.island {
                pending_victims += 1;
            }
        }
        for _ in 0..pending_victims {
            match self.choose_victim(&batch) {
                Some((victim, loss)) => {
                    for peer in self.island_peers() {
                        self.post(peer, Body::Deactivate(victim))?;
                    }
                    self.ledger.deactivate(victim);
                    self.stats.victims += 1;
                    self.log(EventKind::Deactivated, victim, loss, None);
                }
                None => warn!("{}: no replacement candidate", self.addr),
            }
        }
        Ok(batch.len())
    }

    pub fn process_deactivation_notices(&mut self) -> usize {
        let envelopes = self.transport.poll(Channel::Deactivate);
        let n = envelopes.len();
        for env in envelopes {
            let Body::Deactivate(id) = env.body else { continue };
            let before = self.ledger.get(&id).map(|r| (r.active, r.loss_or_inf()));
            match self.ledger.deactivate(id) {
                Deactivation::Deactivated => {
                    if let Some((true, loss)) = before {
                        self.log(EventKind::Deactivated, id, loss, Some((env.sender.island, Some(env.sender.rank))));
                    }
                }
                Deactivation::Deferred => self.stats.deferred += 1,
            }
        }
        n
    }

    pub fn flush_cache(&mut self) -> usize {
        let before = self.ledger.replaced_cache().to_vec();
        let resolved = self.ledger.flush_cache();
        if resolved > 0 {
            for id in before {
                if !self.ledger.replaced_cache().contains(&id) {
                    let loss = self.ledger.get(&id).map_or(f64::INFINITY, Individual::loss_or_inf);
                    self.stats.resolved_late += 1;
                    self.log(EventKind::Deactivated, id, loss, None);
                }
            }
        }
        resolved
    }

    /// Consumes everything delivered so far. Returns whether this round
    /// posted new envelopes.
    pub fn settle_round(&mut self) -> Result<bool, EngineError> {
        let posts = self.stats.posts;
        self.drain_intra_island()?;
        self.receive_immigrants()?;
        self.process_deactivation_notices();
        self.flush_cache();
        Ok(self.stats.posts > posts)
    }

    /// Repeats settle rounds between barriers until no worker posts anything.
    pub fn finalize(&mut self) -> Result<(), EngineError> {
        self.transport.barrier()?;
        loop {
            let posted = self.settle_round()?;
            if !self.transport.barrier_with(posted)? {
                break;
            }
        }
        let pending = self.ledger.replaced_cache().len();
        if pending > 0 {
            return Err(EngineError::ResidualCache {
                worker: self.addr.to_string(),
                pending,
            });
        }
        Ok(())
    }

    fn choose_emigrants(&mut self, pool: &[Individual]) -> Vec<Individual> {
        let k = self.engine.config.n_migrants.min(pool.len());
        let chosen = match self.engine.config.emigration_policy {
            EmigrationPolicy::Best => select_best(pool, k),
            EmigrationPolicy::Random => select_uniform(pool, k, &mut self.exchange),
        };
        chosen.expect("k never exceeds the pool").into_iter().cloned().collect()
    }

    /// Picks the individual a fresh pollinator replaces, among the active
    /// individuals this worker owns. Arrivals of the current batch are only
    /// considered when nothing else is left.
    fn choose_victim(&mut self, batch: &[Identity]) -> Option<(Identity, f64)> {
        let seed = self.engine.config.seed;
        let (island, rank) = (self.addr.island, self.addr.rank);
        let size = self.transport.layout().island_size(island);
        let owned: Vec<&Individual> = self
            .ledger
            .active_view()
            .into_iter()
            .filter(|r| {
                let id = r.id.expect("recorded");
                let owner = if id.island == island {
                    id.rank
                } else {
                    coordinator_rank(seed, id, island, size)
                };
                owner == rank
            })
            .collect();
        let outside: Vec<&Individual> = owned
            .iter()
            .copied()
            .filter(|r| !batch.contains(&r.id.expect("recorded")))
            .collect();
        let pool = if outside.is_empty() { owned } else { outside };
        if pool.is_empty() {
            return None;
        }
        let victim = match self.engine.config.immigration_policy {
            ImmigrationPolicy::Worst => select_worst(&pool, 1),
            ImmigrationPolicy::Random => select_uniform(&pool, 1, &mut self.exchange),
        }
        .expect("pool is non-empty")[0];
        Some((victim.id.expect("recorded"), victim.loss_or_inf()))
    }

    fn send_to_island(
        &mut self,
        target: u32,
        mut ind: Individual,
        mode: ExchangeMode,
        coordinator: Option<u32>,
    ) -> Result<(), EngineError> {
        let id = ind.id.expect("recorded");
        let loss = ind.loss_or_inf();
        ind.active = true;
        ind.resident_island = None;
        let members: Vec<WorkerAddress> = self.transport.layout().island_members(target).collect();
        for dest in members {
            self.post(
                dest,
                Body::Emigrant {
                    individual: ind.clone(),
                    mode,
                    coordinator,
                },
            )?;
        }
        self.stats.emigrated += 1;
        self.log(EventKind::Emigrated, id, loss, Some((target, coordinator)));
        Ok(())
    }

    fn island_peers(&self) -> Vec<WorkerAddress> {
        self.transport
            .layout()
            .island_members(self.addr.island)
            .filter(|a| *a != self.addr)
            .collect()
    }

    fn post(&mut self, dest: WorkerAddress, body: Body) -> Result<(), EngineError> {
        self.stats.posts += 1;
        self.transport.post(dest, Envelope { sender: self.addr, body })?;
        Ok(())
    }

    fn note_condemned(&mut self, outcome: Recorded, id: Identity, loss: f64) {
        if outcome == Recorded::Condemned {
            self.stats.resolved_late += 1;
            self.log(EventKind::Deactivated, id, loss, None);
        }
    }

    fn log(&mut self, kind: EventKind, id: Identity, loss: f64, peer: Option<(u32, Option<u32>)>) {
        let mut e = Event::new(self.transport.now(), self.addr, kind, id, loss);
        if let Some((island, rank)) = peer {
            e = e.with_peer(island, rank);
        }
        self.events.push(e);
    }
}
