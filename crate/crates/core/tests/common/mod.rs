#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use propulsion::benchmarks::Benchmark;
use propulsion::engine::{
    EmigrationPolicy, Engine, EventKind, ExchangeMode, ImmigrationPolicy, IslandConfig, RunResult,
};
use propulsion::propagators::PropagatorConfig;
use propulsion::rng::hash_keys;
use propulsion::space::{GeneValue, Identity, Individual, SearchSpace};
use propulsion::transport::sim::RandomDelays;
use propulsion::transport::{Body, Channel, Envelope, Transport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Row = (Identity, bool, u64);

/// `(identity, active, loss bits)` of every record, sorted.
pub fn ledger_set(records: &[Individual]) -> Vec<Row> {
    let mut rows: Vec<Row> = records
        .iter()
        .map(|r| (r.id.expect("recorded"), r.active, r.loss_or_inf().to_bits()))
        .collect();
    rows.sort();
    rows
}

pub fn check_convergence(result: &RunResult) -> Result<(), String> {
    let mut per_island: BTreeMap<u32, Vec<Row>> = BTreeMap::new();
    for w in &result.workers {
        let rows = ledger_set(w.ledger.records());
        match per_island.get(&w.address.island) {
            None => {
                per_island.insert(w.address.island, rows);
            }
            Some(first) if *first != rows => {
                return Err(format!("worker {} disagrees with its island", w.address));
            }
            Some(_) => {}
        }
        if !w.ledger.replaced_cache().is_empty() {
            return Err(format!("worker {} kept a non-empty cache", w.address));
        }
    }
    Ok(())
}

pub fn check_conservation(result: &RunResult, config: &IslandConfig) -> Result<(), String> {
    let want: u64 = config.sizes().iter().map(|&s| u64::from(s) * config.generations).sum();
    let ids: BTreeSet<Identity> = result
        .ledgers()
        .flat_map(|l| l.records().iter().map(|r| r.id.expect("recorded")))
        .collect();
    if ids.len() as u64 != want {
        return Err(format!("{} distinct evaluations, expected {want}", ids.len()));
    }
    Ok(())
}

pub fn check_loss_immutability(result: &RunResult) -> Result<(), String> {
    let mut seen: HashMap<Identity, u64> = HashMap::new();
    for l in result.ledgers() {
        for r in l.records() {
            let bits = r.loss_or_inf().to_bits();
            if *seen.entry(r.id.expect("recorded")).or_insert(bits) != bits {
                return Err(format!("loss of {} differs between ledgers", r.id.unwrap()));
            }
        }
    }
    Ok(())
}

/// Ledger of the first worker of each island.
fn island_ledgers(result: &RunResult) -> BTreeMap<u32, &[Individual]> {
    let mut out = BTreeMap::new();
    for w in &result.workers {
        out.entry(w.address.island).or_insert(w.ledger.records());
    }
    out
}

pub fn check_pollination_balance(result: &RunResult, config: &IslandConfig) -> Result<(), String> {
    for (island, records) in island_ledgers(result) {
        let active = records.iter().filter(|r| r.active).count() as u64;
        let bred = u64::from(config.sizes()[island as usize]) * config.generations;
        if active != bred {
            return Err(format!("island {island}: {active} active, {bred} evaluated"));
        }
    }
    Ok(())
}

pub fn check_migration_exclusivity(result: &RunResult) -> Result<(), String> {
    let mut active_on: HashMap<Identity, u32> = HashMap::new();
    let ledgers = island_ledgers(result);
    for (&island, records) in &ledgers {
        for r in records.iter().filter(|r| r.active) {
            if let Some(other) = active_on.insert(r.id.unwrap(), island) {
                return Err(format!("{} active on islands {other} and {island}", r.id.unwrap()));
            }
        }
    }
    for w in &result.workers {
        for e in w.events.iter().filter(|e| e.kind == EventKind::Emigrated) {
            let id = e.identity();
            let source = ledgers[&id.island];
            if source.iter().any(|r| r.id == Some(id) && r.active) {
                return Err(format!("emigrated {id} still active on island {}", id.island));
            }
        }
    }
    Ok(())
}

/// Per worker, the best loss over the ledger never rises as events accrue.
pub fn check_monotone_incumbent(result: &RunResult) -> Result<(), String> {
    for w in &result.workers {
        let mut best = f64::INFINITY;
        let mut last_time = f64::NEG_INFINITY;
        for e in &w.events {
            if e.time < last_time {
                return Err(format!("worker {}: event times go backwards", w.address));
            }
            last_time = e.time;
            if matches!(e.kind, EventKind::Bred | EventKind::Received | EventKind::Immigrated) {
                best = best.min(e.loss);
            }
        }
        let ledger_best = w.ledger.best().map_or(f64::INFINITY, |b| b.loss_or_inf());
        if ledger_best.to_bits() != best.to_bits() {
            return Err(format!("worker {}: incumbent {best} vs ledger {ledger_best}", w.address));
        }
    }
    Ok(())
}

/// Every invariant that holds for any finished run.
pub fn check_all(result: &RunResult, config: &IslandConfig) -> Result<(), String> {
    check_convergence(result)?;
    check_conservation(result, config)?;
    check_loss_immutability(result)?;
    check_monotone_incumbent(result)?;
    match config.exchange_mode {
        ExchangeMode::Pollination => check_pollination_balance(result, config),
        ExchangeMode::Migration => check_migration_exclusivity(result),
    }
}

pub fn ledger_dumps(result: &RunResult, space: &SearchSpace) -> Vec<Vec<u8>> {
    result
        .workers
        .iter()
        .map(|w| {
            let mut buf = Vec::new();
            w.ledger.write_csv(space, &mut buf).expect("in-memory write");
            buf
        })
        .collect()
}

pub struct Scenario {
    pub benchmark: Benchmark,
    pub config: IslandConfig,
    pub delays: RandomDelays,
}

impl Scenario {
    pub fn engine(&self) -> Engine {
        let b = self.benchmark;
        Engine::new(b.spec().space(), Arc::new(b), &PropagatorConfig::default(), self.config.clone())
            .expect("valid scenario")
    }
}

/// A random layout, exchange setup and delay schedule drawn from `seed`.
pub fn random_scenario(seed: u64, mode: ExchangeMode) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4u32);
    let sizes: Vec<u32> = (0..n).map(|_| rng.random_range(1..=4)).collect();
    let ring = n > 2 && rng.random_bool(0.3);
    let config = IslandConfig {
        n_islands: n,
        island_sizes: sizes,
        generations: rng.random_range(12..=40),
        exchange_mode: mode,
        exchange_probability: rng.random_range(0.2..=1.0),
        n_migrants: rng.random_range(1..=3),
        topology: ring.then(|| (0..n).map(|i| vec![(i + 1) % n]).collect()),
        emigration_policy: if rng.random_bool(0.5) { EmigrationPolicy::Best } else { EmigrationPolicy::Random },
        immigration_policy: if rng.random_bool(0.5) { ImmigrationPolicy::Worst } else { ImmigrationPolicy::Random },
        seed: rng.random(),
    };
    let benchmarks = [Benchmark::Sphere, Benchmark::Rastrigin, Benchmark::Quartic, Benchmark::Step];
    let max_latency = rng.random_range(0.0..6.0);
    Scenario {
        benchmark: benchmarks[rng.random_range(0..benchmarks.len())],
        config,
        delays: RandomDelays {
            seed: rng.random(),
            evaluation: (0.25, rng.random_range(0.5..4.0)),
            latency: (0.0, max_latency),
        },
    }
}

// Transport contract harness. Every worker derives the full schedule from the
// seed, so each can check its own receipts without talking to the others.

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag {
    pub sender: u32,
    pub round: u32,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Post {
    pub dest: u32,
    pub channel: Channel,
    pub tag: Tag,
    /// Poll every channel right after this post.
    pub poll_after: bool,
    /// Pause length in milliseconds (or virtual units) after this post.
    pub pause: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct ContractPlan {
    pub seed: u64,
    pub world: u32,
    pub rounds: u32,
    /// Upper bound on posts per worker per round.
    pub per_round: u32,
}

impl ContractPlan {
    pub fn random(seed: u64, max_world: u32) -> Self {
        Self::new(seed, 1 + (hash_keys(seed, &[1]) % u64::from(max_world)) as u32)
    }

    pub fn new(seed: u64, world: u32) -> Self {
        let rounds = 1 + (hash_keys(seed, &[2]) % 4) as u32;
        let per_round = (500 / (world * rounds)).min(40);
        Self { seed, world, rounds, per_round }
    }

    pub fn posts(&self, sender: u32, round: u32) -> Vec<Post> {
        let h = |keys: &[u64]| {
            let mut all = vec![u64::from(sender), u64::from(round)];
            all.extend_from_slice(keys);
            hash_keys(self.seed, &all)
        };
        let count = h(&[0]) % u64::from(self.per_round + 1);
        let first = (0..round).map(|r| self.posts_in(sender, r)).sum::<u64>();
        (0..count)
            .map(|i| Post {
                dest: (h(&[1, i]) % u64::from(self.world)) as u32,
                channel: Channel::ALL[(h(&[2, i]) % 3) as usize],
                tag: Tag { sender, round, seq: first + i },
                poll_after: h(&[3, i]) % 4 == 0,
                pause: if h(&[4, i]) % 8 == 0 { (h(&[5, i]) % 3) as u32 + 1 } else { 0 },
            })
            .collect()
    }

    fn posts_in(&self, sender: u32, round: u32) -> u64 {
        hash_keys(self.seed, &[u64::from(sender), u64::from(round), 0]) % u64::from(self.per_round + 1)
    }

    pub fn total(&self) -> u64 {
        (0..self.world).flat_map(|s| (0..self.rounds).map(move |r| (s, r))).map(|(s, r)| self.posts_in(s, r)).sum()
    }

    /// Tags addressed to `me` posted in rounds `..=round`.
    fn expected(&self, me: u32, round: u32) -> BTreeSet<(Channel, Tag)> {
        (0..self.world)
            .flat_map(|s| (0..=round).flat_map(move |r| self.posts(s, r)))
            .filter(|p| p.dest == me)
            .map(|p| (p.channel, p.tag))
            .collect()
    }
}

pub fn envelope_for(post: &Post, transport_sender: propulsion::transport::WorkerAddress) -> Envelope {
    let id = Identity::new(post.tag.sender, post.tag.round, post.tag.seq);
    let ind = || Individual::evaluated(vec![GeneValue::Real(post.tag.seq as f64 * 0.5)], id, post.tag.seq as f64);
    let body = match post.channel {
        Channel::IntraIsland => Body::Result(ind()),
        Channel::Emigrant => Body::Emigrant {
            individual: ind(),
            mode: ExchangeMode::Pollination,
            coordinator: Some(post.tag.sender),
        },
        Channel::Deactivate => Body::Deactivate(id),
    };
    Envelope { sender: transport_sender, body }
}

fn tag_of(env: &Envelope) -> Result<Tag, String> {
    let id = match &env.body {
        Body::Result(i) | Body::Emigrant { individual: i, .. } => i.id.ok_or("missing identity")?,
        Body::Deactivate(id) => *id,
    };
    if id.island != env.sender.global_id {
        return Err(format!("envelope from {} carries sender {}", env.sender.global_id, id.island));
    }
    Ok(Tag { sender: id.island, round: id.rank, seq: id.generation })
}

struct Receipts {
    got: BTreeSet<(Channel, Tag)>,
    last_seq: HashMap<(u32, Channel), u64>,
}

impl Receipts {
    fn drain<T: Transport>(&mut self, t: &mut T) -> Result<(), String> {
        for ch in Channel::ALL {
            for env in t.poll(ch) {
                if env.channel() != ch {
                    return Err(format!("{:?} envelope polled from {ch:?}", env.channel()));
                }
                let tag = tag_of(&env)?;
                if !self.got.insert((ch, tag)) {
                    return Err(format!("{tag:?} on {ch:?} delivered twice"));
                }
                if let Some(prev) = self.last_seq.insert((tag.sender, ch), tag.seq) {
                    if prev > tag.seq {
                        return Err(format!("{ch:?} from {}: seq {} after {prev}", tag.sender, tag.seq));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs one worker's share of `plan`; `pause` stalls the worker for a
/// backend-specific duration. Returns the number of envelopes received.
pub fn contract_worker<T: Transport>(
    t: &mut T,
    plan: &ContractPlan,
    mut pause: impl FnMut(&mut T, u32),
) -> Result<usize, String> {
    let me = t.address().global_id;
    let mut receipts = Receipts { got: BTreeSet::new(), last_seq: HashMap::new() };
    for round in 0..plan.rounds {
        for post in plan.posts(me, round) {
            let dest = t.layout().by_global_id(post.dest).ok_or("destination outside layout")?;
            let env = envelope_for(&post, t.address());
            t.post(dest, env).map_err(|e| e.to_string())?;
            if post.poll_after {
                receipts.drain(t)?;
            }
            if post.pause > 0 {
                pause(t, post.pause);
            }
        }
        t.barrier().map_err(|e| e.to_string())?;
        receipts.drain(t)?;
        let due = plan.expected(me, round);
        if let Some(missing) = due.difference(&receipts.got).next() {
            return Err(format!("round {round}: {missing:?} not delivered by barrier exit"));
        }
        let allowed = plan.expected(me, (round + 1).min(plan.rounds - 1));
        if let Some(extra) = receipts.got.difference(&allowed).next() {
            return Err(format!("round {round}: unexpected {extra:?}"));
        }
    }
    t.barrier().map_err(|e| e.to_string())?;
    receipts.drain(t)?;
    if receipts.got != plan.expected(me, plan.rounds - 1) {
        return Err("final receipts differ from the plan".into());
    }
    Ok(receipts.got.len())
}
