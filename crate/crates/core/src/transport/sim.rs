//! In-process backend with a virtual clock.
//!
//! Each worker runs on its own thread, but only one holds the baton at a
//! time. A worker gives the baton back when it charges an evaluation delay or
//! enters a barrier; the scheduler then resumes the worker with the earliest
//! wake-up time (ties by global id). Message latencies and evaluation delays
//! come from a [`DelaySchedule`], so a seed plus a schedule fully determines
//! the interleaving and the delivery order.

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;

use crate::rng;

use super::{Channel, Envelope, Layout, Transport, TransportError, WorkerAddress};

/// Virtual durations used by the simulator.
pub trait DelaySchedule: Send + Sync {
    /// Duration of worker `worker`'s evaluation in `generation`.
    fn evaluation_delay(&self, worker: WorkerAddress, generation: u64) -> f64;

    /// Latency of the `nth` envelope posted from `from` to `to` on `channel`.
    fn latency(&self, from: WorkerAddress, to: WorkerAddress, channel: Channel, nth: u64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedDelays {
    pub evaluation: f64,
    pub latency: f64,
}

impl Default for FixedDelays {
    fn default() -> Self {
        Self {
            evaluation: 1.0,
            latency: 0.0,
        }
    }
}

impl DelaySchedule for FixedDelays {
    fn evaluation_delay(&self, _: WorkerAddress, _: u64) -> f64 {
        self.evaluation
    }

    fn latency(&self, _: WorkerAddress, _: WorkerAddress, _: Channel, _: u64) -> f64 {
        self.latency
    }
}

/// Uniform random delays, a pure function of the seed and the event key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomDelays {
    pub seed: u64,
    pub evaluation: (f64, f64),
    pub latency: (f64, f64),
}

impl DelaySchedule for RandomDelays {
    fn evaluation_delay(&self, worker: WorkerAddress, generation: u64) -> f64 {
        let u = rng::unit(self.seed, &[0, u64::from(worker.global_id), generation]);
        self.evaluation.0 + u * (self.evaluation.1 - self.evaluation.0)
    }

    fn latency(&self, from: WorkerAddress, to: WorkerAddress, channel: Channel, nth: u64) -> f64 {
        let keys = [
            1,
            u64::from(from.global_id),
            u64::from(to.global_id),
            channel.index() as u64,
            nth,
        ];
        let u = rng::unit(self.seed, &keys);
        self.latency.0 + u * (self.latency.1 - self.latency.0)
    }
}

/// Schedule built from two closures, for crafted scenarios.
pub struct DelayFn<E, L> {
    pub evaluation: E,
    pub latency: L,
}

impl<E, L> DelaySchedule for DelayFn<E, L>
where
    E: Fn(WorkerAddress, u64) -> f64 + Send + Sync,
    L: Fn(WorkerAddress, WorkerAddress, Channel, u64) -> f64 + Send + Sync,
{
    fn evaluation_delay(&self, worker: WorkerAddress, generation: u64) -> f64 {
        (self.evaluation)(worker, generation)
    }

    fn latency(&self, from: WorkerAddress, to: WorkerAddress, channel: Channel, nth: u64) -> f64 {
        (self.latency)(from, to, channel, nth)
    }
}

/// Fault injection: envelopes for which this returns true are silently lost.
pub type DropFilter = Arc<dyn Fn(WorkerAddress, &Envelope) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct SimOptions {
    pub delays: Arc<dyn DelaySchedule>,
    /// Virtual seconds a worker may wait in a barrier. `None` waits until
    /// the barrier completes or can provably never complete.
    pub barrier_timeout: Option<f64>,
    pub drop_filter: Option<DropFilter>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            delays: Arc::new(FixedDelays::default()),
            barrier_timeout: None,
            drop_filter: None,
        }
    }
}

impl SimOptions {
    pub fn with_delays(delays: impl DelaySchedule + 'static) -> Self {
        Self {
            delays: Arc::new(delays),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Waiting(f64),
    Running,
    AtBarrier { since: f64, flag: bool },
    Done,
}

struct Pending {
    deliver_at: f64,
    seq: u64,
    envelope: Envelope,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub posted: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Envelopes still queued when the run ended.
    pub undelivered: u64,
}

struct Core {
    now: f64,
    states: Vec<State>,
    barrier_results: Vec<Option<Result<bool, TransportError>>>,
    running: Option<usize>,
    queues: Vec<[Vec<Pending>; 3]>,
    streams: HashMap<(u32, u32, Channel), (f64, u64)>,
    seq: u64,
    finish: Vec<f64>,
    stats: SimStats,
}

struct Shared {
    core: Mutex<Core>,
    turn: Condvar,
    options: SimOptions,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Core> {
        self.core.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// A simulated network of `layout.world_size()` workers.
pub struct SimNetwork {
    layout: Layout,
    shared: Arc<Shared>,
}

pub struct SimReport<R> {
    /// Worker results in global-id order.
    pub results: Vec<R>,
    /// Virtual time at which the last worker returned.
    pub makespan: f64,
    /// Per-worker virtual finish times.
    pub finish_times: Vec<f64>,
    pub stats: SimStats,
}

impl SimNetwork {
    pub fn new(layout: Layout, options: SimOptions) -> Self {
        let n = layout.world_size();
        let core = Core {
            now: 0.0,
            states: vec![State::Waiting(0.0); n],
            barrier_results: vec![None; n],
            running: None,
            queues: (0..n).map(|_| Default::default()).collect(),
            streams: HashMap::new(),
            seq: 0,
            finish: vec![0.0; n],
            stats: SimStats::default(),
        };
        Self {
            layout,
            shared: Arc::new(Shared {
                core: Mutex::new(core),
                turn: Condvar::new(),
                options,
            }),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Runs `worker` once per endpoint and drives the schedule to completion.
    pub fn run<R, F>(self, worker: F) -> SimReport<R>
    where
        R: Send,
        F: Fn(SimEndpoint) -> R + Sync,
    {
        let n = self.layout.world_size();
        let results = thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .map(|gid| {
                    let endpoint = SimEndpoint {
                        addr: self.layout.by_global_id(gid as u32).expect("id in range"),
                        layout: self.layout.clone(),
                        shared: self.shared.clone(),
                        closed: false,
                    };
                    let worker = &worker;
                    scope.spawn(move || {
                        let guard = DoneGuard {
                            shared: endpoint.shared.clone(),
                            me: gid,
                        };
                        drop(endpoint.wait_turn(endpoint.shared.lock()));
                        let out = worker(endpoint);
                        drop(guard);
                        out
                    })
                })
                .collect();
            self.schedule();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                .collect::<Vec<R>>()
        });
        let core = self.shared.lock();
        let mut stats = core.stats;
        stats.undelivered = core.queues.iter().flatten().map(|q| q.len() as u64).sum();
        SimReport {
            results,
            makespan: core.finish.iter().copied().fold(0.0, f64::max),
            finish_times: core.finish.clone(),
            stats,
        }
    }

    fn schedule(&self) {
        let timeout = self.shared.options.barrier_timeout;
        let mut core = self.shared.lock();
        loop {
            while core.running.is_some() {
                core = self.shared.turn.wait(core).unwrap_or_else(|e| e.into_inner());
            }
            if core.states.iter().all(|s| *s == State::Done) {
                return;
            }
            if core.states.iter().all(|s| matches!(s, State::AtBarrier { .. })) {
                release_barrier(&mut core);
                continue;
            }
            let next = core
                .states
                .iter()
                .enumerate()
                .filter_map(|(i, s)| match s {
                    State::Waiting(t) => Some((*t, i)),
                    _ => None,
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let deadline = timeout.and_then(|limit| {
                core.states
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| match s {
                        State::AtBarrier { since, .. } => Some((since + limit, i)),
                        _ => None,
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            });
            match (next, deadline) {
                (Some((t, _)), Some((d, i))) if d < t => time_out(&mut core, i, d),
                (None, Some((d, i))) => time_out(&mut core, i, d),
                (Some((t, i)), _) => {
                    core.now = core.now.max(t);
                    core.states[i] = State::Running;
                    core.running = Some(i);
                    self.shared.turn.notify_all();
                }
                (None, None) => {
                    // Blocked in a barrier that can never complete.
                    let now = core.now;
                    let stuck: Vec<usize> = (0..core.states.len())
                        .filter(|&i| matches!(core.states[i], State::AtBarrier { .. }))
                        .collect();
                    for i in stuck {
                        time_out(&mut core, i, now);
                    }
                }
            }
        }
    }
}

fn time_out(core: &mut Core, worker: usize, at: f64) {
    core.now = core.now.max(at);
    core.barrier_results[worker] = Some(Err(TransportError::TimeoutExceeded));
    core.states[worker] = State::Waiting(core.now);
}

fn release_barrier(core: &mut Core) {
    let mut flag = false;
    let mut exit = core.now;
    for s in &core.states {
        if let State::AtBarrier { since, flag: f } = *s {
            flag |= f;
            exit = exit.max(since);
        }
    }
    let in_flight = core
        .queues
        .iter()
        .flatten()
        .flatten()
        .map(|p| p.deliver_at)
        .fold(exit, f64::max);
    core.now = in_flight;
    for i in 0..core.states.len() {
        core.states[i] = State::Waiting(in_flight);
        core.barrier_results[i] = Some(Ok(flag));
    }
}

struct DoneGuard {
    shared: Arc<Shared>,
    me: usize,
}

impl Drop for DoneGuard {
    fn drop(&mut self) {
        let mut core = self.shared.lock();
        core.states[self.me] = State::Done;
        core.finish[self.me] = core.now;
        if core.running == Some(self.me) {
            core.running = None;
        }
        self.shared.turn.notify_all();
    }
}

/// One worker's view of a [`SimNetwork`].
pub struct SimEndpoint {
    addr: WorkerAddress,
    layout: Layout,
    shared: Arc<Shared>,
    closed: bool,
}

impl SimEndpoint {
    fn me(&self) -> usize {
        self.addr.global_id as usize
    }

    fn wait_turn<'a>(&self, mut core: MutexGuard<'a, Core>) -> MutexGuard<'a, Core> {
        while core.running != Some(self.me()) {
            core = self.shared.turn.wait(core).unwrap_or_else(|e| e.into_inner());
        }
        core
    }

    /// Hands the baton back and waits to be resumed.
    fn block<'a>(&self, mut core: MutexGuard<'a, Core>, state: State) -> MutexGuard<'a, Core> {
        core.states[self.me()] = state;
        core.running = None;
        self.shared.turn.notify_all();
        self.wait_turn(core)
    }

    /// Advances this worker's virtual time by `duration`.
    pub fn sleep(&mut self, duration: f64) {
        let core = self.shared.lock();
        let wake = core.now + duration.max(0.0);
        drop(self.block(core, State::Waiting(wake)));
    }

    /// Number of envelopes waiting for this worker that are not yet deliverable.
    pub fn in_flight(&self) -> usize {
        let core = self.shared.lock();
        core.queues[self.me()]
            .iter()
            .flatten()
            .filter(|p| p.deliver_at > core.now)
            .count()
    }
}

impl Transport for SimEndpoint {
    fn address(&self) -> WorkerAddress {
        self.addr
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn post(&mut self, dest: WorkerAddress, envelope: Envelope) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::TransportClosed);
        }
        if !self.layout.contains(dest) {
            return Err(TransportError::UnknownDestination(dest.to_string()));
        }
        let options = &self.shared.options;
        let mut core = self.shared.lock();
        core.stats.posted += 1;
        if options.drop_filter.as_ref().is_some_and(|f| f(dest, &envelope)) {
            core.stats.dropped += 1;
            return Ok(());
        }
        let channel = envelope.channel();
        let key = (self.addr.global_id, dest.global_id, channel);
        let (last, nth) = core.streams.get(&key).copied().unwrap_or((f64::NEG_INFINITY, 0));
        let latency = options.delays.latency(self.addr, dest, channel, nth).max(0.0);
        let deliver_at = (core.now + latency).max(last);
        core.streams.insert(key, (deliver_at, nth + 1));
        core.seq += 1;
        let seq = core.seq;
        core.queues[dest.global_id as usize][channel.index()].push(Pending {
            deliver_at,
            seq,
            envelope,
        });
        Ok(())
    }

    fn poll(&mut self, channel: Channel) -> Vec<Envelope> {
        let mut core = self.shared.lock();
        let now = core.now;
        let queue = &mut core.queues[self.me()][channel.index()];
        let (mut ready, waiting): (Vec<Pending>, Vec<Pending>) =
            queue.drain(..).partition(|p| p.deliver_at <= now);
        *queue = waiting;
        ready.sort_by(|a, b| a.deliver_at.total_cmp(&b.deliver_at).then(a.seq.cmp(&b.seq)));
        core.stats.delivered += ready.len() as u64;
        ready.into_iter().map(|p| p.envelope).collect()
    }

    fn barrier_with(&mut self, flag: bool) -> Result<bool, TransportError> {
        if self.closed {
            return Err(TransportError::TransportClosed);
        }
        let core = self.shared.lock();
        let since = core.now;
        let mut core = self.block(core, State::AtBarrier { since, flag });
        core.barrier_results[self.me()]
            .take()
            .expect("barrier result is set on release")
    }

    fn now(&self) -> f64 {
        self.shared.lock().now
    }

    fn pause_for_evaluation(&mut self, generation: u64) {
        let delay = self.shared.options.delays.evaluation_delay(self.addr, generation);
        self.sleep(delay);
    }

    fn shutdown(&mut self) {
        self.closed = true;
    }
}
