//! Asynchronous point-to-point messaging between workers.
//!
//! Every worker owns one endpoint. `post` never waits for the receiver and
//! `poll` never blocks; delivery is reliable and FIFO per
//! `(sender, destination, channel)`. Two backends implement [`Transport`]:
//! [`sim`] runs all workers in one process under a virtual clock with a
//! deterministic schedule, [`mesh`] connects processes over a full TCP mesh.

pub mod mesh;
pub mod sim;
pub mod wire;

use std::fmt;

use thiserror::Error;

use crate::engine::ExchangeMode;
use crate::space::{Identity, Individual};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("no worker with address {0}")]
    UnknownDestination(String),
    #[error("transport is closed")]
    TransportClosed,
    #[error("barrier timed out")]
    TimeoutExceeded,
    #[error("transport I/O error: {0}")]
    Io(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// Position of a worker in the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorkerAddress {
    pub island: u32,
    pub rank: u32,
    pub global_id: u32,
}

impl fmt::Display for WorkerAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.island, self.rank)
    }
}

/// Island-size table; global ids number workers island by island.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    sizes: Vec<u32>,
    offsets: Vec<u32>,
}

impl Layout {
    pub fn new(sizes: Vec<u32>) -> Self {
        assert!(sizes.iter().all(|&s| s > 0), "islands must be non-empty");
        let offsets = sizes
            .iter()
            .scan(0u32, |acc, &s| {
                let start = *acc;
                *acc += s;
                Some(start)
            })
            .collect();
        Self { sizes, offsets }
    }

    pub fn islands(&self) -> usize {
        self.sizes.len()
    }

    pub fn island_sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn island_size(&self, island: u32) -> u32 {
        self.sizes[island as usize]
    }

    pub fn world_size(&self) -> usize {
        self.sizes.iter().map(|&s| s as usize).sum()
    }

    pub fn address(&self, island: u32, rank: u32) -> Option<WorkerAddress> {
        let size = *self.sizes.get(island as usize)?;
        (rank < size).then(|| WorkerAddress {
            island,
            rank,
            global_id: self.offsets[island as usize] + rank,
        })
    }

    pub fn by_global_id(&self, global_id: u32) -> Option<WorkerAddress> {
        let island = self.offsets.partition_point(|&o| o <= global_id).checked_sub(1)?;
        self.address(island as u32, global_id - self.offsets[island])
    }

    pub fn contains(&self, addr: WorkerAddress) -> bool {
        self.address(addr.island, addr.rank) == Some(addr)
    }

    pub fn island_members(&self, island: u32) -> impl Iterator<Item = WorkerAddress> + '_ {
        (0..self.island_size(island)).map(move |r| self.address(island, r).expect("rank in range"))
    }

    pub fn all(&self) -> impl Iterator<Item = WorkerAddress> + '_ {
        (0..self.world_size() as u32).map(move |g| self.by_global_id(g).expect("id in range"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    IntraIsland,
    Emigrant,
    Deactivate,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::IntraIsland, Channel::Emigrant, Channel::Deactivate];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    /// An individual bred and evaluated by an island peer.
    Result(Individual),
    /// An individual sent to another island. Pollination copies name the
    /// target-island rank responsible for choosing the replaced individual.
    Emigrant {
        individual: Individual,
        mode: ExchangeMode,
        coordinator: Option<u32>,
    },
    Deactivate(Identity),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub sender: WorkerAddress,
    pub body: Body,
}

impl Envelope {
    pub fn channel(&self) -> Channel {
        match self.body {
            Body::Result(_) => Channel::IntraIsland,
            Body::Emigrant { .. } => Channel::Emigrant,
            Body::Deactivate(_) => Channel::Deactivate,
        }
    }
}

/// A worker's endpoint.
pub trait Transport {
    fn address(&self) -> WorkerAddress;

    fn layout(&self) -> &Layout;

    /// Queues `envelope` for `dest` and returns immediately.
    fn post(&mut self, dest: WorkerAddress, envelope: Envelope) -> Result<(), TransportError>;

    /// Every delivered, not yet consumed envelope on `channel`. Never blocks.
    fn poll(&mut self, channel: Channel) -> Vec<Envelope>;

    /// Returns once every worker has entered the barrier. Envelopes posted
    /// before any worker entered are delivered by the time it returns. The
    /// result is the OR of all workers' `flag`s.
    fn barrier_with(&mut self, flag: bool) -> Result<bool, TransportError>;

    fn barrier(&mut self) -> Result<(), TransportError> {
        self.barrier_with(false).map(|_| ())
    }

    /// Seconds since the start of the run, virtual or wall-clock.
    fn now(&self) -> f64;

    /// Hook called after each evaluation; virtual-time backends charge the
    /// evaluation's duration here.
    fn pause_for_evaluation(&mut self, _generation: u64) {}

    fn shutdown(&mut self);
}
