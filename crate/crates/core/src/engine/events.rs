use std::io;

use serde::{Deserialize, Serialize};

use crate::space::Identity;
use crate::transport::WorkerAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Bred,
    /// Recorded from an island peer.
    Received,
    Emigrated,
    Immigrated,
    Deactivated,
}

/// One row of a worker's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub island: u32,
    pub rank: u32,
    pub kind: EventKind,
    pub origin_island: u32,
    pub origin_rank: u32,
    pub generation: u64,
    pub loss: f64,
    pub peer_island: Option<u32>,
    pub peer_rank: Option<u32>,
}

impl Event {
    pub fn new(time: f64, worker: WorkerAddress, kind: EventKind, id: Identity, loss: f64) -> Self {
        Self {
            time,
            island: worker.island,
            rank: worker.rank,
            kind,
            origin_island: id.island,
            origin_rank: id.rank,
            generation: id.generation,
            loss,
            peer_island: None,
            peer_rank: None,
        }
    }

    pub fn with_peer(mut self, island: u32, rank: Option<u32>) -> Self {
        self.peer_island = Some(island);
        self.peer_rank = rank;
        self
    }

    pub fn identity(&self) -> Identity {
        Identity::new(self.origin_island, self.origin_rank, self.generation)
    }
}

pub fn write_events<W: io::Write>(events: &[Event], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(e)?;
    }
    if events.is_empty() {
        w.write_record([
            "time", "island", "rank", "kind", "origin_island", "origin_rank", "generation", "loss", "peer_island",
            "peer_rank",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: io::Read>(input: R) -> csv::Result<Vec<Event>> {
    csv::Reader::from_reader(input).deserialize().collect()
}
