//! Plot-ready series from a finished run directory.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::engine::events::read_events;
use crate::engine::output::{events_path, ledger_path, read_ledger, worker_ids, Summary};
use crate::engine::{Event, EventKind};
use crate::space::Identity;

use super::config::RunConfig;

/// Name of the config copy `run` leaves in the output directory.
pub const CONFIG_COPY: &str = "run.toml";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub time: f64,
    pub island: u32,
    pub rank: u32,
    pub kind: EventKind,
    pub loss: f64,
    pub best_so_far: f64,
    pub median_active_loss: Option<f64>,
    pub incumbent_distance: Option<f64>,
}

/// Every worker's events ordered by time, then worker id, then log order.
pub fn merge(logs: Vec<Vec<Event>>) -> Vec<Event> {
    let mut all: Vec<(f64, usize, usize, Event)> = logs
        .into_iter()
        .enumerate()
        .flat_map(|(w, log)| log.into_iter().enumerate().map(move |(i, e)| (e.time, w, i, e)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all.into_iter().map(|(_, _, _, e)| e).collect()
}

/// Multiset of losses with an order-preserving integer key.
#[derive(Default)]
struct Losses {
    counts: BTreeMap<i64, usize>,
    len: usize,
}

impl Losses {
    fn key(v: f64) -> i64 {
        let bits = v.to_bits() as i64;
        bits ^ (((bits >> 63) as u64) >> 1) as i64
    }

    fn value(k: i64) -> f64 {
        f64::from_bits((k ^ (((k >> 63) as u64) >> 1) as i64) as u64)
    }

    fn insert(&mut self, v: f64) {
        *self.counts.entry(Self::key(v)).or_insert(0) += 1;
        self.len += 1;
    }

    fn remove(&mut self, v: f64) {
        let k = Self::key(v);
        if let Some(c) = self.counts.get_mut(&k) {
            *c -= 1;
            self.len -= 1;
            if *c == 0 {
                self.counts.remove(&k);
            }
        }
    }

    fn nth(&self, mut n: usize) -> f64 {
        for (&k, &c) in &self.counts {
            if n < c {
                return Self::value(k);
            }
            n -= c;
        }
        unreachable!("index within multiset")
    }

    fn median(&self) -> Option<f64> {
        match self.len {
            0 => None,
            n if n % 2 == 1 => Some(self.nth(n / 2)),
            n => Some(0.5 * (self.nth(n / 2 - 1) + self.nth(n / 2))),
        }
    }
}

/// Replays `events` into per-event series. The active population is tracked
/// per island; `positions` maps identities to gene coordinates for the
/// distance column.
pub fn series(
    events: &[Event],
    positions: &HashMap<Identity, Vec<f64>>,
    optimum: Option<&[f64]>,
) -> Vec<SeriesRow> {
    let mut active: HashMap<(u32, Identity), f64> = HashMap::new();
    let mut losses = Losses::default();
    let mut best: Option<(f64, Identity)> = None;
    let mut rows = Vec::with_capacity(events.len());
    for e in events {
        let id = e.identity();
        match e.kind {
            EventKind::Bred | EventKind::Received | EventKind::Immigrated => {
                if let std::collections::hash_map::Entry::Vacant(slot) = active.entry((e.island, id)) {
                    slot.insert(e.loss);
                    losses.insert(e.loss);
                }
                if best.is_none_or(|(b, _)| e.loss < b) {
                    best = Some((e.loss, id));
                }
            }
            EventKind::Deactivated => {
                if let Some(l) = active.remove(&(e.island, id)) {
                    losses.remove(l);
                }
            }
            EventKind::Emigrated => {}
        }
        let distance = match (best, optimum) {
            (Some((_, inc)), Some(opt)) => positions.get(&inc).filter(|p| p.len() == opt.len()).map(|p| {
                p.iter().zip(opt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }),
            _ => None,
        };
        rows.push(SeriesRow {
            time: e.time,
            island: e.island,
            rank: e.rank,
            kind: e.kind,
            loss: e.loss,
            best_so_far: best.map_or(f64::INFINITY, |(b, _)| b),
            median_active_loss: losses.median(),
            incumbent_distance: distance,
        });
    }
    rows
}

#[derive(Debug)]
pub struct Report {
    pub rows: Vec<SeriesRow>,
    pub summary: Summary,
    pub path: PathBuf,
}

fn invalid(path: &Path, e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
}

/// Reads the logs in `dir`, writes `report.csv` there and returns the series.
pub fn build(dir: &Path) -> io::Result<Report> {
    let ids = worker_ids(dir)?;
    if ids.is_empty() {
        return Err(io::Error::new(io::ErrorKind::NotFound, format!("no ledger dumps in {}", dir.display())));
    }
    let mut positions = HashMap::new();
    let mut logs = Vec::new();
    for &gid in &ids {
        let (_, rows) = read_ledger(&ledger_path(dir, gid))?;
        for row in rows {
            let coords: Option<Vec<f64>> = row.genes.iter().map(|g| g.parse().ok()).collect();
            if let Some(c) = coords {
                positions.entry(row.identity).or_insert(c);
            }
        }
        let path = events_path(dir, gid);
        logs.push(read_events(File::open(&path)?).map_err(|e| invalid(&path, e))?);
    }
    let config_path = dir.join(CONFIG_COPY);
    let optimum = if config_path.exists() {
        RunConfig::read(&config_path).map_err(|e| invalid(&config_path, e))?.optimum()
    } else {
        None
    };
    let rows = series(&merge(logs), &positions, optimum.as_deref());
    let path = dir.join(REPORT_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| invalid(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| invalid(&path, e))?;
    }
    w.flush()?;
    Ok(Report {
        rows,
        summary: Summary::from_dir(dir)?,
        path,
    })
}
