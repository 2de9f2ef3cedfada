//! Run artifacts on disk: one ledger dump and one event log per worker,
//! plus a one-row summary.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::space::{Identity, SearchSpace};

use super::events::{read_events, write_events};
use super::{RunResult, WorkerOutput};

pub fn ledger_path(dir: &Path, global_id: u32) -> PathBuf {
    dir.join(format!("ledger_{global_id}.csv"))
}

pub fn events_path(dir: &Path, global_id: u32) -> PathBuf {
    dir.join(format!("events_{global_id}.csv"))
}

pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.csv")
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_worker(dir: &Path, space: &SearchSpace, out: &WorkerOutput) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let gid = out.address.global_id;
    out.ledger
        .write_csv(space, BufWriter::new(File::create(ledger_path(dir, gid))?))
        .map_err(csv_io)?;
    write_events(&out.events, BufWriter::new(File::create(events_path(dir, gid))?)).map_err(csv_io)
}

/// One row of a ledger dump, genes kept as text.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub identity: Identity,
    pub active: bool,
    pub loss: f64,
    pub genes: Vec<String>,
}

/// Reads a ledger dump; returns the gene names and the rows.
pub fn read_ledger(path: &Path) -> io::Result<(Vec<String>, Vec<LedgerRow>)> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_io)?;
    let header = r.headers().map_err(csv_io)?.clone();
    if header.len() < 5 || &header[0] != "origin_island" {
        return Err(bad("not a ledger dump".into()));
    }
    let names = header.iter().skip(5).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_io)?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("missing column {i}")));
        let num = |i: usize| -> io::Result<u64> { field(i)?.parse().map_err(|_| bad(format!("bad number in column {i}"))) };
        rows.push(LedgerRow {
            identity: Identity::new(num(0)? as u32, num(1)? as u32, num(2)?),
            active: field(3)?.parse().map_err(|_| bad("bad active flag".into()))?,
            loss: field(4)?.parse().map_err(|_| bad("bad loss".into()))?,
            genes: rec.iter().skip(5).map(str::to_string).collect(),
        });
    }
    Ok((names, rows))
}

/// Worker ids that have a ledger dump in `dir`, ascending.
pub fn worker_ids(dir: &Path) -> io::Result<Vec<u32>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name
            .strip_prefix("ledger_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse().ok())
        {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub workers: usize,
    pub evaluations: usize,
    pub makespan: f64,
    pub best_loss: f64,
    pub best_island: Option<u32>,
    pub best_rank: Option<u32>,
    pub best_generation: Option<u64>,
    #[serde(skip)]
    pub best_genes: Vec<(String, String)>,
}

impl Summary {
    pub fn from_result(result: &RunResult, space: &SearchSpace) -> Self {
        let best = result.best();
        Self {
            workers: result.workers.len(),
            evaluations: result.evaluations(),
            makespan: result.makespan,
            best_loss: best.as_ref().map_or(f64::INFINITY, |b| b.loss_or_inf()),
            best_island: best.as_ref().and_then(|b| b.id).map(|id| id.island),
            best_rank: best.as_ref().and_then(|b| b.id).map(|id| id.rank),
            best_generation: best.as_ref().and_then(|b| b.id).map(|id| id.generation),
            best_genes: best
                .map(|b| space.names().map(str::to_string).zip(space.render(&b.genes)).collect())
                .unwrap_or_default(),
        }
    }

    /// Rebuilds the summary from the files of a finished run.
    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let ids = worker_ids(dir)?;
        if ids.is_empty() {
            return Err(io::Error::new(io::ErrorKind::NotFound, format!("no ledger dumps in {}", dir.display())));
        }
        let mut seen: BTreeMap<Identity, LedgerRow> = BTreeMap::new();
        let mut names = Vec::new();
        let mut makespan: f64 = 0.0;
        for &gid in &ids {
            let (n, rows) = read_ledger(&ledger_path(dir, gid))?;
            names = n;
            for row in rows {
                seen.entry(row.identity).or_insert(row);
            }
            let events = read_events(File::open(events_path(dir, gid))?).map_err(csv_io)?;
            makespan = events.iter().map(|e| e.time).fold(makespan, f64::max);
        }
        let best = seen
            .values()
            .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.identity.cmp(&b.identity)));
        Ok(Self {
            workers: ids.len(),
            evaluations: seen.len(),
            makespan,
            best_loss: best.map_or(f64::INFINITY, |b| b.loss),
            best_island: best.map(|b| b.identity.island),
            best_rank: best.map(|b| b.identity.rank),
            best_generation: best.map(|b| b.identity.generation),
            best_genes: best
                .map(|b| names.iter().cloned().zip(b.genes.iter().cloned()).collect())
                .unwrap_or_default(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
        let mut header: Vec<String> = [
            "workers",
            "evaluations",
            "makespan",
            "best_loss",
            "best_island",
            "best_rank",
            "best_generation",
        ]
        .map(String::from)
        .to_vec();
        header.extend(self.best_genes.iter().map(|(n, _)| n.clone()));
        let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut row = vec![
            self.workers.to_string(),
            self.evaluations.to_string(),
            self.makespan.to_string(),
            self.best_loss.to_string(),
            opt(self.best_island.map(u64::from)),
            opt(self.best_rank.map(u64::from)),
            opt(self.best_generation),
        ];
        row.extend(self.best_genes.iter().map(|(_, v)| v.clone()));
        w.write_record(&header).map_err(csv_io)?;
        w.write_record(&row).map_err(csv_io)?;
        w.flush()
    }

    /// Aligned `key  value` lines.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            ("workers".to_string(), self.workers.to_string()),
            ("evaluations".into(), self.evaluations.to_string()),
            ("makespan".into(), format!("{:.6}", self.makespan)),
            ("best loss".into(), format!("{:.9e}", self.best_loss)),
        ];
        if let (Some(i), Some(r), Some(g)) = (self.best_island, self.best_rank, self.best_generation) {
            lines.push(("best identity".into(), format!("island {i}, rank {r}, generation {g}")));
        }
        lines.extend(self.best_genes.iter().map(|(n, v)| (format!("  {n}"), v.clone())));
        let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        lines
            .into_iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

/// Writes every worker's files and the summary.
pub fn write_run(dir: &Path, space: &SearchSpace, result: &RunResult) -> io::Result<Summary> {
    for w in &result.workers {
        write_worker(dir, space, w)?;
    }
    let summary = Summary::from_result(result, space);
    summary.write_csv(&summary_path(dir))?;
    Ok(summary)
}
