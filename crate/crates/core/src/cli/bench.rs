//! Benchmark matrices.
//!
//! A suite file shares the run-config keys for the propagator and islands at
//! the top level and lists `[[cell]]` entries:
//!
//! ```toml
//! generations = 64
//! n_islands = 2
//! island_sizes = [4, 4]
//!
//! [[cell]]
//! benchmark = "step"
//! seeds = [1, 2, 3, 4, 5]
//!
//! [[cell]]
//! benchmark = "sphere"
//! repetitions = 3        # seeds 0, 1, 2
//! generations = 32       # per-cell budget override
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Table;

use crate::benchmarks::{self, Benchmark};
use crate::engine::{ConfigError, Engine, IslandConfig, RunResult};
use crate::propagators::PropagatorConfig;
use crate::transport::sim::SimOptions;

use super::config::{parse_groups, split_groups};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub benchmark: String,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub repetitions: Option<u64>,
    /// Generations per worker for this cell.
    #[serde(default)]
    pub generations: Option<u64>,
}

impl Cell {
    pub fn seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.repetitions) {
            (Some(s), _) => s.clone(),
            (None, Some(n)) => (0..n).collect(),
            (None, None) => vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub propagator: PropagatorConfig,
    pub island: IslandConfig,
    pub cells: Vec<Cell>,
}

impl Suite {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::new("suite", e.message().to_string()))?;
        let (run, prop, island, rest) = split_groups(table, &["cell"])?;
        if let Some(k) = run.keys().next() {
            return Err(ConfigError::new(k.clone(), "not a suite key"));
        }
        let (propagator, island) = parse_groups(prop, island)?;
        let cells = match rest.get("cell") {
            Some(v) => Vec::<Cell>::deserialize(v.clone()).map_err(|e| ConfigError::new("cell", e.message().to_string()))?,
            None => Vec::new(),
        };
        if cells.is_empty() {
            return Err(ConfigError::new("cell", "suite lists no cells"));
        }
        Ok(Self {
            propagator,
            island,
            cells,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("suite", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// `run` for one seed, `aggregate` for the per-cell mean and spread.
    pub row: &'static str,
    pub benchmark: String,
    pub seed: Option<u64>,
    pub runs: usize,
    pub best_loss: Option<f64>,
    pub best_loss_std: Option<f64>,
    pub time_to_best: Option<f64>,
    pub time_to_best_std: Option<f64>,
    pub evaluations: Option<usize>,
    pub error: Option<String>,
}

/// Virtual time of the first event carrying the final best loss.
pub fn time_to_best(result: &RunResult) -> f64 {
    let best = result.best().map_or(f64::INFINITY, |b| b.loss_or_inf());
    result
        .merged_events()
        .iter()
        .find(|e| e.loss == best)
        .map_or(result.makespan, |e| e.time)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn run_cell(suite: &Suite, bench: Benchmark, seed: u64, generations: Option<u64>) -> Result<RunResult, String> {
    let island = IslandConfig {
        seed,
        generations: generations.unwrap_or(suite.island.generations),
        ..suite.island.clone()
    };
    let engine = Engine::new(
        bench.spec().space(),
        std::sync::Arc::new(bench),
        &suite.propagator,
        island,
    )
    .map_err(|e| e.to_string())?;
    engine.run_simulated(SimOptions::default()).map_err(|e| e.to_string())
}

/// Runs every cell; failures become error rows and the suite continues.
pub fn run_suite(suite: &Suite) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for cell in &suite.cells {
        let mut bests = Vec::new();
        let mut times = Vec::new();
        let bench = benchmarks::spec(&cell.benchmark).map(|s| s.name);
        for seed in cell.seeds() {
            let outcome = match bench {
                Ok(b) => run_cell(suite, b, seed, cell.generations),
                Err(ref e) => Err(e.to_string()),
            };
            let mut row = BenchRow {
                row: "run",
                benchmark: cell.benchmark.clone(),
                seed: Some(seed),
                runs: 1,
                best_loss: None,
                best_loss_std: None,
                time_to_best: None,
                time_to_best_std: None,
                evaluations: None,
                error: None,
            };
            match outcome {
                Ok(result) => {
                    let best = result.best().map_or(f64::INFINITY, |b| b.loss_or_inf());
                    let t = time_to_best(&result);
                    bests.push(best);
                    times.push(t);
                    row.best_loss = Some(best);
                    row.time_to_best = Some(t);
                    row.evaluations = Some(result.evaluations());
                }
                Err(e) => row.error = Some(e),
            }
            rows.push(row);
        }
        let (mean_best, std_best) = if bests.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&bests) };
        let (mean_t, std_t) = if times.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&times) };
        let ok = !bests.is_empty();
        rows.push(BenchRow {
            row: "aggregate",
            benchmark: cell.benchmark.clone(),
            seed: None,
            runs: bests.len(),
            best_loss: ok.then_some(mean_best),
            best_loss_std: ok.then_some(std_best),
            time_to_best: ok.then_some(mean_t),
            time_to_best_std: ok.then_some(std_t),
            evaluations: None,
            error: None,
        });
    }
    rows
}

pub fn write_rows(rows: &[BenchRow], path: &Path) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned table of the aggregate rows.
pub fn table(rows: &[BenchRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
    let mut lines = vec![[
        "benchmark".to_string(),
        "runs".into(),
        "best (mean)".into(),
        "best (std)".into(),
        "time to best".into(),
    ]];
    for r in rows.iter().filter(|r| r.row == "aggregate") {
        lines.push([
            r.benchmark.clone(),
            r.runs.to_string(),
            fmt(r.best_loss),
            fmt(r.best_loss_std),
            r.time_to_best.map_or("-".into(), |t| format!("{t:.1} ± {:.1}", r.time_to_best_std.unwrap_or(0.0))),
        ]);
    }
    let widths: Vec<usize> = (0..5).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    lines
        .iter()
        .map(|l| {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            format!("{}\n", cells.join("  ").trim_end())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_from_list_or_repetitions() {
        let cell = |seeds, repetitions| Cell {
            benchmark: "sphere".into(),
            seeds,
            repetitions,
            generations: None,
        };
        assert_eq!(cell(Some(vec![4, 9]), Some(5)).seeds(), vec![4, 9]);
        assert_eq!(cell(None, Some(3)).seeds(), vec![0, 1, 2]);
        assert_eq!(cell(None, None).seeds(), vec![0]);
    }

    #[test]
    fn suite_rejects_run_keys_and_empty_cell_lists() {
        assert_eq!(Suite::parse("objective = \"sphere\"\n[[cell]]\nbenchmark = \"sphere\"\n").unwrap_err().key, "objective");
        assert_eq!(Suite::parse("generations = 3\n").unwrap_err().key, "cell");
        assert_eq!(Suite::parse("[[cell]]\nbench = \"sphere\"\n").unwrap_err().key, "cell");
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn three_seeds_give_three_rows_and_an_aggregate() {
        let suite = Suite::parse(
            "generations = 8\nn_islands = 1\nisland_sizes = [2]\n[[cell]]\nbenchmark = \"sphere\"\nseeds = [1, 2, 3]\n",
        )
        .unwrap();
        let rows = run_suite(&suite);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.iter().filter(|r| r.row == "run").count(), 3);
        assert_eq!(rows[3].row, "aggregate");
        assert_eq!(rows[3].runs, 3);
        let mean = rows[..3].iter().map(|r| r.best_loss.unwrap()).sum::<f64>() / 3.0;
        assert!((rows[3].best_loss.unwrap() - mean).abs() < 1e-12);
        assert!(rows[..3].iter().all(|r| r.evaluations == Some(16)));
    }

    #[test]
    fn failed_cells_are_recorded_and_the_suite_continues() {
        let suite = Suite::parse(
            "generations = 4\nisland_sizes = [1]\n[[cell]]\nbenchmark = \"nope\"\n[[cell]]\nbenchmark = \"sphere\"\n",
        )
        .unwrap();
        let rows = run_suite(&suite);
        assert!(rows[0].error.is_some());
        assert_eq!(rows[1].runs, 0);
        assert!(rows[2].error.is_none() && rows[2].best_loss.is_some());
        assert!(table(&rows).contains("sphere"));
    }
}
