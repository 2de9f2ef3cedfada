//! Command-line front end: `run`, `report` and `bench`.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 runtime or
//! protocol error.

pub mod bench;
pub mod config;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::error;

use crate::engine::output::{self, summary_path, write_worker, Summary};
use crate::engine::{RunResult, Worker};
use crate::transport::mesh::{rank_from_env, MeshEndpoint, MeshOptions, RankFile};
use crate::transport::sim::SimOptions;
use crate::transport::Transport;

pub use config::{Backend, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "propulsion", version, about = "Asynchronous island-model genetic optimizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Override the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
    /// Rank file for the mesh backend: `global_id island rank host port` per line.
    #[arg(long, global = true)]
    pub rank_file: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an optimization from a config file.
    Run { config: PathBuf },
    /// Derive plot-ready series from a run directory.
    Report { dir: PathBuf },
    /// Run a benchmark suite.
    Bench { suite: PathBuf },
}

/// Parses the process arguments and dispatches; returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    dispatch(&cli)
}

pub fn dispatch(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Run { config } => cmd_run(config, cli),
        Command::Report { dir } => cmd_report(dir),
        Command::Bench { suite } => cmd_bench(suite, cli),
    }
}

/// Loads the config and applies command-line overrides.
pub fn load_config(path: &Path, cli: &Cli) -> Result<RunConfig, crate::engine::ConfigError> {
    let mut c = RunConfig::read(path)?;
    if let Some(seed) = cli.seed {
        c.island.seed = seed;
    }
    if let Some(b) = cli.backend {
        c.run.backend = b;
    }
    if let Some(r) = &cli.rank_file {
        c.run.rank_file = Some(r.clone());
    }
    if let Some(o) = &cli.out {
        c.run.out = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    error!("{msg}");
    eprintln!("error: {msg}");
    code
}

pub fn cmd_run(path: &Path, cli: &Cli) -> i32 {
    let config = match load_config(path, cli) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let engine = match config.engine() {
        Ok(e) => e,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let out = config.run.out.clone();
    if let Err(e) = fs::create_dir_all(&out).and_then(|()| fs::write(out.join(report::CONFIG_COPY), config.to_toml())) {
        return fail(EXIT_RUNTIME, format!("{}: {e}", out.display()));
    }
    let space = engine.space().clone();
    match config.run.backend {
        Backend::Inprocess => {
            let result = match engine.run_simulated(SimOptions::default()) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_RUNTIME, e),
            };
            match output::write_run(&out, &space, &result) {
                Ok(summary) => print_summary(&summary, &result, config.run.report_top_n),
                Err(e) => return fail(EXIT_RUNTIME, e),
            }
            EXIT_OK
        }
        Backend::Mesh => {
            let rank_path = config.run.rank_file.as_ref().expect("validated");
            let ranks = match RankFile::read(rank_path) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", rank_path.display())),
            };
            if ranks.layout() != &engine.layout() {
                return fail(EXIT_CONFIG, "invalid `rank_file`: layout does not match `island_sizes`");
            }
            let gid = match rank_from_env() {
                Ok(g) => g,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let endpoint = match MeshEndpoint::bootstrap(&ranks, gid, MeshOptions::default()) {
                Ok(ep) => ep,
                Err(e) => return fail(EXIT_RUNTIME, e),
            };
            let (outcome, mut endpoint) = Worker::new(&engine, endpoint).finish_open();
            let code = match outcome {
                Ok(o) => match write_worker(&out, &space, &o) {
                    // Every worker's files exist once this barrier returns.
                    Ok(()) => match endpoint.barrier() {
                        Ok(()) if gid == 0 => merge_summary(&out),
                        Ok(()) => EXIT_OK,
                        Err(e) => fail(EXIT_RUNTIME, e),
                    },
                    Err(e) => fail(EXIT_RUNTIME, e),
                },
                Err(e) => fail(EXIT_RUNTIME, e),
            };
            endpoint.shutdown();
            code
        }
    }
}

fn merge_summary(out: &Path) -> i32 {
    match Summary::from_dir(out).and_then(|s| s.write_csv(&summary_path(out)).map(|()| s)) {
        Ok(s) => {
            print!("{}", s.to_text());
            EXIT_OK
        }
        Err(e) => fail(EXIT_RUNTIME, e),
    }
}

fn print_summary(summary: &Summary, result: &RunResult, top_n: usize) {
    print!("{}", summary.to_text());
    if top_n > 1 {
        println!("top {top_n}:");
        for (i, ind) in result.top_n(top_n).iter().enumerate() {
            let id = ind.id.expect("recorded");
            println!("  {:>3}  {:.9e}  {id}", i + 1, ind.loss_or_inf());
        }
    }
}

pub fn cmd_report(dir: &Path) -> i32 {
    match report::build(dir) {
        Ok(r) => {
            print!("{}", r.summary.to_text());
            println!("{:<11}  {}", "series", r.path.display());
            println!("{:<11}  {}", "events", r.rows.len());
            EXIT_OK
        }
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

pub fn cmd_bench(path: &Path, cli: &Cli) -> i32 {
    let mut suite = match bench::Suite::read(path) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(seed) = cli.seed {
        for cell in &mut suite.cells {
            cell.seeds = Some(vec![seed]);
        }
    }
    let rows = bench::run_suite(&suite);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("propulsion-bench"));
    let file = out.join("bench.csv");
    if let Err(e) = fs::create_dir_all(&out)
        .map_err(|e| e.to_string())
        .and_then(|()| bench::write_rows(&rows, &file).map_err(|e| e.to_string()))
    {
        return fail(EXIT_RUNTIME, format!("{}: {e}", file.display()));
    }
    print!("{}", bench::table(&rows));
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return fail(EXIT_RUNTIME, format!("{failed} cell run(s) failed"));
    }
    EXIT_OK
}
