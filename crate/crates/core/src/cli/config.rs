//! Run configuration files.
//!
//! A config is a flat TOML table plus `[[gene]]` entries:
//!
//! ```toml
//! objective = "rastrigin"
//! generations = 128
//! n_islands = 2
//! island_sizes = [4, 4]
//! exchange_mode = "pollination"
//! pool_size = 20
//!
//! [[gene]]
//! name = "x1"
//! kind = "continuous"
//! lower = -5.12
//! upper = 5.12
//! ```
//!
//! Propagator and island keys share the top level with the run keys below.
//! Benchmarks bring their own search space when no genes are listed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::benchmarks::{self, Benchmark};
use crate::engine::{ConfigError, Engine, IslandConfig};
use crate::objective::{CommandObjective, Objective};
use crate::propagators::PropagatorConfig;
use crate::space::{validate_space, GeneKind, GeneSpec, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// All workers as threads under the virtual clock.
    #[default]
    Inprocess,
    /// One worker per process over TCP.
    Mesh,
}

/// Keys that belong to neither the propagator nor the island config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunKeys {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    /// External program and fixed arguments; genes are appended as `name=value`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    pub backend: Backend,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_file: Option<PathBuf>,
    pub out: PathBuf,
    pub report_top_n: usize,
    /// Reference point for distance series; benchmarks default to their optimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimum: Option<Vec<f64>>,
}

impl Default for RunKeys {
    fn default() -> Self {
        Self {
            objective: None,
            command: None,
            backend: Backend::Inprocess,
            rank_file: None,
            out: PathBuf::from("propulsion-out"),
            report_top_n: 1,
            optimum: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Int(i64),
    Real(f64),
}

impl Bound {
    fn real(&self) -> f64 {
        match *self {
            Bound::Int(v) => v as f64,
            Bound::Real(v) => v,
        }
    }
}

/// One `[[gene]]` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneEntry {
    pub name: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<Bound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<Bound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl GeneEntry {
    fn to_spec(&self) -> Result<GeneSpec, ConfigError> {
        let missing = |what: &str| ConfigError::new("gene", format!("gene `{}` needs `{what}`", self.name));
        match self.kind.as_str() {
            "continuous" => Ok(GeneSpec::continuous(
                &self.name,
                self.lower.as_ref().ok_or_else(|| missing("lower"))?.real(),
                self.upper.as_ref().ok_or_else(|| missing("upper"))?.real(),
            )),
            "integer" => {
                let int = |b: &Option<Bound>, what: &str| match b {
                    Some(Bound::Int(v)) => Ok(*v),
                    Some(Bound::Real(_)) => Err(ConfigError::new(
                        "gene",
                        format!("gene `{}` has a non-integer `{what}`", self.name),
                    )),
                    None => Err(missing(what)),
                };
                Ok(GeneSpec::integer(&self.name, int(&self.lower, "lower")?, int(&self.upper, "upper")?))
            }
            "categorical" => Ok(GeneSpec::categorical(
                &self.name,
                self.categories.clone().ok_or_else(|| missing("categories"))?,
            )),
            other => Err(ConfigError::new(
                "gene",
                format!("gene `{}` has unknown kind `{other}`", self.name),
            )),
        }
    }

    pub fn from_spec(spec: &GeneSpec) -> Self {
        let (kind, lower, upper, categories) = match &spec.kind {
            GeneKind::Continuous { lower, upper } => ("continuous", Some(Bound::Real(*lower)), Some(Bound::Real(*upper)), None),
            GeneKind::Integer { lower, upper } => ("integer", Some(Bound::Int(*lower)), Some(Bound::Int(*upper)), None),
            GeneKind::Categorical { categories } => ("categorical", None, None, Some(categories.clone())),
        };
        Self {
            name: spec.name.clone(),
            kind: kind.into(),
            lower,
            upper,
            categories,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run: RunKeys,
    pub propagator: PropagatorConfig,
    pub island: IslandConfig,
    pub genes: Vec<GeneEntry>,
}

fn keys_of<T: Serialize>(value: &T) -> Vec<String> {
    Table::try_from(value).expect("config structs serialize to tables").keys().cloned().collect()
}

/// Deserializes `table` into `T`, naming the first offending key on failure.
fn typed<T: DeserializeOwned + Default + Serialize>(table: Table) -> Result<T, ConfigError> {
    match T::deserialize(Value::Table(table.clone())) {
        Ok(v) => Ok(v),
        Err(e) => {
            for (k, v) in &table {
                let mut one = Table::new();
                one.insert(k.clone(), v.clone());
                if let Err(err) = T::deserialize(Value::Table(one)) {
                    return Err(ConfigError::new(k.clone(), err.message().to_string()));
                }
            }
            Err(ConfigError::new("config", e.message().to_string()))
        }
    }
}

/// Splits a flat table into run, propagator and island groups.
pub(crate) fn split_groups(
    mut table: Table,
    extra: &[&str],
) -> Result<(Table, Table, Table, Table), ConfigError> {
    let run_keys = keys_of(&RunKeys {
        objective: Some(String::new()),
        command: Some(Vec::new()),
        rank_file: Some(PathBuf::new()),
        optimum: Some(Vec::new()),
        ..RunKeys::default()
    });
    let prop_keys = keys_of(&PropagatorConfig::default());
    let mut island_keys = keys_of(&IslandConfig::default());
    island_keys.push("topology".into());
    let (mut run, mut prop, mut island, mut rest) = (Table::new(), Table::new(), Table::new(), Table::new());
    for (k, v) in std::mem::take(&mut table) {
        let group = if run_keys.contains(&k) {
            &mut run
        } else if prop_keys.contains(&k) {
            &mut prop
        } else if island_keys.contains(&k) {
            &mut island
        } else if extra.contains(&k.as_str()) {
            &mut rest
        } else {
            return Err(ConfigError::new(k, "unknown key"));
        };
        group.insert(k, v);
    }
    Ok((run, prop, island, rest))
}

pub(crate) fn parse_groups(
    prop: Table,
    island: Table,
) -> Result<(PropagatorConfig, IslandConfig), ConfigError> {
    let propagator: PropagatorConfig = typed(prop)?;
    let island: IslandConfig = typed(island)?;
    Ok((propagator, island))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::new("config", e.message().to_string()))?;
        let (run, prop, island, rest) = split_groups(table, &["gene"])?;
        let run: RunKeys = typed(run)?;
        let (propagator, island) = parse_groups(prop, island)?;
        let genes = match rest.get("gene") {
            None => Vec::new(),
            Some(v) => Vec::<GeneEntry>::deserialize(v.clone())
                .map_err(|e| ConfigError::new("gene", e.message().to_string()))?,
        };
        let config = Self {
            run,
            propagator,
            island,
            genes,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        let mut table = Table::try_from(&self.run).expect("serializable");
        table.extend(Table::try_from(&self.propagator).expect("serializable"));
        table.extend(Table::try_from(&self.island).expect("serializable"));
        if !self.genes.is_empty() {
            table.insert("gene".into(), Value::try_from(&self.genes).expect("serializable"));
        }
        toml::to_string(&table).expect("serializable")
    }

    pub fn benchmark(&self) -> Option<Benchmark> {
        self.run.objective.as_deref().and_then(|n| n.parse().ok())
    }

    /// The configured genes, or the benchmark's own space when none are listed.
    pub fn space(&self) -> Result<SearchSpace, ConfigError> {
        if self.genes.is_empty() {
            return match self.benchmark() {
                Some(b) => Ok(b.spec().space()),
                None => Err(ConfigError::new("gene", "no genes listed")),
            };
        }
        let specs = self.genes.iter().map(GeneEntry::to_spec).collect::<Result<Vec<_>, _>>()?;
        SearchSpace::new(specs).map_err(|e| ConfigError::new("gene", e.to_string()))
    }

    /// Reference point for distance series.
    pub fn optimum(&self) -> Option<Vec<f64>> {
        self.run
            .optimum
            .clone()
            .or_else(|| self.benchmark().map(|b| b.spec().optimum_point))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.run.objective, &self.run.command) {
            (None, None) => return Err(ConfigError::new("objective", "missing; name a benchmark or set `command`")),
            (Some(_), Some(_)) => return Err(ConfigError::new("command", "cannot be combined with `objective`")),
            (Some(name), None) => {
                benchmarks::spec(name).map_err(|e| ConfigError::new("objective", e.to_string()))?;
            }
            (None, Some(cmd)) if cmd.is_empty() => return Err(ConfigError::new("command", "is empty")),
            (None, Some(_)) => {}
        }
        let space = self.space()?;
        validate_space(&space).map_err(|e| ConfigError::new("gene", e.to_string()))?;
        if let Some(b) = self.benchmark() {
            if space.len() != b.spec().dimension {
                return Err(ConfigError::new(
                    "gene",
                    format!("{} needs {} genes, got {}", b.name(), b.spec().dimension, space.len()),
                ));
            }
        }
        if let Some(opt) = &self.run.optimum {
            if opt.len() != space.len() {
                return Err(ConfigError::new("optimum", format!("has {} entries for {} genes", opt.len(), space.len())));
            }
        }
        if i64::try_from(self.island.seed).is_err() {
            return Err(ConfigError::new("seed", "must fit a signed 64-bit integer"));
        }
        if self.run.report_top_n == 0 {
            return Err(ConfigError::new("report_top_n", "must be positive"));
        }
        if self.run.backend == Backend::Mesh && self.run.rank_file.is_none() {
            return Err(ConfigError::new("rank_file", "required for the mesh backend"));
        }
        self.propagator.validate().map_err(|e| {
            let message = e.to_string();
            // Messages lead with the offending key.
            let key = message.rsplit(": ").next().and_then(|m| m.split(' ').next()).unwrap_or("propagator");
            ConfigError::new(key, message.clone())
        })?;
        self.island.validate()
    }

    pub fn objective(&self) -> Result<Arc<dyn Objective>, ConfigError> {
        if let Some(b) = self.benchmark() {
            return Ok(Arc::new(b));
        }
        let cmd = self.run.command.as_ref().ok_or_else(|| ConfigError::new("objective", "missing"))?;
        let objective =
            CommandObjective::new(cmd, self.space()?).map_err(|e| ConfigError::new("command", e.to_string()))?;
        Ok(Arc::new(objective))
    }

    pub fn engine(&self) -> Result<Engine, ConfigError> {
        Engine::new(self.space()?, self.objective()?, &self.propagator, self.island.clone()).map_err(|e| match e {
            crate::engine::EngineError::Config(c) => c,
            other => ConfigError::new("config", other.to_string()),
        })
    }
}
