use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transport::Layout;

/// A rejected configuration value, naming the offending key.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExchangeMode {
    /// Emigrants leave their source island.
    Migration,
    /// Copies are sent; each arrival replaces a victim on the target island.
    Pollination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmigrationPolicy {
    Best,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImmigrationPolicy {
    Worst,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IslandConfig {
    pub n_islands: u32,
    /// One entry per island. Empty means four workers per island.
    pub island_sizes: Vec<u32>,
    pub generations: u64,
    pub exchange_mode: ExchangeMode,
    pub exchange_probability: f64,
    pub n_migrants: usize,
    /// Successor lists per island. `None` is fully connected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topology: Option<Vec<Vec<u32>>>,
    pub emigration_policy: EmigrationPolicy,
    pub immigration_policy: ImmigrationPolicy,
    pub seed: u64,
}

impl Default for IslandConfig {
    fn default() -> Self {
        Self {
            n_islands: 1,
            island_sizes: Vec::new(),
            generations: 256,
            exchange_mode: ExchangeMode::Pollination,
            exchange_probability: 0.7,
            n_migrants: 1,
            topology: None,
            emigration_policy: EmigrationPolicy::Best,
            immigration_policy: ImmigrationPolicy::Worst,
            seed: 0,
        }
    }
}

impl IslandConfig {
    /// `n_islands` islands of `size` workers each, defaults elsewhere.
    pub fn uniform(n_islands: u32, size: u32) -> Self {
        Self {
            n_islands,
            island_sizes: vec![size; n_islands as usize],
            ..Self::default()
        }
    }

    pub fn sizes(&self) -> Vec<u32> {
        if self.island_sizes.is_empty() {
            vec![4; self.n_islands as usize]
        } else {
            self.island_sizes.clone()
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.sizes())
    }

    pub fn successors(&self, island: u32) -> Vec<u32> {
        match &self.topology {
            Some(t) => t[island as usize].clone(),
            None => (0..self.n_islands).filter(|&j| j != island).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_islands == 0 {
            return Err(ConfigError::new("n_islands", "must be positive"));
        }
        let sizes = self.sizes();
        if sizes.len() != self.n_islands as usize {
            return Err(ConfigError::new(
                "island_sizes",
                format!("has {} entries for {} islands", sizes.len(), self.n_islands),
            ));
        }
        if sizes.contains(&0) {
            return Err(ConfigError::new("island_sizes", "islands must have at least one worker"));
        }
        if self.generations == 0 {
            return Err(ConfigError::new("generations", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.exchange_probability) {
            return Err(ConfigError::new("exchange_probability", "must lie in [0, 1]"));
        }
        if self.n_migrants == 0 {
            return Err(ConfigError::new("n_migrants", "must be positive"));
        }
        if let Some(t) = &self.topology {
            if t.len() != self.n_islands as usize {
                return Err(ConfigError::new(
                    "topology",
                    format!("has {} successor lists for {} islands", t.len(), self.n_islands),
                ));
            }
            for (i, succ) in t.iter().enumerate() {
                for &j in succ {
                    if j as usize == i {
                        return Err(ConfigError::new("topology", format!("self-edge on island {i}")));
                    }
                    if j >= self.n_islands {
                        return Err(ConfigError::new("topology", format!("island {i} points to missing island {j}")));
                    }
                }
            }
        }
        Ok(())
    }
}
