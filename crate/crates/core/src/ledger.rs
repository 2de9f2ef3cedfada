//! Per-worker population ledger.
//!
//! Records are append-only; deactivation flips a flag and never removes a
//! record. Deactivation notices can overtake the individual they condemn, so
//! notices for unknown identities are parked in a cache and applied once the
//! individual shows up.

use std::collections::HashMap;
use std::io;

use thiserror::Error;

use crate::space::{Identity, Individual, SearchSpace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("{0} is already recorded")]
    DuplicateIdentity(Identity),
    #[error("cannot record an individual without identity")]
    MissingIdentity,
    #[error("{0} has not been evaluated")]
    Unevaluated(Identity),
}

/// Result of a deactivation attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deactivation {
    Deactivated,
    /// The identity is unknown; it waits in the replaced cache.
    Deferred,
}

/// Whether a freshly recorded individual joined the active population.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    Active,
    /// A deactivation notice arrived earlier; the record starts inactive.
    Condemned,
}

#[derive(Debug, Clone)]
pub struct PopulationLedger {
    island: u32,
    rank: u32,
    records: Vec<Individual>,
    index: HashMap<Identity, usize>,
    replaced: Vec<Identity>,
}

impl PopulationLedger {
    pub fn new(island: u32, rank: u32) -> Self {
        Self {
            island,
            rank,
            records: Vec::new(),
            index: HashMap::new(),
            replaced: Vec::new(),
        }
    }

    pub fn owner(&self) -> (u32, u32) {
        (self.island, self.rank)
    }

    /// Appends an evaluated individual.
    pub fn record(&mut self, mut individual: Individual) -> Result<Recorded, LedgerError> {
        let id = individual.id.ok_or(LedgerError::MissingIdentity)?;
        if !individual.is_evaluated() {
            return Err(LedgerError::Unevaluated(id));
        }
        if self.index.contains_key(&id) {
            return Err(LedgerError::DuplicateIdentity(id));
        }
        let outcome = match self.replaced.iter().position(|c| *c == id) {
            Some(pos) => {
                self.replaced.remove(pos);
                Recorded::Condemned
            }
            None => Recorded::Active,
        };
        individual.active = outcome == Recorded::Active;
        individual.resident_island = Some(self.island);
        self.index.insert(id, self.records.len());
        self.records.push(individual);
        Ok(outcome)
    }

    pub fn deactivate(&mut self, id: Identity) -> Deactivation {
        match self.index.get(&id) {
            Some(&i) => {
                self.records[i].active = false;
                Deactivation::Deactivated
            }
            None => {
                if !self.replaced.contains(&id) {
                    self.replaced.push(id);
                }
                Deactivation::Deferred
            }
        }
    }

    /// Retries every cached deactivation; returns how many resolved.
    pub fn flush_cache(&mut self) -> usize {
        let pending = std::mem::take(&mut self.replaced);
        let mut resolved = 0;
        for id in pending {
            match self.index.get(&id) {
                Some(&i) => {
                    self.records[i].active = false;
                    resolved += 1;
                }
                None => self.replaced.push(id),
            }
        }
        resolved
    }

    /// Active records in append order.
    pub fn active_view(&self) -> Vec<&Individual> {
        self.records.iter().filter(|r| r.active).collect()
    }

    pub fn active_count(&self) -> usize {
        self.records.iter().filter(|r| r.active).count()
    }

    pub fn records(&self) -> &[Individual] {
        &self.records
    }

    pub fn get(&self, id: &Identity) -> Option<&Individual> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &Identity) -> bool {
        self.index.contains_key(id)
    }

    pub fn replaced_cache(&self) -> &[Identity] {
        &self.replaced
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Lowest loss among all records, active or not.
    pub fn best(&self) -> Option<&Individual> {
        self.records
            .iter()
            .min_by(|a, b| a.loss_or_inf().total_cmp(&b.loss_or_inf()))
    }

    /// Writes the CSV dump: identity, activity, loss, then genes in space order.
    pub fn write_csv<W: io::Write>(&self, space: &SearchSpace, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "origin_island".to_string(),
            "origin_rank".into(),
            "generation".into(),
            "active".into(),
            "loss".into(),
        ];
        header.extend(space.names().map(str::to_string));
        w.write_record(&header)?;
        for r in &self.records {
            let id = r.id.expect("recorded individuals carry an identity");
            let mut row = vec![
                id.island.to_string(),
                id.rank.to_string(),
                id.generation.to_string(),
                r.active.to_string(),
                r.loss_or_inf().to_string(),
            ];
            row.extend(space.render(&r.genes));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn push_unchecked(&mut self, individual: Individual) {
        let id = individual.id.unwrap();
        self.index.insert(id, self.records.len());
        self.records.push(individual);
    }
}
