//! Typed search-space dimensions, gene values and individuals.
//!
//! A [`SearchSpace`] is an ordered list of [`GeneSpec`]s. The order is the
//! canonical gene order everywhere: crossover positions, wire messages and
//! CSV columns all follow it.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Admissible values of one gene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GeneKind {
    Continuous { lower: f64, upper: f64 },
    Integer { lower: i64, upper: i64 },
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneSpec {
    pub name: String,
    pub kind: GeneKind,
}

impl GeneSpec {
    pub fn continuous(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            kind: GeneKind::Continuous { lower, upper },
        }
    }

    pub fn integer(name: impl Into<String>, lower: i64, upper: i64) -> Self {
        Self {
            name: name.into(),
            kind: GeneKind::Integer { lower, upper },
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: GeneKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
            },
        }
    }

    /// Width of the interval for numeric genes, `None` for categorical ones.
    pub fn width(&self) -> Option<f64> {
        match &self.kind {
            GeneKind::Continuous { lower, upper } => Some(upper - lower),
            GeneKind::Integer { lower, upper } => Some((upper - lower) as f64),
            GeneKind::Categorical { .. } => None,
        }
    }

    /// Draws a value uniformly from the admissible set.
    pub fn sample(&self, rng: &mut dyn RngCore) -> GeneValue {
        match &self.kind {
            GeneKind::Continuous { lower, upper } => {
                GeneValue::Real(rng.random_range(*lower..=*upper))
            }
            GeneKind::Integer { lower, upper } => GeneValue::Int(rng.random_range(*lower..=*upper)),
            GeneKind::Categorical { categories } => {
                GeneValue::Category(rng.random_range(0..categories.len()))
            }
        }
    }

    pub fn admits(&self, value: &GeneValue) -> bool {
        match (&self.kind, value) {
            (GeneKind::Continuous { lower, upper }, GeneValue::Real(v)) => {
                v.is_finite() && *lower <= *v && *v <= *upper
            }
            (GeneKind::Integer { lower, upper }, GeneValue::Int(v)) => *lower <= *v && *v <= *upper,
            (GeneKind::Categorical { categories }, GeneValue::Category(i)) => *i < categories.len(),
            _ => false,
        }
    }

    /// Text form of `value`: category names for categorical genes, numbers otherwise.
    pub fn render(&self, value: &GeneValue) -> String {
        match (&self.kind, value) {
            (GeneKind::Categorical { categories }, GeneValue::Category(i)) if *i < categories.len() => {
                categories[*i].clone()
            }
            _ => value.to_string(),
        }
    }
}

/// One gene value. Integers and category indices are kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeneValue {
    Real(f64),
    Int(i64),
    Category(usize),
}

impl GeneValue {
    /// Numeric view used by objectives and distance computations.
    pub fn as_f64(&self) -> f64 {
        match *self {
            GeneValue::Real(v) => v,
            GeneValue::Int(v) => v as f64,
            GeneValue::Category(i) => i as f64,
        }
    }
}

impl fmt::Display for GeneValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneValue::Real(v) => write!(f, "{v}"),
            GeneValue::Int(v) => write!(f, "{v}"),
            GeneValue::Category(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceError {
    #[error("search space has no genes")]
    EmptySpace,
    #[error("gene `{0}` has invalid limits")]
    BadLimits(String),
    #[error("gene name `{0}` is used more than once")]
    DuplicateName(String),
}

/// Every violation found while validating a space.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid search space: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct SpaceErrors(pub Vec<SpaceError>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    genes: Vec<GeneSpec>,
}

impl SearchSpace {
    /// Builds a space, rejecting it if any invariant is violated.
    pub fn new(genes: Vec<GeneSpec>) -> Result<Self, SpaceErrors> {
        let space = Self { genes };
        validate_space(&space)?;
        Ok(space)
    }

    /// Builds a space without validation. Use [`validate_space`] afterwards.
    pub fn new_unchecked(genes: Vec<GeneSpec>) -> Self {
        Self { genes }
    }

    /// `dim` continuous genes `x1..x{dim}` on `[-limit, limit]`.
    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self {
            genes: (1..=dim)
                .map(|i| GeneSpec::continuous(format!("x{i}"), -limit, limit))
                .collect(),
        }
    }

    pub fn genes(&self) -> &[GeneSpec] {
        &self.genes
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.genes.iter().map(|g| g.name.as_str())
    }

    pub fn admits(&self, genes: &[GeneValue]) -> bool {
        genes.len() == self.genes.len() && self.genes.iter().zip(genes).all(|(s, v)| s.admits(v))
    }

    /// Draws a fresh unevaluated individual with uniformly distributed genes.
    /// Text form of every gene, in space order.
    pub fn render(&self, genes: &[GeneValue]) -> Vec<String> {
        self.genes.iter().zip(genes).map(|(spec, g)| spec.render(g)).collect()
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Individual {
        Individual::new(self.genes.iter().map(|g| g.sample(rng)).collect())
    }
}

/// Checks every gene; the error lists all violations, not just the first.
pub fn validate_space(space: &SearchSpace) -> Result<(), SpaceErrors> {
    let mut errors = Vec::new();
    if space.genes.is_empty() {
        errors.push(SpaceError::EmptySpace);
    }
    let mut seen = HashSet::new();
    for gene in &space.genes {
        let ok = match &gene.kind {
            GeneKind::Continuous { lower, upper } => {
                lower.is_finite() && upper.is_finite() && lower < upper
            }
            GeneKind::Integer { lower, upper } => lower < upper,
            GeneKind::Categorical { categories } => {
                let distinct: HashSet<_> = categories.iter().collect();
                !categories.is_empty() && distinct.len() == categories.len()
            }
        };
        if !ok {
            errors.push(SpaceError::BadLimits(gene.name.clone()));
        }
        if !seen.insert(gene.name.as_str()) {
            errors.push(SpaceError::DuplicateName(gene.name.clone()));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(SpaceErrors(errors))
    }
}

/// Sampling entry point mirroring [`SearchSpace::sample`].
pub fn sample_random(space: &SearchSpace, rng: &mut dyn RngCore) -> Individual {
    space.sample(rng)
}

/// Globally unique provenance of an individual: each worker breeds exactly
/// one individual per generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Identity {
    pub island: u32,
    pub rank: u32,
    pub generation: u64,
}

impl Identity {
    pub fn new(island: u32, rank: u32, generation: u64) -> Self {
        Self {
            island,
            rank,
            generation,
        }
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ind[g{}, i{}, r{}]", self.generation, self.island, self.rank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("loss is already set")]
pub struct LossAlreadySet;

/// A candidate solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genes: Vec<GeneValue>,
    loss: Option<f64>,
    /// Unset until the engine assigns it at breeding time.
    pub id: Option<Identity>,
    pub active: bool,
    /// Island on which this record lives.
    pub resident_island: Option<u32>,
}

impl Individual {
    pub fn new(genes: Vec<GeneValue>) -> Self {
        Self {
            genes,
            loss: None,
            id: None,
            active: true,
            resident_island: None,
        }
    }

    /// Convenience constructor for an evaluated individual.
    pub fn evaluated(genes: Vec<GeneValue>, id: Identity, loss: f64) -> Self {
        Self {
            genes,
            loss: Some(loss),
            id: Some(id),
            active: true,
            resident_island: None,
        }
    }

    pub fn loss(&self) -> Option<f64> {
        self.loss
    }

    /// Loss for ordering purposes; unevaluated individuals rank last.
    pub fn loss_or_inf(&self) -> f64 {
        self.loss.unwrap_or(f64::INFINITY)
    }

    pub fn is_evaluated(&self) -> bool {
        self.loss.is_some()
    }

    pub fn set_loss(&mut self, loss: f64) -> Result<(), LossAlreadySet> {
        if self.loss.is_some() {
            return Err(LossAlreadySet);
        }
        self.loss = Some(loss);
        Ok(())
    }

    /// Genes as plain numbers.
    pub fn position(&self) -> Vec<f64> {
        self.genes.iter().map(GeneValue::as_f64).collect()
    }

    /// A fresh unevaluated copy of the genes.
    pub(crate) fn offspring(genes: Vec<GeneValue>) -> Self {
        Self::new(genes)
    }
}
