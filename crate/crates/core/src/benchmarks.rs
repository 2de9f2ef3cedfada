//! Analytic test objectives with their limits and known minima.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::SearchSpace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchmarkError {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("{name} expects {expected} coordinates, got {got}")]
    DimensionMismatch {
        name: Benchmark,
        expected: usize,
        got: usize,
    },
    #[error("{name}: coordinate {index} = {value} is outside ±{limit}")]
    OutOfBounds {
        name: Benchmark,
        index: usize,
        value: f64,
        limit: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Sphere,
    Rosenbrock,
    Step,
    Quartic,
    Rastrigin,
    Griewank,
    Schwefel,
    Bisphere,
    Birastrigin,
}

pub const ALL: [Benchmark; 9] = [
    Benchmark::Sphere,
    Benchmark::Rosenbrock,
    Benchmark::Step,
    Benchmark::Quartic,
    Benchmark::Rastrigin,
    Benchmark::Griewank,
    Benchmark::Schwefel,
    Benchmark::Bisphere,
    Benchmark::Birastrigin,
];

const SCHWEFEL_V: f64 = 418.982887;
const SCHWEFEL_ARGMIN: f64 = 420.968746;
const BI_MU1: f64 = 2.5;

/// Bi-sphere scale `s = 1 - (2*sqrt(50) - 8.2)^(-1/2)`.
pub fn bisphere_s() -> f64 {
    1.0 - (2.0 * 50f64.sqrt() - 8.2).powf(-0.5)
}

/// Second funnel centre `mu2 = -sqrt((mu1^2 - 1) / s)`.
pub fn bisphere_mu2() -> f64 {
    -((BI_MU1 * BI_MU1 - 1.0) / bisphere_s()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub name: Benchmark,
    pub dimension: usize,
    /// Symmetric bound: every coordinate lies in `[-limit, limit]`.
    pub limit: f64,
    pub optimum_value: f64,
    pub optimum_point: Vec<f64>,
}

impl BenchmarkSpec {
    pub fn space(&self) -> SearchSpace {
        SearchSpace::symmetric(self.dimension, self.limit)
    }
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Sphere => "sphere",
            Benchmark::Rosenbrock => "rosenbrock",
            Benchmark::Step => "step",
            Benchmark::Quartic => "quartic",
            Benchmark::Rastrigin => "rastrigin",
            Benchmark::Griewank => "griewank",
            Benchmark::Schwefel => "schwefel",
            Benchmark::Bisphere => "bisphere",
            Benchmark::Birastrigin => "birastrigin",
        }
    }

    pub fn is_deterministic(self) -> bool {
        self != Benchmark::Quartic
    }

    pub fn spec(self) -> BenchmarkSpec {
        let (dimension, limit, point) = match self {
            Benchmark::Sphere => (2, 5.12, 0.0),
            Benchmark::Rosenbrock => (2, 2.048, 1.0),
            // Any point with every coordinate in [-5.12, -5] is optimal.
            Benchmark::Step => (5, 5.12, -5.12),
            Benchmark::Quartic => (30, 1.28, 0.0),
            Benchmark::Rastrigin => (20, 5.12, 0.0),
            Benchmark::Griewank => (10, 600.0, 0.0),
            Benchmark::Schwefel => (10, 500.0, SCHWEFEL_ARGMIN),
            Benchmark::Bisphere | Benchmark::Birastrigin => (30, 5.12, BI_MU1),
        };
        let optimum_value = if self == Benchmark::Step { -25.0 } else { 0.0 };
        BenchmarkSpec {
            name: self,
            dimension,
            limit,
            optimum_value,
            optimum_point: vec![point; dimension],
        }
    }

    /// Objective value at `x`. Only quartic draws from `rng`.
    pub fn evaluate(self, x: &[f64], rng: &mut dyn RngCore) -> Result<f64, BenchmarkError> {
        let spec = self.spec();
        if x.len() != spec.dimension {
            return Err(BenchmarkError::DimensionMismatch {
                name: self,
                expected: spec.dimension,
                got: x.len(),
            });
        }
        if let Some((index, &value)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || v.abs() > spec.limit)
        {
            return Err(BenchmarkError::OutOfBounds {
                name: self,
                index,
                value,
                limit: spec.limit,
            });
        }
        Ok(match self {
            Benchmark::Sphere => sphere(x),
            Benchmark::Rosenbrock => rosenbrock(x),
            Benchmark::Step => step(x),
            Benchmark::Quartic => quartic(x, rng),
            Benchmark::Rastrigin => rastrigin(x),
            Benchmark::Griewank => griewank(x),
            Benchmark::Schwefel => schwefel(x),
            Benchmark::Bisphere => bisphere(x),
            Benchmark::Birastrigin => birastrigin(x),
        })
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL.iter()
            .copied()
            .find(|b| b.name() == s)
            .ok_or_else(|| BenchmarkError::UnknownBenchmark(s.to_string()))
    }
}

/// Looks up a benchmark by name.
pub fn spec(name: &str) -> Result<BenchmarkSpec, BenchmarkError> {
    Ok(name.parse::<Benchmark>()?.spec())
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    100.0 * (a * a - b).powi(2) + (1.0 - a).powi(2)
}

/// Sum of coordinates truncated toward zero.
pub fn step(x: &[f64]) -> f64 {
    x.iter().map(|v| v.trunc()).sum()
}

pub fn quartic(x: &[f64], rng: &mut dyn RngCore) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let noise: f64 = StandardNormal.sample(rng);
            (i + 1) as f64 * v.powi(4) + noise
        })
        .sum()
}

/// The noise-free part of [`quartic`].
pub fn quartic_mean(x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, v)| (i + 1) as f64 * v.powi(4))
        .sum()
}

pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter()
            .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos())
            .sum::<f64>()
}

pub fn griewank(x: &[f64]) -> f64 {
    let sum: f64 = x.iter().map(|v| v * v).sum::<f64>() / 4000.0;
    let prod: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
        .product();
    1.0 + sum - prod
}

pub fn schwefel(x: &[f64]) -> f64 {
    SCHWEFEL_V * x.len() as f64 - x.iter().map(|v| v * v.abs().sqrt().sin()).sum::<f64>()
}

pub fn bisphere(x: &[f64]) -> f64 {
    let s = bisphere_s();
    let mu2 = bisphere_mu2();
    let near: f64 = x.iter().map(|v| (v - BI_MU1).powi(2)).sum();
    let far: f64 = x.iter().map(|v| (v - mu2).powi(2)).sum();
    near.min(x.len() as f64 + s * far)
}

pub fn birastrigin(x: &[f64]) -> f64 {
    bisphere(x)
        + 10.0
            * x.iter()
                .map(|v| 1.0 - (2.0 * std::f64::consts::PI * (v - BI_MU1)).cos())
                .sum::<f64>()
}
