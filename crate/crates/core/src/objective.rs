//! Loss functions the engine can minimize.

use std::process::Command;

use rand::RngCore;
use thiserror::Error;

use crate::benchmarks::{Benchmark, BenchmarkError};
use crate::space::{GeneValue, SearchSpace};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error("objective command failed: {0}")]
    Command(String),
    #[error("{0}")]
    Other(String),
}

/// A loss to minimize. Implementations must be safe to call from several
/// workers at once.
pub trait Objective: Send + Sync {
    fn evaluate(&self, genes: &[GeneValue], rng: &mut dyn RngCore) -> Result<f64, ObjectiveError>;
}

impl Objective for Benchmark {
    fn evaluate(&self, genes: &[GeneValue], rng: &mut dyn RngCore) -> Result<f64, ObjectiveError> {
        let x: Vec<f64> = genes.iter().map(GeneValue::as_f64).collect();
        Ok(Benchmark::evaluate(*self, &x, rng)?)
    }
}

/// Wraps a plain function of the numeric gene vector.
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn evaluate(&self, genes: &[GeneValue], _: &mut dyn RngCore) -> Result<f64, ObjectiveError> {
        let x: Vec<f64> = genes.iter().map(GeneValue::as_f64).collect();
        Ok((self.0)(&x))
    }
}

/// Runs an external program per evaluation with `name=value` arguments. The
/// last line of its standard output must be the loss.
#[derive(Debug, Clone)]
pub struct CommandObjective {
    program: String,
    args: Vec<String>,
    space: SearchSpace,
}

impl CommandObjective {
    pub fn new(command: &[String], space: SearchSpace) -> Result<Self, ObjectiveError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ObjectiveError::Command("empty command".into()))?;
        Ok(Self {
            program: program.clone(),
            args: args.to_vec(),
            space,
        })
    }

    fn argument(&self, index: usize, value: &GeneValue) -> String {
        let spec = &self.space.genes()[index];
        format!("{}={}", spec.name, spec.render(value))
    }
}

impl Objective for CommandObjective {
    fn evaluate(&self, genes: &[GeneValue], _: &mut dyn RngCore) -> Result<f64, ObjectiveError> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .args(genes.iter().enumerate().map(|(i, g)| self.argument(i, g)))
            .output()
            .map_err(|e| ObjectiveError::Command(format!("{}: {e}", self.program)))?;
        if !output.status.success() {
            return Err(ObjectiveError::Command(format!(
                "{} exited with {}",
                self.program, output.status
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let last = stdout
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| ObjectiveError::Command("no output".into()))?;
        last.trim()
            .parse::<f64>()
            .map_err(|_| ObjectiveError::Command(format!("last line `{last}` is not a number")))
    }
}
