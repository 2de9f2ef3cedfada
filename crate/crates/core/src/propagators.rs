//! Breeding rules.
//!
//! A [`Propagator`] maps a list of individuals to a new list. Selection rules
//! shrink the list, crossover folds the first two entries into one child,
//! mutations rewrite every entry and random initialization ignores its input.
//! Rules compose with [`Compose`], [`Stochastic`] and [`Conditional`].
//!
//! Propagators hold no state between calls; all randomness comes from the
//! caller's generator.

use std::borrow::Borrow;
use std::cmp::Ordering;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{GeneKind, GeneValue, Individual, SearchSpace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PropagatorError {
    #[error("need {needed} individuals, got {available}")]
    InsufficientPopulation { needed: usize, available: usize },
    #[error("parents do not share a search space")]
    SpaceMismatch,
    #[error("invalid propagator config: {0}")]
    InvalidConfig(String),
}

pub trait Propagator: Send + Sync {
    fn apply(
        &self,
        inds: &[&Individual],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Individual>, PropagatorError>;
}

impl<P: Propagator + ?Sized> Propagator for Box<P> {
    fn apply(
        &self,
        inds: &[&Individual],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Individual>, PropagatorError> {
        (**self).apply(inds, rng)
    }
}

impl<P: Propagator + ?Sized> Propagator for Arc<P> {
    fn apply(
        &self,
        inds: &[&Individual],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Individual>, PropagatorError> {
        (**self).apply(inds, rng)
    }
}

/// Tunables of the default propagator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagatorConfig {
    pub pool_size: usize,
    pub crossover_probability: f64,
    pub point_mutation_probability: f64,
    pub sigma_factor: f64,
    pub random_init_probability: f64,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self {
            pool_size: 20,
            crossover_probability: 0.7,
            point_mutation_probability: 0.4,
            sigma_factor: 0.05,
            random_init_probability: 0.2,
        }
    }
}

impl PropagatorConfig {
    pub fn validate(&self) -> Result<(), PropagatorError> {
        let probs = [
            ("crossover_probability", self.crossover_probability),
            ("point_mutation_probability", self.point_mutation_probability),
            ("random_init_probability", self.random_init_probability),
        ];
        for (key, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(PropagatorError::InvalidConfig(format!(
                    "{key} = {p} is outside [0, 1]"
                )));
            }
        }
        if !(self.sigma_factor > 0.0 && self.sigma_factor.is_finite()) {
            return Err(PropagatorError::InvalidConfig(format!(
                "sigma_factor = {} must be positive",
                self.sigma_factor
            )));
        }
        if self.pool_size < 2 {
            return Err(PropagatorError::InvalidConfig(format!(
                "pool_size = {} must be at least 2",
                self.pool_size
            )));
        }
        Ok(())
    }
}

fn require(available: usize, needed: usize) -> Result<(), PropagatorError> {
    if available < needed {
        Err(PropagatorError::InsufficientPopulation { needed, available })
    } else {
        Ok(())
    }
}

fn loss_order<T: Borrow<Individual>>(pop: &[T], a: usize, b: usize) -> Ordering {
    let la = pop[a].borrow().loss_or_inf();
    let lb = pop[b].borrow().loss_or_inf();
    la.total_cmp(&lb).then(a.cmp(&b))
}

fn ranked<T: Borrow<Individual>>(
    pop: &[T],
    k: usize,
    cmp: impl Fn(usize, usize) -> Ordering,
) -> Result<Vec<&T>, PropagatorError> {
    require(pop.len(), k)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.select_nth_unstable_by(k - 1, |&a, &b| cmp(a, b));
    idx.truncate(k);
    idx.sort_unstable_by(|&a, &b| cmp(a, b));
    Ok(idx.into_iter().map(|i| &pop[i]).collect())
}

/// The `k` lowest-loss individuals, ascending; ties go to the earlier entry.
pub fn select_best<T: Borrow<Individual>>(pop: &[T], k: usize) -> Result<Vec<&T>, PropagatorError> {
    ranked(pop, k, |a, b| loss_order(pop, a, b))
}

/// The `k` highest-loss individuals, descending; ties go to the earlier entry.
pub fn select_worst<T: Borrow<Individual>>(pop: &[T], k: usize) -> Result<Vec<&T>, PropagatorError> {
    ranked(pop, k, |a, b| {
        let la = pop[a].borrow().loss_or_inf();
        let lb = pop[b].borrow().loss_or_inf();
        lb.total_cmp(&la).then(a.cmp(&b))
    })
}

/// `k` distinct individuals drawn uniformly without replacement, in draw order.
pub fn select_uniform<'a, T>(
    pop: &'a [T],
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<&'a T>, PropagatorError> {
    require(pop.len(), k)?;
    Ok(rand::seq::index::sample(rng, pop.len(), k)
        .into_iter()
        .map(|i| &pop[i])
        .collect())
}

/// Starts from `parent_a` and takes each gene from `parent_b` with `probability`.
pub fn uniform_crossover(
    parent_a: &[GeneValue],
    parent_b: &[GeneValue],
    probability: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<GeneValue>, PropagatorError> {
    if parent_a.len() != parent_b.len() {
        return Err(PropagatorError::SpaceMismatch);
    }
    Ok(parent_a
        .iter()
        .zip(parent_b)
        .map(|(a, b)| if rng.random_bool(probability) { *b } else { *a })
        .collect())
}

/// Resamples each gene uniformly within its limits with `probability`.
pub fn point_mutation(
    mut genes: Vec<GeneValue>,
    probability: f64,
    space: &SearchSpace,
    rng: &mut dyn RngCore,
) -> Vec<GeneValue> {
    for (gene, spec) in genes.iter_mut().zip(space.genes()) {
        if rng.random_bool(probability) {
            *gene = spec.sample(rng);
        }
    }
    genes
}

/// Adds Gaussian noise with standard deviation `sigma_factor * (upper - lower)`
/// to every continuous gene and clamps to the limits. Integer and categorical
/// genes are left alone.
pub fn interval_mutation(
    mut genes: Vec<GeneValue>,
    sigma_factor: f64,
    space: &SearchSpace,
    rng: &mut dyn RngCore,
) -> Vec<GeneValue> {
    for (gene, spec) in genes.iter_mut().zip(space.genes()) {
        if let (GeneKind::Continuous { lower, upper }, GeneValue::Real(x)) = (&spec.kind, *gene) {
            let sigma = sigma_factor * (upper - lower);
            let noise = Normal::new(0.0, sigma)
                .expect("sigma is finite and non-negative")
                .sample(rng);
            *gene = GeneValue::Real((x + noise).clamp(*lower, *upper));
        }
    }
    genes
}

#[derive(Debug, Clone, Copy)]
pub struct SelectBest(pub usize);

impl Propagator for SelectBest {
    fn apply(&self, inds: &[&Individual], _: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        Ok(select_best(inds, self.0)?.into_iter().map(|i| (*i).clone()).collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectWorst(pub usize);

impl Propagator for SelectWorst {
    fn apply(&self, inds: &[&Individual], _: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        Ok(select_worst(inds, self.0)?.into_iter().map(|i| (*i).clone()).collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectUniform(pub usize);

impl Propagator for SelectUniform {
    fn apply(&self, inds: &[&Individual], rng: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        Ok(select_uniform(inds, self.0, rng)?.into_iter().map(|i| (*i).clone()).collect())
    }
}

/// Folds the first two inputs into one unevaluated child.
#[derive(Debug, Clone, Copy)]
pub struct UniformCrossover {
    pub probability: f64,
}

impl Propagator for UniformCrossover {
    fn apply(&self, inds: &[&Individual], rng: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        require(inds.len(), 2)?;
        let genes = uniform_crossover(&inds[0].genes, &inds[1].genes, self.probability, rng)?;
        Ok(vec![Individual::offspring(genes)])
    }
}

#[derive(Debug, Clone)]
pub struct PointMutation {
    pub probability: f64,
    pub space: Arc<SearchSpace>,
}

impl Propagator for PointMutation {
    fn apply(&self, inds: &[&Individual], rng: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        Ok(inds
            .iter()
            .map(|i| {
                Individual::offspring(point_mutation(i.genes.clone(), self.probability, &self.space, rng))
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct IntervalMutation {
    pub sigma_factor: f64,
    pub space: Arc<SearchSpace>,
}

impl Propagator for IntervalMutation {
    fn apply(&self, inds: &[&Individual], rng: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        Ok(inds
            .iter()
            .map(|i| {
                Individual::offspring(interval_mutation(i.genes.clone(), self.sigma_factor, &self.space, rng))
            })
            .collect())
    }
}

/// Ignores its input and draws one fresh individual.
#[derive(Debug, Clone)]
pub struct RandomInit {
    pub space: Arc<SearchSpace>,
}

impl Propagator for RandomInit {
    fn apply(&self, _: &[&Individual], rng: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        Ok(vec![self.space.sample(rng)])
    }
}

fn chain<'p>(
    stages: impl Iterator<Item = &'p dyn Propagator>,
    inds: &[&Individual],
    rng: &mut dyn RngCore,
) -> Result<Vec<Individual>, PropagatorError> {
    let mut current: Option<Vec<Individual>> = None;
    for stage in stages {
        let next = match &current {
            None => stage.apply(inds, rng)?,
            Some(owned) => {
                let refs: Vec<&Individual> = owned.iter().collect();
                stage.apply(&refs, rng)?
            }
        };
        current = Some(next);
    }
    Ok(current.unwrap_or_else(|| inds.iter().map(|i| (*i).clone()).collect()))
}

/// Applies stages in order, feeding each one the previous output.
pub struct Compose(pub Vec<Box<dyn Propagator>>);

impl Propagator for Compose {
    fn apply(&self, inds: &[&Individual], rng: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        chain(self.0.iter().map(|p| p.as_ref()), inds, rng)
    }
}

/// Applies each rule independently with its probability, in list order,
/// threading the intermediate result.
pub struct Stochastic {
    rules: Vec<(Box<dyn Propagator>, f64)>,
}

impl Stochastic {
    pub fn new(rules: Vec<(Box<dyn Propagator>, f64)>) -> Result<Self, PropagatorError> {
        if let Some((_, p)) = rules.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(PropagatorError::InvalidConfig(format!(
                "probability {p} is outside [0, 1]"
            )));
        }
        Ok(Self { rules })
    }
}

impl Propagator for Stochastic {
    fn apply(&self, inds: &[&Individual], rng: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        let mut owned: Vec<Individual> = inds.iter().map(|i| (*i).clone()).collect();
        for (rule, p) in &self.rules {
            if rng.random_bool(*p) {
                let refs: Vec<&Individual> = owned.iter().collect();
                owned = rule.apply(&refs, rng)?;
            }
        }
        Ok(owned)
    }
}

/// `then` when at least `threshold` individuals are given, `otherwise` below.
pub struct Conditional {
    pub threshold: usize,
    pub then: Box<dyn Propagator>,
    pub otherwise: Box<dyn Propagator>,
}

impl Conditional {
    pub fn new(
        threshold: usize,
        then: impl Propagator + 'static,
        otherwise: impl Propagator + 'static,
    ) -> Self {
        Self {
            threshold,
            then: Box::new(then),
            otherwise: Box::new(otherwise),
        }
    }
}

impl Propagator for Conditional {
    fn apply(&self, inds: &[&Individual], rng: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        if inds.len() >= self.threshold {
            self.then.apply(inds, rng)
        } else {
            self.otherwise.apply(inds, rng)
        }
    }
}

/// Random restart with `random_init_probability`; otherwise two uniform
/// parents from the `pool_size` fittest, uniform crossover, point mutation and
/// finally interval mutation.
#[derive(Debug, Clone)]
pub struct DefaultPropagator {
    config: PropagatorConfig,
    space: Arc<SearchSpace>,
}

impl DefaultPropagator {
    pub fn new(config: PropagatorConfig, space: Arc<SearchSpace>) -> Result<Self, PropagatorError> {
        config.validate()?;
        Ok(Self { config, space })
    }

    pub fn config(&self) -> &PropagatorConfig {
        &self.config
    }
}

impl Propagator for DefaultPropagator {
    fn apply(&self, inds: &[&Individual], rng: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
        let c = &self.config;
        if rng.random_bool(c.random_init_probability) {
            return Ok(vec![self.space.sample(rng)]);
        }
        let pool = select_best(inds, c.pool_size)?;
        let parents = select_uniform(&pool, 2, rng)?;
        let genes = uniform_crossover(&parents[0].genes, &parents[1].genes, c.crossover_probability, rng)?;
        let genes = point_mutation(genes, c.point_mutation_probability, &self.space, rng);
        let genes = interval_mutation(genes, c.sigma_factor, &self.space, rng);
        Ok(vec![Individual::offspring(genes)])
    }
}

/// The propagator the engine breeds with: random initialization until the
/// active population can fill a breeding pool, the default rule afterwards.
pub fn engine_propagator(
    config: &PropagatorConfig,
    space: Arc<SearchSpace>,
) -> Result<Conditional, PropagatorError> {
    let default = DefaultPropagator::new(config.clone(), space.clone())?;
    Ok(Conditional::new(config.pool_size, default, RandomInit { space }))
}

/// Runs `propagator` and returns its single child.
pub fn breed_one(
    propagator: &dyn Propagator,
    pop: &[&Individual],
    rng: &mut dyn RngCore,
) -> Result<Individual, PropagatorError> {
    let mut out = propagator.apply(pop, rng)?;
    match out.len() {
        1 => Ok(out.pop().expect("length checked")),
        n => Err(PropagatorError::InvalidConfig(format!(
            "propagator returned {n} individuals, expected 1"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{GeneSpec, Identity};
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn pop(losses: &[f64]) -> Vec<Individual> {
        losses
            .iter()
            .enumerate()
            .map(|(g, &l)| {
                Individual::evaluated(vec![GeneValue::Real(g as f64)], Identity::new(0, 0, g as u64), l)
            })
            .collect()
    }

    fn gens<T: Borrow<Individual>>(sel: &[&T]) -> Vec<u64> {
        sel.iter().map(|i| (*i).borrow().id.unwrap().generation).collect()
    }

    fn reals(genes: &[GeneValue]) -> Vec<f64> {
        genes.iter().map(GeneValue::as_f64).collect()
    }

    #[test]
    fn best_two_of_three() {
        let p = pop(&[3.0, 1.0, 2.0]);
        let sel = select_best(&p, 2).unwrap();
        assert_eq!(sel.iter().map(|i| i.loss().unwrap()).collect::<Vec<_>>(), vec![1.0, 2.0]);
    }

    #[test]
    fn best_tie_goes_to_first() {
        let p = pop(&[1.0, 1.0]);
        assert_eq!(gens(&select_best(&p, 1).unwrap()), vec![0]);
    }

    #[test]
    fn worst_of_three_and_tie() {
        let p = pop(&[3.0, 1.0, 2.0]);
        assert_eq!(select_worst(&p, 1).unwrap()[0].loss(), Some(3.0));
        let p = pop(&[4.0, 4.0, 4.0]);
        assert_eq!(gens(&select_worst(&p, 1).unwrap()), vec![0]);
    }

    #[test]
    fn selection_against_sort_oracle() {
        let mut r = rng(5);
        for _ in 0..20 {
            let losses: Vec<f64> = (0..50).map(|_| r.random_range(-10.0..10.0)).collect();
            let p = pop(&losses);
            let mut asc: Vec<usize> = (0..50).collect();
            asc.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap());
            let want: Vec<u64> = asc.iter().take(10).map(|&i| i as u64).collect();
            assert_eq!(gens(&select_best(&p, 10).unwrap()), want);
            let want: Vec<u64> = asc.iter().rev().take(5).map(|&i| i as u64).collect();
            assert_eq!(gens(&select_worst(&p, 5).unwrap()), want);
        }
    }

    #[test]
    fn selection_needs_enough_individuals() {
        let p = pop(&[1.0]);
        let err = PropagatorError::InsufficientPopulation { needed: 2, available: 1 };
        assert_eq!(select_uniform(&p, 2, &mut rng(0)).unwrap_err(), err);
        assert_eq!(select_best(&p, 2).unwrap_err(), err);
        assert_eq!(select_worst(&p, 2).unwrap_err(), err);
    }

    #[test]
    fn uniform_pair_of_two_is_forced() {
        let p = pop(&[1.0, 2.0]);
        let mut g = gens(&select_uniform(&p, 2, &mut rng(1)).unwrap());
        g.sort();
        assert_eq!(g, vec![0, 1]);
    }

    #[test]
    fn uniform_pair_frequencies() {
        // Each of the C(5,2) = 10 pairs has probability 0.1.
        let p = pop(&[0.0; 5]);
        let mut r = rng(17);
        let n = 10_000;
        let mut counts = [[0usize; 5]; 5];
        for _ in 0..n {
            let mut g = gens(&select_uniform(&p, 2, &mut r).unwrap());
            g.sort();
            counts[g[0] as usize][g[1] as usize] += 1;
        }
        for (a, row) in counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate().skip(a + 1) {
                let f = c as f64 / n as f64;
                assert!((f - 0.1).abs() < 0.02, "pair ({a},{b}) frequency {f}");
            }
        }
    }

    #[test]
    fn crossover_extremes() {
        let a = vec![GeneValue::Real(1.0), GeneValue::Real(2.0), GeneValue::Int(3)];
        let b = vec![GeneValue::Real(-1.0), GeneValue::Real(-2.0), GeneValue::Int(-3)];
        assert_eq!(uniform_crossover(&a, &b, 0.0, &mut rng(0)).unwrap(), a);
        assert_eq!(uniform_crossover(&a, &b, 1.0, &mut rng(0)).unwrap(), b);
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(uniform_crossover(&a, &a, p, &mut rng(9)).unwrap(), a);
        }
        assert_eq!(
            uniform_crossover(&a, &b[..2], 0.5, &mut rng(0)),
            Err(PropagatorError::SpaceMismatch)
        );
    }

    #[test]
    fn point_mutation_off_is_identity() {
        let space = SearchSpace::symmetric(3, 1.0);
        let genes = vec![GeneValue::Real(0.5); 3];
        assert_eq!(point_mutation(genes.clone(), 0.0, &space, &mut rng(0)), genes);
    }

    #[test]
    fn point_mutation_resample_mean() {
        let space = SearchSpace::new(vec![GeneSpec::continuous("u", 0.0, 1.0)]).unwrap();
        let mut r = rng(23);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let g = point_mutation(vec![GeneValue::Real(0.0)], 1.0, &space, &mut r);
            sum += g[0].as_f64();
        }
        let mean = sum / n as f64;
        // std of the mean: 0.289 / 100; 3 sigma ~ 0.009.
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn interval_mutation_zero_sigma_is_identity() {
        let space = SearchSpace::symmetric(4, 5.12);
        let genes: Vec<GeneValue> = [-5.12, -1.0, 0.0, 3.3].map(GeneValue::Real).to_vec();
        assert_eq!(interval_mutation(genes.clone(), 0.0, &space, &mut rng(2)), genes);
    }

    #[test]
    fn interval_mutation_clamps_at_upper_bound() {
        let space = SearchSpace::symmetric(1, 5.12);
        let mut r = rng(4);
        let mut clamped = 0;
        for _ in 0..1000 {
            let g = interval_mutation(vec![GeneValue::Real(5.12)], 0.05, &space, &mut r);
            let v = g[0].as_f64();
            assert!(v <= 5.12);
            if v == 5.12 {
                clamped += 1;
            }
        }
        // Every positive perturbation is clamped: roughly half.
        assert!((400..600).contains(&clamped), "clamped {clamped}");
    }

    #[test]
    fn interval_mutation_skips_discrete_genes() {
        let space = SearchSpace::new(vec![
            GeneSpec::integer("n", 0, 100),
            GeneSpec::categorical("c", ["a", "b", "c"]),
        ])
        .unwrap();
        let genes = vec![GeneValue::Int(50), GeneValue::Category(1)];
        assert_eq!(interval_mutation(genes.clone(), 0.5, &space, &mut rng(2)), genes);
    }

    #[test]
    fn interval_mutation_sigma() {
        // sigma = 0.05 * 10.24 = 0.512. Clamping at 10 sigma is negligible.
        let space = SearchSpace::symmetric(1, 5.12);
        let mut r = rng(31);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| interval_mutation(vec![GeneValue::Real(0.0)], 0.05, &space, &mut r)[0].as_f64())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 0.512).abs() < 0.02, "std {}", var.sqrt());
    }

    struct Shift(f64);

    impl Propagator for Shift {
        fn apply(&self, inds: &[&Individual], _: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
            Ok(inds
                .iter()
                .map(|i| Individual::offspring(i.genes.iter().map(|g| GeneValue::Real(g.as_f64() + self.0)).collect()))
                .collect())
        }
    }

    struct Scale(f64);

    impl Propagator for Scale {
        fn apply(&self, inds: &[&Individual], _: &mut dyn RngCore) -> Result<Vec<Individual>, PropagatorError> {
            Ok(inds
                .iter()
                .map(|i| Individual::offspring(i.genes.iter().map(|g| GeneValue::Real(g.as_f64() * self.0)).collect()))
                .collect())
        }
    }

    #[test]
    fn stochastic_extremes() {
        let p = pop(&[1.0]);
        let refs: Vec<&Individual> = p.iter().collect();
        let always = Stochastic::new(vec![(Box::new(Shift(2.0)), 1.0)]).unwrap();
        assert_eq!(reals(&always.apply(&refs, &mut rng(0)).unwrap()[0].genes), vec![2.0]);
        let never = Stochastic::new(vec![(Box::new(Shift(2.0)), 0.0)]).unwrap();
        assert_eq!(reals(&never.apply(&refs, &mut rng(0)).unwrap()[0].genes), vec![0.0]);
        assert!(Stochastic::new(vec![(Box::new(Shift(2.0)), 1.5)]).is_err());
    }

    #[test]
    fn stochastic_both_on_is_sequential_composition() {
        let p = pop(&[1.0, 2.0]);
        let refs: Vec<&Individual> = p.iter().collect();
        let both = Stochastic::new(vec![(Box::new(Shift(3.0)), 1.0), (Box::new(Scale(2.0)), 1.0)]).unwrap();
        let got = both.apply(&refs, &mut rng(0)).unwrap();
        // manual chaining
        let step1 = Shift(3.0).apply(&refs, &mut rng(0)).unwrap();
        let r1: Vec<&Individual> = step1.iter().collect();
        let want = Scale(2.0).apply(&r1, &mut rng(0)).unwrap();
        assert_eq!(got, want);
        assert_eq!(reals(&got[1].genes), vec![8.0]);
    }

    #[test]
    fn conditional_switches_on_population_size() {
        let cond = Conditional::new(2, Shift(1.0), Shift(-1.0));
        assert!(cond.apply(&[], &mut rng(0)).unwrap().is_empty());
        let p = pop(&[1.0]);
        let refs: Vec<&Individual> = p.iter().collect();
        assert_eq!(reals(&cond.apply(&refs, &mut rng(0)).unwrap()[0].genes), vec![-1.0]);
        let p = pop(&[1.0, 2.0]);
        let refs: Vec<&Individual> = p.iter().collect();
        let out = cond.apply(&refs, &mut rng(0)).unwrap();
        assert_eq!(reals(&out[0].genes), vec![1.0]);
        assert_eq!(reals(&out[1].genes), vec![2.0]);
    }

    #[test]
    fn conditional_with_random_init_below_threshold() {
        let space = Arc::new(SearchSpace::symmetric(2, 5.12));
        let cond = Conditional::new(2, SelectBest(1), RandomInit { space: space.clone() });
        let out = cond.apply(&[], &mut rng(8)).unwrap();
        assert_eq!(out, vec![space.sample(&mut rng(8))]);
    }

    #[test]
    fn compose_threads_stages() {
        let space = Arc::new(SearchSpace::symmetric(1, 100.0));
        let p = pop(&[5.0, 1.0, 3.0]);
        let refs: Vec<&Individual> = p.iter().collect();
        let pipeline = Compose(vec![
            Box::new(SelectBest(2)),
            Box::new(UniformCrossover { probability: 0.0 }),
            Box::new(IntervalMutation { sigma_factor: 0.0, space }),
        ]);
        let out = pipeline.apply(&refs, &mut rng(0)).unwrap();
        assert_eq!(reals(&out[0].genes), vec![1.0]);
        assert!(!out[0].is_evaluated());
    }

    #[test]
    fn config_validation() {
        assert!(PropagatorConfig::default().validate().is_ok());
        let bad = [
            PropagatorConfig { pool_size: 1, ..Default::default() },
            PropagatorConfig { sigma_factor: 0.0, ..Default::default() },
            PropagatorConfig { crossover_probability: 1.1, ..Default::default() },
            PropagatorConfig { random_init_probability: -0.1, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    fn distinct_pop(n: usize, space: &SearchSpace, seed: u64) -> Vec<Individual> {
        let mut r = rng(seed);
        (0..n)
            .map(|g| {
                let mut ind = space.sample(&mut r);
                ind.set_loss(g as f64 * 0.5 + 1.0).unwrap();
                ind.id = Some(Identity::new(0, 0, g as u64));
                ind
            })
            .collect()
    }

    #[test]
    fn default_with_certain_restart_is_sampling() {
        let space = Arc::new(SearchSpace::symmetric(3, 5.12));
        let config = PropagatorConfig { random_init_probability: 1.0, ..Default::default() };
        let prop = DefaultPropagator::new(config, space.clone()).unwrap();
        for seed in 0..20 {
            let child = breed_one(&prop, &[], &mut rng(seed)).unwrap();
            // random_bool(1.0) draws nothing, so the stream is the sampler's.
            assert_eq!(child, space.sample(&mut rng(seed)));
        }
    }

    #[test]
    fn default_with_everything_off_clones_parent_a() {
        let space = Arc::new(SearchSpace::symmetric(3, 5.12));
        let p = distinct_pop(30, &space, 1);
        let refs: Vec<&Individual> = p.iter().collect();
        let prop = DefaultPropagator {
            config: PropagatorConfig {
                pool_size: 20,
                crossover_probability: 0.0,
                point_mutation_probability: 0.0,
                sigma_factor: 0.0,
                random_init_probability: 0.0,
            },
            space,
        };
        for seed in 0..20 {
            let child = breed_one(&prop, &refs, &mut rng(seed)).unwrap();
            let mut r = rng(seed);
            let _ = r.random_bool(0.0);
            let pool = select_best(&refs, 20).unwrap();
            let parents = select_uniform(&pool, 2, &mut r).unwrap();
            assert_eq!(child.genes, parents[0].genes);
            assert!(parents[0].loss().unwrap() < 1.0 + 20.0 * 0.5);
        }
    }

    #[test]
    fn default_is_reproducible() {
        let space = Arc::new(SearchSpace::symmetric(5, 5.12));
        let p = distinct_pop(25, &space, 2);
        let refs: Vec<&Individual> = p.iter().collect();
        let a = DefaultPropagator::new(PropagatorConfig::default(), space.clone()).unwrap();
        let b = DefaultPropagator::new(PropagatorConfig::default(), space).unwrap();
        for seed in 0..50 {
            let x = breed_one(&a, &refs, &mut rng(seed)).unwrap();
            let y = breed_one(&b, &refs, &mut rng(seed)).unwrap();
            let bits = |i: &Individual| i.genes.iter().map(|g| g.as_f64().to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x), bits(&y));
        }
    }

    #[test]
    fn default_needs_a_full_pool() {
        let space = Arc::new(SearchSpace::symmetric(2, 5.12));
        let config = PropagatorConfig { random_init_probability: 0.0, ..Default::default() };
        let prop = DefaultPropagator::new(config, space.clone()).unwrap();
        let p = distinct_pop(5, &space, 3);
        let refs: Vec<&Individual> = p.iter().collect();
        assert_eq!(
            breed_one(&prop, &refs, &mut rng(0)),
            Err(PropagatorError::InsufficientPopulation { needed: 20, available: 5 })
        );
        // Guarded by the conditional, sparse populations fall back to sampling.
        let guarded = engine_propagator(&PropagatorConfig { random_init_probability: 0.0, ..Default::default() }, space).unwrap();
        assert!(breed_one(&guarded, &refs, &mut rng(0)).is_ok());
    }

    proptest! {
        #[test]
        fn outputs_stay_in_bounds(
            space in crate::space::tests::arb_space(),
            n in 0usize..30,
            pool in 2usize..10,
            cx in 0.0f64..=1.0,
            pm in 0.0f64..=1.0,
            sigma in 0.001f64..2.0,
            ri in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let space = Arc::new(space);
            let p = distinct_pop(n, &space, seed);
            let before = p.clone();
            let refs: Vec<&Individual> = p.iter().collect();
            let config = PropagatorConfig {
                pool_size: pool,
                crossover_probability: cx,
                point_mutation_probability: pm,
                sigma_factor: sigma,
                random_init_probability: ri,
            };
            let prop = engine_propagator(&config, space.clone()).unwrap();
            let child = breed_one(&prop, &refs, &mut rng(seed)).unwrap();
            prop_assert!(space.admits(&child.genes));
            prop_assert!(!child.is_evaluated());
            let again = breed_one(&prop, &refs, &mut rng(seed)).unwrap();
            prop_assert_eq!(child, again);
            prop_assert_eq!(p, before);
        }

        #[test]
        fn best_and_worst_partition(losses in prop::collection::hash_set(-1000i32..1000, 1..20), k_frac in 0.0f64..=1.0) {
            let losses: Vec<f64> = losses.into_iter().map(f64::from).collect();
            let p = pop(&losses);
            let k = ((losses.len() as f64) * k_frac).floor() as usize;
            let mut all: Vec<u64> = gens(&select_best(&p, k).unwrap());
            all.extend(gens(&select_worst(&p, losses.len() - k).unwrap()));
            all.sort();
            prop_assert_eq!(all, (0..losses.len() as u64).collect::<Vec<_>>());
        }
    }
}
