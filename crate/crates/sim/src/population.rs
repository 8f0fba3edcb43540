//! Worker populations: parameter distributions and power-law participation.

use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use vgold_core::seed;

use crate::model::SimWorker;
use crate::SimError;

/// Distribution every worker of a population is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    /// Workers active at once; departures are replaced by fresh draws.
    pub size: usize,
    /// Hard cap on draws before a condition is declared unfillable.
    pub max_draws: usize,
    /// Pareto tail exponent of intended HITs per worker.
    pub participation_exponent: f64,
    /// Pareto scale: the smallest intended HIT count.
    pub min_capacity: f64,
    pub max_capacity: u32,
    pub spam_fraction: f64,
    /// Beta shape parameters.
    pub skill: (f64, f64),
    pub diligence: (f64, f64),
    pub load_sensitivity: (f64, f64),
    pub small_object_penalty: (f64, f64),
    pub learn_rate: (f64, f64),
    pub dropout: (f64, f64),
    /// Median seconds per box and log-sigma.
    pub speed_median: f64,
    pub speed_sigma: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            size: 30,
            max_draws: 5000,
            participation_exponent: 1.5,
            min_capacity: 6.0,
            max_capacity: 400,
            spam_fraction: 0.04,
            skill: (6.0, 2.0),
            diligence: (5.0, 2.0),
            load_sensitivity: (0.02, 0.07),
            small_object_penalty: (0.0, 0.12),
            learn_rate: (0.005, 0.02),
            dropout: (0.0, 0.02),
            speed_median: 33.0,
            speed_sigma: 0.3,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidPopulation(m.into()));
        if self.size == 0 || self.max_draws < self.size {
            return bad("size must be positive and max_draws >= size");
        }
        if !(self.participation_exponent > 0.0 && self.min_capacity >= 1.0 && self.max_capacity >= 1) {
            return bad("participation exponent must be positive and capacities >= 1");
        }
        if !(0.0..=1.0).contains(&self.spam_fraction) {
            return bad("spam_fraction must lie in [0, 1]");
        }
        for (a, b) in [self.skill, self.diligence] {
            if !(a > 0.0 && b > 0.0) {
                return bad("beta shapes must be positive");
            }
        }
        for (lo, hi) in [self.load_sensitivity, self.small_object_penalty, self.learn_rate, self.dropout] {
            if !(0.0 <= lo && lo <= hi) {
                return bad("uniform ranges must satisfy 0 <= lo <= hi");
            }
        }
        if self.learn_rate.1 > 1.0 || self.dropout.1 > 1.0 {
            return bad("learn_rate and dropout ranges must stay within [0, 1]");
        }
        if !(self.speed_median > 0.0 && self.speed_sigma >= 0.0) {
            return bad("speed parameters must be positive");
        }
        Ok(())
    }

    /// Intended HITs from the Pareto quantile of `u` in (0, 1].
    pub fn capacity(&self, u: f64) -> u32 {
        let x = self.min_capacity * u.max(f64::MIN_POSITIVE).powf(-1.0 / self.participation_exponent);
        (x.ceil() as u32).clamp(1, self.max_capacity)
    }

    /// The `index`-th worker of the population; a pure function of its inputs.
    pub fn draw(&self, population_seed: u64, index: usize) -> SimWorker {
        let mut rng = seed::rng(seed::derive_index(population_seed, index as u64));
        let uniform = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| {
            let u: f64 = rng.random();
            lo + u * (hi - lo)
        };
        let skill = Beta::new(self.skill.0, self.skill.1).expect("validated shapes").sample(&mut rng);
        let diligence = Beta::new(self.diligence.0, self.diligence.1).expect("validated shapes").sample(&mut rng);
        let load_sensitivity = uniform(&mut rng, self.load_sensitivity);
        let small_object_penalty = uniform(&mut rng, self.small_object_penalty);
        let learn_rate = uniform(&mut rng, self.learn_rate);
        let dropout_propensity = uniform(&mut rng, self.dropout);
        let base_speed = LogNormal::new(self.speed_median.ln(), self.speed_sigma)
            .expect("validated speed")
            .sample(&mut rng);
        let capacity = self.capacity(1.0 - rng.random::<f64>());
        let spam = rng.random::<f64>() < self.spam_fraction;
        SimWorker {
            worker_id: format!("w{index:04}"),
            skill,
            diligence,
            load_sensitivity,
            small_object_penalty,
            learn_rate: if spam { 0.0 } else { learn_rate },
            dropout_propensity,
            spam,
            base_speed,
            capacity,
        }
    }
}

/// A materialised prefix of a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPopulation {
    pub workers: Vec<SimWorker>,
    pub seed: u64,
}

impl SimPopulation {
    pub fn generate(spec: &PopulationSpec, population_seed: u64, count: usize) -> Result<Self, SimError> {
        spec.validate()?;
        Ok(Self {
            workers: (0..count).map(|i| spec.draw(population_seed, i)).collect(),
            seed: population_seed,
        })
    }
}
