//! Condition-versus-baseline comparisons with a Bonferroni family.

use serde::{Deserialize, Serialize};

use crate::stats::{bonferroni, mann_whitney, stars, StatResult};
use crate::summary::ConditionSummary;
use crate::SimError;

/// One condition's observations in the statistical unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub condition: String,
    pub values: Vec<f64>,
}

impl Sample {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

impl From<&ConditionSummary> for Sample {
    fn from(s: &ConditionSummary) -> Self {
        Sample {
            condition: s.condition.clone(),
            values: s.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub condition: String,
    pub baseline: String,
    pub mean: f64,
    pub baseline_mean: f64,
    pub stat: StatResult,
    /// Family size used for the adjustment.
    pub m: usize,
    /// Marker for the adjusted p: `***`, `**`, `*` or `ns`.
    pub verdict: String,
}

impl Comparison {
    pub fn diff(&self) -> f64 {
        self.mean - self.baseline_mean
    }
}

/// Compares every sample against the baseline; the family is all of them.
pub fn compare_samples(samples: &[Sample], baseline: &str) -> Result<Vec<Comparison>, SimError> {
    if samples.len() < 2 {
        return Err(SimError::Stats("at least two conditions are required".into()));
    }
    let base = samples
        .iter()
        .find(|s| s.condition == baseline)
        .ok_or_else(|| SimError::Stats(format!("baseline {baseline:?} not among the conditions")))?;
    let others: Vec<&Sample> = samples.iter().filter(|s| s.condition != baseline).collect();
    let m = others.len();
    others
        .into_iter()
        .map(|s| {
            let mut stat = mann_whitney(&s.values, &base.values)?;
            stat.p_adjusted = bonferroni(stat.p, m);
            Ok(Comparison {
                condition: s.condition.clone(),
                baseline: baseline.to_string(),
                mean: s.mean(),
                baseline_mean: base.mean(),
                verdict: stars(stat.p_adjusted).to_string(),
                stat,
                m,
            })
        })
        .collect()
}

pub fn compare_conditions(summaries: &[ConditionSummary], baseline: &str) -> Result<Vec<Comparison>, SimError> {
    let samples: Vec<Sample> = summaries.iter().map(Sample::from).collect();
    compare_samples(&samples, baseline)
}
