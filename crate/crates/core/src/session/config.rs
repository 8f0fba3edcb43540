use serde::{Deserialize, Serialize};

use crate::ledger::{ConsequenceMode, ConsequencePolicy};
use crate::payment::{PaymentPolicy, PriceContext};
use crate::scheduler::{PolicyKind, SchedulePolicy};
use crate::workflow::{MarkerNoise, MarkerSource};

use super::EngineError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkflowSpec {
    #[default]
    Single,
    Decomposition {
        source: MarkerSource,
        #[serde(default)]
        noise: MarkerNoise,
    },
    Iterative {
        #[serde(default = "default_max_iterations")]
        max_iterations: u32,
    },
}

fn default_max_iterations() -> u32 {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSelection {
    /// Each worker sees items in an independent random order.
    #[default]
    Random,
    /// Highest advertised price first; ties in random order.
    HighPayFirst,
}

/// Everything that defines one experimental condition or live deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub name: String,
    /// `None` disables visible golds.
    #[serde(default)]
    pub schedule: Option<SchedulePolicy>,
    #[serde(default)]
    pub consequence: ConsequencePolicy,
    pub payment: PaymentPolicy,
    #[serde(default)]
    pub workflow: WorkflowSpec,
    pub responses_per_scene: usize,
    #[serde(default)]
    pub task_selection: TaskSelection,
    #[serde(default)]
    pub price_context: PriceContext,
    /// Unknown workers are registered on their first request.
    #[serde(default = "yes")]
    pub open_enrollment: bool,
    /// Workers registered up front.
    #[serde(default)]
    pub roster: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl ConditionSpec {
    pub fn new(name: impl Into<String>, payment: PaymentPolicy, responses_per_scene: usize) -> Self {
        Self {
            name: name.into(),
            schedule: None,
            consequence: ConsequencePolicy::default(),
            payment,
            workflow: WorkflowSpec::Single,
            responses_per_scene,
            task_selection: TaskSelection::Random,
            price_context: PriceContext::default(),
            open_enrollment: true,
            roster: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.responses_per_scene == 0 {
            return bad("responses_per_scene must be at least 1".into());
        }
        if let Some(s) = &self.schedule {
            s.validate().map_err(|e| EngineError::Config(e.to_string()))?;
            if self.workflow != WorkflowSpec::Single {
                return bad("visible golds require the single-pass workflow".into());
            }
            if let PolicyKind::Dynamic { t_min, .. } = s.kind {
                if self.consequence.mode != ConsequenceMode::None && t_min != self.consequence.tiers.t_min {
                    return bad(format!(
                        "dynamic t_min {t_min} differs from consequence t_min {}",
                        self.consequence.tiers.t_min
                    ));
                }
            }
        } else if self.consequence.mode != ConsequenceMode::None {
            return bad("consequences require a gold schedule".into());
        }
        self.consequence
            .tiers
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        self.payment
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        if matches!(self.payment, PaymentPolicy::PostTaskBonus { .. }) && self.workflow != WorkflowSpec::Single {
            return bad("post-task bonus requires the single-pass workflow".into());
        }
        if let WorkflowSpec::Decomposition { noise, .. } = &self.workflow {
            noise.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        }
        if let WorkflowSpec::Iterative { max_iterations: 0 } = self.workflow {
            return bad("max_iterations must be at least 1".into());
        }
        Ok(())
    }
}
