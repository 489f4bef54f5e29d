//! Mapping-first search: gradient descent over every layer's tiling factors
//! at once, with hardware inferred from the mappings rather than searched.

mod adam;
mod gd;
mod random;
mod refine;
mod start;
mod trace;

pub use adam::Adam;
pub use gd::{best_orderings, run_gd, SearchResult};
pub use random::random_search;
pub use refine::{refine_mappings_fixed_hw, repair_to_fit, RefineResult};
pub use start::{heuristic_start_mappings, random_hardware, reject_start_point, REJECT_FACTOR};
pub use trace::{EntryKind, SearchTrace, TraceEntry};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingStrategy {
    /// Orderings stay at their start values (WS).
    #[default]
    None,
    /// At each rounding, per layer, try all 27 per-level combinations.
    Iterative,
    /// Softmax-weighted mixture of WS/IS/OS inside the loss.
    Softmax,
}

impl std::str::FromStr for OrderingStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OrderingStrategy::None),
            "iterative" => Ok(OrderingStrategy::Iterative),
            "softmax" => Ok(OrderingStrategy::Softmax),
            other => Err(Error::Config(format!("unknown ordering strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OrderingStrategy::None => "none",
            OrderingStrategy::Iterative => "iterative",
            OrderingStrategy::Softmax => "softmax",
        })
    }
}

/// What counts against the evaluation budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Only full-network evaluations of rounded mappings (start points and
    /// rounding events).
    #[default]
    Rounded,
    /// Also every candidate tried by the iterative ordering search.
    WithOrderingSearch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub n_start_points: usize,
    pub steps_per_start: usize,
    pub rounding_period: usize,
    pub ordering_strategy: OrderingStrategy,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Maximum number of recorded evaluations.
    pub budget: Option<usize>,
    pub budget_mode: BudgetMode,
    /// Also evaluate each trace entry with the enumeration oracle.
    pub oracle_check: bool,
    /// Candidates drawn before giving up on filling `n_start_points`.
    pub max_start_attempts: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_start_points: 7,
            steps_per_start: 1490,
            rounding_period: 500,
            ordering_strategy: OrderingStrategy::None,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            budget: None,
            budget_mode: BudgetMode::Rounded,
            oracle_check: false,
            max_start_attempts: 100,
        }
    }
}

impl SearchConfig {
    /// 7 starts, 1490 steps, rounding every 500.
    pub fn long_schedule() -> Self {
        Self::default()
    }

    /// The shorter schedule used when comparing ordering strategies.
    pub fn ordering_study() -> Self {
        SearchConfig {
            steps_per_start: 890,
            rounding_period: 300,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_start_points == 0 || self.steps_per_start == 0 || self.rounding_period == 0 {
            return Err(Error::Config("start points, steps and rounding period must be positive".into()));
        }
        if self.rounding_period > self.steps_per_start {
            return Err(Error::Config(format!(
                "rounding period {} exceeds steps per start {}",
                self.rounding_period, self.steps_per_start
            )));
        }
        if self.budget == Some(0) {
            return Err(Error::Config("budget must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning rate must be positive and betas in [0, 1)".into()));
        }
        if self.max_start_attempts < self.n_start_points {
            return Err(Error::Config("max_start_attempts is below n_start_points".into()));
        }
        Ok(())
    }
}
