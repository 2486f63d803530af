//! Query cost accounting and nested query-budget subsets.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{seeded_shuffle, SplitManifest};
use crate::gateway::UsageStats;

const PICO_PER_USD: u128 = 1_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EconomicsError {
    #[error("rate {0} must be finite and non-negative")]
    InvalidRate(f64),
    #[error("budgets must be strictly ascending and at least 1")]
    NotAscending,
    #[error("budget {budget} exceeds the victim split of {available}")]
    BudgetTooLarge { budget: usize, available: usize },
}

/// Per-million-token prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingModel {
    pub input_usd_per_million: f64,
    pub output_usd_per_million: f64,
    /// Bill reported reasoning tokens at the output rate.
    pub reasoning_billed_as_output: bool,
    /// Whether the provider already counts reasoning tokens inside
    /// `completion_tokens` (the common convention).
    #[serde(default = "default_true")]
    pub reasoning_included_in_completion: bool,
}

fn default_true() -> bool {
    true
}

impl PricingModel {
    pub fn new(input_usd_per_million: f64, output_usd_per_million: f64) -> Self {
        Self {
            input_usd_per_million,
            output_usd_per_million,
            reasoning_billed_as_output: true,
            reasoning_included_in_completion: true,
        }
    }

    pub fn validate(&self) -> Result<(), EconomicsError> {
        for rate in [self.input_usd_per_million, self.output_usd_per_million] {
            if !rate.is_finite() || rate < 0.0 {
                return Err(EconomicsError::InvalidRate(rate));
            }
        }
        Ok(())
    }

    /// Rate in picodollars per token. USD per million tokens times 1e6.
    fn pico_per_token(rate_usd_per_million: f64) -> u128 {
        (rate_usd_per_million * 1e6).round() as u128
    }

    pub fn billable_output(&self, usage: &UsageStats) -> u64 {
        let separate_reasoning = match usage.reasoning_tokens {
            Some(r)
                if self.reasoning_billed_as_output && !self.reasoning_included_in_completion =>
            {
                r
            }
            _ => 0,
        };
        usage.completion_tokens + separate_reasoning
    }

    /// Cost of `usage`. Exact integer arithmetic in picodollars, so the
    /// result is additive over usage sums.
    pub fn cost(&self, usage: &UsageStats) -> UsdAmount {
        let input =
            u128::from(usage.prompt_tokens) * Self::pico_per_token(self.input_usd_per_million);
        let output = u128::from(self.billable_output(usage))
            * Self::pico_per_token(self.output_usd_per_million);
        UsdAmount {
            picodollars: input + output,
        }
    }
}

/// A dollar amount held exactly in picodollars; rounded to cents only for display.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct UsdAmount {
    pub picodollars: u128,
}

impl UsdAmount {
    pub fn as_usd(self) -> f64 {
        self.picodollars as f64 / PICO_PER_USD as f64
    }

    pub fn cents(self) -> u128 {
        (self.picodollars + PICO_PER_USD / 200) / (PICO_PER_USD / 100)
    }
}

impl Add for UsdAmount {
    type Output = UsdAmount;

    fn add(self, rhs: Self) -> Self {
        UsdAmount {
            picodollars: self.picodollars + rhs.picodollars,
        }
    }
}

impl fmt::Display for UsdAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cents = self.cents();
        write!(f, "${}.{:02}", cents / 100, cents % 100)
    }
}

/// Ascending query budgets evaluated as nested prefixes of one seeded order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub budgets: Vec<usize>,
    pub seed: u64,
}

impl BudgetPlan {
    pub fn validate(&self, available: usize) -> Result<(), EconomicsError> {
        if self.budgets.first() == Some(&0) || self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EconomicsError::NotAscending);
        }
        match self.budgets.last() {
            Some(&budget) if budget > available => {
                Err(EconomicsError::BudgetTooLarge { budget, available })
            }
            _ => Ok(()),
        }
    }

    /// The seeded order of the victim split that every budget is a prefix of.
    pub fn order(&self, manifest: &SplitManifest) -> Vec<String> {
        let mut ids = manifest.victim_ids.clone();
        seeded_shuffle(&mut ids, self.seed);
        ids
    }

    pub fn subsets(
        &self,
        manifest: &SplitManifest,
    ) -> Result<BTreeMap<usize, Vec<String>>, EconomicsError> {
        self.validate(manifest.victim_ids.len())?;
        let order = self.order(manifest);
        Ok(self
            .budgets
            .iter()
            .map(|&b| (b, order[..b].to_vec()))
            .collect())
    }
}

/// Victim ids for a single budget under `plan`'s seeded order.
pub fn budget_subset(
    manifest: &SplitManifest,
    budget: usize,
    seed: u64,
) -> Result<Vec<String>, EconomicsError> {
    let plan = BudgetPlan {
        budgets: vec![budget],
        seed,
    };
    Ok(plan
        .subsets(manifest)?
        .remove(&budget)
        .expect("budget present"))
}
