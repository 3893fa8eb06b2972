use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::PerChain;

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("threshold `{name}` = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("tau_minus ({lo}) must not exceed tau_plus ({hi})")]
    InvertedBand { lo: f64, hi: f64 },
}

/// Every tunable cut-off used by the decision chain.
///
/// Only `yes_threshold` (0.60) and `floor_confidence` (0.70) have published
/// values; the rest are local defaults chosen so that clearly benign and
/// clearly malicious packages take the fast path without verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Lower edge of the uncertainty band on the peak signal.
    pub tau_minus: f64,
    /// Upper edge of the uncertainty band.
    pub tau_plus: f64,
    /// Tool-execution cut-off (strict in the trigger, inclusive in the floor).
    pub tau_t: f64,
    /// Chain-support ceiling for the tool-only trigger.
    pub tau_c: f64,
    pub gamma_m: f64,
    pub gamma_o: f64,
    pub gamma_t: f64,
    pub gamma_b: f64,
    /// Verifier weight per chain in the fused score.
    #[serde(deserialize_with = "beta_with_defaults")]
    pub beta: PerChain<f64>,
    /// Minimum rewrite confidence for anchor promotion.
    pub eta: f64,
    pub yes_threshold: f64,
    pub floor_confidence: f64,
    pub feature_on: f64,
    /// Minimum q_b - q_t for bootstrap to dominate transfer.
    pub boot_margin: f64,
    /// When false, the uncertainty band reads only the three chain signals.
    pub peak_over_all_signals: bool,
}

const DEFAULT_BETA: f64 = 0.5;

/// Chains missing from a partial `[beta]` table keep the default weight.
fn beta_with_defaults<'de, D: serde::Deserializer<'de>>(d: D) -> Result<PerChain<f64>, D::Error> {
    let partial = PerChain::<Option<f64>>::deserialize(d)?;
    Ok(PerChain::from_fn(|c| partial[c].unwrap_or(DEFAULT_BETA)))
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_minus: 0.35,
            tau_plus: 0.75,
            tau_t: 0.60,
            tau_c: 0.30,
            gamma_m: 0.70,
            gamma_o: 0.70,
            gamma_t: 0.70,
            gamma_b: 0.55,
            beta: PerChain::splat(DEFAULT_BETA),
            eta: 0.70,
            yes_threshold: 0.60,
            floor_confidence: 0.70,
            feature_on: 0.50,
            boot_margin: 0.15,
            peak_over_all_signals: true,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        let named = [
            ("tau_minus", self.tau_minus),
            ("tau_plus", self.tau_plus),
            ("tau_t", self.tau_t),
            ("tau_c", self.tau_c),
            ("gamma_m", self.gamma_m),
            ("gamma_o", self.gamma_o),
            ("gamma_t", self.gamma_t),
            ("gamma_b", self.gamma_b),
            ("beta.override", self.beta.overriding),
            ("beta.transfer", self.beta.transfer),
            ("beta.bootstrap", self.beta.bootstrap),
            ("eta", self.eta),
            ("yes_threshold", self.yes_threshold),
            ("floor_confidence", self.floor_confidence),
            ("feature_on", self.feature_on),
            ("boot_margin", self.boot_margin),
        ];
        for (name, value) in named {
            if !(0.0..=1.0).contains(&value) {
                return Err(ThresholdError::OutOfRange { name, value });
            }
        }
        if self.tau_minus > self.tau_plus {
            return Err(ThresholdError::InvertedBand {
                lo: self.tau_minus,
                hi: self.tau_plus,
            });
        }
        Ok(())
    }
}
