//! Stage III: fused chain scores, the risk floor, bootstrap dominance, and
//! chain arbitration.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

use crate::chain::{Chain, PerChain};
use crate::evidence::{SignalKind, SignalSupport};
use crate::package::Label;
use crate::thresholds::Thresholds;
use crate::verification::VerifierJudgment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainScores {
    pub m: PerChain<f64>,
    pub floor: Label,
    pub boot_dominant: bool,
}

/// `m_c = s_c + beta_c * q_c`; without a judgment `q_c` is zero.
pub fn fuse(
    support: &SignalSupport,
    judgment: Option<&VerifierJudgment>,
    cfg: &Thresholds,
) -> PerChain<f64> {
    PerChain::from_fn(|c| {
        let s = support.get(c.signal());
        match judgment {
            Some(j) => s + cfg.beta[c] * j.q[c],
            None => s,
        }
    })
}

/// Lower bound on severity from the fused scores.
pub fn risk_floor(m: &PerChain<f64>, support: &SignalSupport, cfg: &Thresholds) -> Label {
    if m.overriding.max(m.transfer) >= cfg.gamma_m {
        Label::Malicious
    } else if m.bootstrap >= cfg.gamma_b || support.get(SignalKind::ToolExecution) >= cfg.tau_t {
        Label::Suspicious
    } else {
        Label::Benign
    }
}

/// Caps a malicious floor at suspicious when every chain that reached
/// `gamma_m` got there only through the verifier term and the verifier's
/// confidence on those chains is below `floor_confidence`.
pub fn confidence_gated_floor(
    floor: Label,
    m: &PerChain<f64>,
    support: &SignalSupport,
    judgment: Option<&VerifierJudgment>,
    cfg: &Thresholds,
) -> Label {
    let Some(judgment) = judgment else {
        return floor;
    };
    if floor != Label::Malicious {
        return floor;
    }
    let deciding: Vec<Chain> = [Chain::Override, Chain::Transfer]
        .into_iter()
        .filter(|c| m[*c] >= cfg.gamma_m)
        .collect();
    let all_weak = deciding.iter().all(|c| {
        support.get(c.signal()) < cfg.gamma_m && judgment.kappa[*c] < cfg.floor_confidence
    });
    if !deciding.is_empty() && all_weak {
        Label::Suspicious
    } else {
        floor
    }
}

static NEGATED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(no|none|not|n/a|absent|unsupported)\b").expect("valid regex"));

/// A rationale asserts its chain when it is non-empty and does not open with a negation.
pub fn asserts_chain(rationale: &str) -> bool {
    !rationale.trim().is_empty() && !NEGATED.is_match(rationale)
}

/// Whether bootstrap rather than transfer dominates a mixed-chain package.
///
/// True when `q_b - q_t >= boot_margin`, or when the bootstrap chain clears
/// the yes threshold with an asserting rationale while transfer does not.
pub fn boot_dominance(judgment: &VerifierJudgment, cfg: &Thresholds) -> bool {
    let (qb, qt) = (judgment.q.bootstrap, judgment.q.transfer);
    qb - qt >= cfg.boot_margin
        || (qb >= cfg.yes_threshold
            && asserts_chain(&judgment.rationale.bootstrap)
            && qt < cfg.yes_threshold)
}

/// The arbitration cases alone, evaluated top to bottom.
#[allow(clippy::if_same_then_else)]
pub fn arbitration_rule(m: &PerChain<f64>, boot_dominant: bool, cfg: &Thresholds) -> Label {
    if m.overriding >= cfg.gamma_o {
        Label::Malicious
    } else if m.transfer >= cfg.gamma_t && !boot_dominant {
        Label::Malicious
    } else if m.bootstrap >= cfg.gamma_b || boot_dominant {
        Label::Suspicious
    } else {
        Label::Benign
    }
}

/// Stage-one label: the arbitration result, raised to the floor.
///
/// When bootstrap dominates and override is below `gamma_o`, the floor
/// counts as at most suspicious, so a transfer-driven malicious floor cannot
/// undo the bootstrap demotion.
pub fn arbitrate(m: &PerChain<f64>, boot_dominant: bool, floor: Label, cfg: &Thresholds) -> Label {
    let floor = if boot_dominant && m.overriding < cfg.gamma_o {
        floor.min(Label::Suspicious)
    } else {
        floor
    };
    arbitration_rule(m, boot_dominant, cfg).max(floor)
}
