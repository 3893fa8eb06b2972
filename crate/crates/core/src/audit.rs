//! Decision records and the human-readable evidence manifest.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::chain::PerChain;
use crate::consolidation::PromotionRecord;
use crate::evidence::{AggregatedFeatures, EvidenceVector, RuleMatch, SignalKind, SignalSupport};
use crate::package::{Label, SkillPackage};
use crate::pipeline::PipelineStage;
use crate::verification::VerifierJudgment;

pub const DECISION_SCHEMA_VERSION: u32 = 1;

/// Matches kept per active signal in the evidence manifest.
pub const MATCHES_PER_SIGNAL: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub pipeline: PipelineStage,
    pub support: SignalSupport,
    pub features: AggregatedFeatures,
    pub triggered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgment: Option<VerifierJudgment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<PerChain<f64>>,
    pub floor: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boot_dominant: Option<bool>,
    pub y1: Label,
    /// Minimum verifier kappa, 1.0 without a verifier call, 0.0 after a failed one.
    pub kappa: f64,
    pub promoted: bool,
    pub y2: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub promotion: Option<PromotionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalEvidence {
    pub signal: SignalKind,
    pub support: f64,
    pub matches: Vec<RuleMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditDecision {
    pub schema_version: u32,
    pub package_id: String,
    pub label: Label,
    pub stage: StageTrace,
    pub evidence: Vec<SignalEvidence>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Set when verification failed and the package was held as suspicious.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident: Option<String>,
}

impl AuditDecision {
    /// Checks the record's internal consistency.
    pub fn validate(&self) -> Result<(), String> {
        let s = &self.stage;
        if self.label != s.y2 {
            return Err(format!("label {} differs from y2 {}", self.label, s.y2));
        }
        if s.promoted && (s.y2 != Label::Malicious || s.y1 == Label::Malicious) {
            return Err("promotion must raise a non-malicious y1 to malicious".into());
        }
        if !s.promoted && s.y1 != s.y2 {
            return Err("y2 differs from y1 without a promotion".into());
        }
        if !s.triggered && (s.judgment.is_some() || s.boot_dominant.is_some()) {
            return Err("verifier outputs present on an untriggered package".into());
        }
        Ok(())
    }
}

/// Top matches per active signal, strongest first, in signal index order.
pub fn collect_evidence(
    package: &SkillPackage,
    vectors: &[EvidenceVector],
    support: &SignalSupport,
) -> Vec<SignalEvidence> {
    support
        .active_signals()
        .map(|signal| {
            let mut matches: Vec<RuleMatch> = package
                .files
                .iter()
                .zip(vectors)
                .flat_map(|(_, v)| v.matches[signal.index()].iter().cloned())
                .collect();
            matches.sort_by(|a, b| {
                b.weight
                    .total_cmp(&a.weight)
                    .then_with(|| a.path.cmp(&b.path))
                    .then(a.line.cmp(&b.line))
            });
            matches.truncate(MATCHES_PER_SIGNAL);
            SignalEvidence {
                signal,
                support: support.get(signal),
                matches,
            }
        })
        .collect()
}

fn per_chain(values: &PerChain<f64>) -> String {
    values
        .iter()
        .map(|(c, v)| format!("{c}={v:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Plain-text report: active signals with their top matches, then the stage trace.
pub fn render_manifest(decision: &AuditDecision) -> String {
    let s = &decision.stage;
    let mut out = String::new();
    let _ = writeln!(out, "package: {}", decision.package_id);
    let _ = writeln!(out, "label:   {}", decision.label);
    let _ = writeln!(out, "stage:   {}", s.pipeline);

    out.push_str("\n== active signals ==\n");
    if decision.evidence.is_empty() {
        out.push_str("no active signals\n");
    }
    for ev in &decision.evidence {
        let _ = writeln!(out, "[{}] support {:.4}", ev.signal, ev.support);
        if let Some(contribs) = s.support.contributing.get(ev.signal.index()) {
            for c in contribs {
                let _ = writeln!(out, "  file {} ({}) contributes {:.4}", c.path, c.role, c.contribution);
            }
        }
        for m in &ev.matches {
            let _ = writeln!(out, "  {}:{} [{}] {}", m.path, m.line, m.rule_id, m.excerpt);
        }
    }

    out.push_str("\n== features ==\n");
    let f = &s.features;
    let _ = writeln!(
        out,
        "reference_only_override={} hidden_transfer_chain={} remote_bootstrap_chain={} \
         cross_file_support={} simulation_wrapper={} floor_hint={}",
        f.reference_only_override,
        f.hidden_transfer_chain,
        f.remote_bootstrap_chain,
        f.cross_file_support,
        f.simulation_wrapper,
        f.floor_hint
    );

    out.push_str("\n== stage trace ==\n");
    match &s.bundle_hash {
        Some(h) => {
            let _ = writeln!(out, "triggered: yes (bundle {h})");
        }
        None => {
            let _ = writeln!(out, "triggered: {}", if s.triggered { "yes" } else { "no" });
        }
    }
    if let Some(j) = &s.judgment {
        let _ = writeln!(out, "verifier q:     {}", per_chain(&j.q));
        let _ = writeln!(out, "verifier kappa: {}", per_chain(&j.kappa));
        for (c, r) in j.rationale.iter() {
            let _ = writeln!(out, "rationale {c}: {r}");
        }
    }
    if let Some(m) = &s.m {
        let _ = writeln!(out, "fused m: {}", per_chain(m));
    }
    let _ = writeln!(out, "floor: {}", s.floor);
    if let Some(b) = s.boot_dominant {
        let _ = writeln!(out, "boot_dominant: {b}");
    }
    let _ = writeln!(out, "y1: {}", s.y1);
    let _ = writeln!(out, "y2: {}", s.y2);

    if let Some(p) = &s.promotion {
        out.push_str("\n== promotion ==\n");
        let labels: Vec<_> = p.rewrite_labels.iter().map(|l| l.as_str()).collect();
        let _ = writeln!(out, "anchor: {}", p.anchor_id);
        let _ = writeln!(out, "kappa_min: {:.4}", p.kappa_min);
        let _ = writeln!(out, "rewrite labels: {}", labels.join(", "));
        let _ = writeln!(out, "mode: {}", p.mode);
    }
    if let Some(incident) = &decision.incident {
        let _ = writeln!(out, "\n== incident ==\n{incident}");
    }
    if !decision.warnings.is_empty() {
        out.push_str("\n== warnings ==\n");
        for w in &decision.warnings {
            let _ = writeln!(out, "{w}");
        }
    }
    out
}
