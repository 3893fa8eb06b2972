//! Stage II: uncertainty trigger, budgeted snippet selection, and the
//! pluggable semantic verifier.

mod cache;
mod remote;
mod stub;
mod transcript;

pub use cache::CachingVerifier;
pub use remote::{RemoteConfig, RemoteVerifier};
pub use stub::StubVerifier;
pub use transcript::{TranscriptLog, TranscriptRecord};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{Chain, PerChain};
use crate::evidence::{AggregatedFeatures, EvidenceVector, SignalKind, SignalSupport, NUM_SIGNALS};
use crate::package::{FileRole, SkillPackage};
use crate::thresholds::Thresholds;

/// Characters of context kept before the anchoring match in a truncated snippet.
pub const SNIPPET_PRE_CONTEXT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleBudget {
    pub role: FileRole,
    pub max_items: usize,
    pub max_chars: usize,
}

/// Per-role item and character budgets, in bundle order.
pub const ROLE_BUDGETS: [RoleBudget; 4] = [
    RoleBudget {
        role: FileRole::SkillMd,
        max_items: 1,
        max_chars: 2800,
    },
    RoleBudget {
        role: FileRole::Reference,
        max_items: 2,
        max_chars: 1800,
    },
    RoleBudget {
        role: FileRole::Script,
        max_items: 2,
        max_chars: 1500,
    },
    RoleBudget {
        role: FileRole::RepoContext,
        max_items: 1,
        max_chars: 700,
    },
];

pub fn budget_for(role: FileRole) -> RoleBudget {
    ROLE_BUDGETS
        .into_iter()
        .find(|b| b.role == role)
        .expect("every role has a budget")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("verifier unavailable: {0}")]
    VerifierUnavailable(String),
    #[error("malformed verifier judgment: {0}")]
    MalformedJudgment(String),
    #[error("snippet bundle is empty")]
    EmptyBundle,
}

/// Peak signal and chain maximum feeding the trigger.
pub fn peak_support(support: &SignalSupport, cfg: &Thresholds) -> f64 {
    if cfg.peak_over_all_signals {
        support.values.iter().copied().fold(0.0, f64::max)
    } else {
        chain_peak(support)
    }
}

pub fn chain_peak(support: &SignalSupport) -> f64 {
    Chain::ALL
        .into_iter()
        .map(|c| support.get(c.signal()))
        .fold(0.0, f64::max)
}

/// Fires when the peak signal sits inside the uncertainty band, or when tool
/// execution is high while every chain signal stays low.
pub fn uncertainty_trigger(support: &SignalSupport, cfg: &Thresholds) -> bool {
    let peak = peak_support(support, cfg);
    let tool = support.get(SignalKind::ToolExecution);
    let in_band = cfg.tau_minus <= peak && peak <= cfg.tau_plus;
    in_band || (tool > cfg.tau_t && chain_peak(support) < cfg.tau_c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetItem {
    pub path: String,
    pub role: FileRole,
    pub text: String,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredSummary {
    pub support: [f64; NUM_SIGNALS],
    pub features: AggregatedFeatures,
}

impl StructuredSummary {
    pub fn get(&self, signal: SignalKind) -> f64 {
        self.support[signal.index()]
    }

    pub fn render(&self) -> String {
        let mut out = String::from("signal support:\n");
        for k in SignalKind::ALL {
            out.push_str(&format!("  {:<22} {:.4}\n", k.as_str(), self.get(k)));
        }
        let f = &self.features;
        out.push_str("aggregated features:\n");
        for (name, value) in [
            ("reference_only_override", f.reference_only_override),
            ("hidden_transfer_chain", f.hidden_transfer_chain),
            ("remote_bootstrap_chain", f.remote_bootstrap_chain),
            ("cross_file_support", f.cross_file_support),
            ("simulation_wrapper", f.simulation_wrapper),
        ] {
            out.push_str(&format!("  {name:<24} {value}\n"));
        }
        out.push_str(&format!("  {:<24} {}\n", "floor_hint", f.floor_hint));
        out
    }
}

/// The evidence handed to the verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetBundle {
    pub items: Vec<SnippetItem>,
    pub summary: StructuredSummary,
}

impl SnippetBundle {
    pub fn structured_summary(&self) -> String {
        self.summary.render()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("bundle serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// The user-turn text sent to a remote verifier.
    pub fn render_prompt(&self) -> String {
        let mut out = String::from("## Structured summary\n");
        out.push_str(&self.structured_summary());
        out.push_str("\n## Evidence snippets\n");
        for item in &self.items {
            out.push_str(&format!(
                "\n### {} ({}{})\n",
                item.path,
                item.role,
                if item.truncated { ", truncated" } else { "" }
            ));
            out.push_str(&item.text);
            if !item.text.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

fn window(content: &str, anchor_byte: Option<usize>, limit: usize) -> (String, bool) {
    let total = content.chars().count();
    if total <= limit {
        return (content.to_string(), false);
    }
    let anchor = anchor_byte
        .map(|b| content[..b.min(content.len())].chars().count())
        .unwrap_or(0);
    let start = anchor.saturating_sub(SNIPPET_PRE_CONTEXT).min(total - limit);
    (content.chars().skip(start).take(limit).collect(), true)
}

/// Picks the top files per role by evidence mass (ties by path) and cuts each
/// to a window around its strongest match.
pub fn select_snippets(
    package: &SkillPackage,
    vectors: &[EvidenceVector],
    support: &SignalSupport,
    features: &AggregatedFeatures,
) -> SnippetBundle {
    let mut items = Vec::new();
    for budget in ROLE_BUDGETS {
        let mut ranked: Vec<_> = package
            .files
            .iter()
            .zip(vectors)
            .filter(|(f, _)| f.role == budget.role)
            .collect();
        ranked.sort_by(|(fa, va), (fb, vb)| {
            vb.mass().total_cmp(&va.mass()).then_with(|| fa.path.cmp(&fb.path))
        });
        for (file, vector) in ranked.into_iter().take(budget.max_items) {
            let anchor = vector.strongest_match().map(|m| m.offset);
            let (text, truncated) = window(&file.content, anchor, budget.max_chars);
            items.push(SnippetItem {
                path: file.path.clone(),
                role: file.role,
                text,
                truncated,
            });
        }
    }
    SnippetBundle {
        items,
        summary: StructuredSummary {
            support: support.values,
            features: features.clone(),
        },
    }
}

/// Per-chain probability, confidence, and rationale from a verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierJudgment {
    pub q: PerChain<f64>,
    pub kappa: PerChain<f64>,
    pub rationale: PerChain<String>,
}

impl VerifierJudgment {
    pub fn kappa_min(&self) -> f64 {
        Chain::ALL
            .into_iter()
            .map(|c| self.kappa[c])
            .fold(1.0, f64::min)
    }
}

pub trait SemanticVerifier: Send + Sync {
    fn name(&self) -> &str;

    /// Returns the raw judgment; range checks happen in [`verify`].
    fn judge(&self, bundle: &SnippetBundle) -> Result<VerifierJudgment, VerifyError>;
}

impl<V: SemanticVerifier + ?Sized> SemanticVerifier for std::sync::Arc<V> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn judge(&self, bundle: &SnippetBundle) -> Result<VerifierJudgment, VerifyError> {
        (**self).judge(bundle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verified {
    pub judgment: VerifierJudgment,
    pub warnings: Vec<String>,
}

/// Calls the verifier and clamps q and kappa into [0, 1], one warning per clamped value.
pub fn verify(bundle: &SnippetBundle, verifier: &dyn SemanticVerifier) -> Result<Verified, VerifyError> {
    if bundle.is_empty() {
        return Err(VerifyError::EmptyBundle);
    }
    let mut judgment = verifier.judge(bundle)?;
    let mut warnings = Vec::new();
    for chain in Chain::ALL {
        for (name, value) in [("q", &mut judgment.q[chain]), ("kappa", &mut judgment.kappa[chain])] {
            if !value.is_finite() {
                return Err(VerifyError::MalformedJudgment(format!(
                    "{name}.{chain} is not a finite number"
                )));
            }
            if !(0.0..=1.0).contains(value) {
                let clamped = value.clamp(0.0, 1.0);
                warnings.push(format!("{name}.{chain} = {value} clamped to {clamped}"));
                *value = clamped;
            }
        }
    }
    Ok(Verified { judgment, warnings })
}
