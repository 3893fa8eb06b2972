//! Stage IV: anchor promotion within seed/rewrite clusters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::package::Label;
use crate::thresholds::Thresholds;

#[derive(Debug, Error, PartialEq)]
pub enum ConsolidationError {
    #[error("no stage-one decision for `{0}`")]
    MissingDecision(String),
    #[error("malformed cluster `{0}`: anchor listed among its rewrites")]
    MalformedCluster(String),
    #[error("unknown promotion mode `{0}`")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromotionMode {
    /// Anchor must be suspicious and every rewrite malicious.
    #[default]
    Strict,
    /// At least two malicious rewrites; the anchor need only be non-benign.
    Relaxed,
}

impl fmt::Display for PromotionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromotionMode::Strict => "strict",
            PromotionMode::Relaxed => "relaxed",
        })
    }
}

impl FromStr for PromotionMode {
    type Err = ConsolidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(PromotionMode::Strict),
            "relaxed" => Ok(PromotionMode::Relaxed),
            other => Err(ConsolidationError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberDecision {
    pub label: Label,
    /// Minimum verifier confidence over chains, or 1.0 when no verifier ran.
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCluster {
    pub anchor_id: String,
    pub rewrite_ids: Vec<String>,
    pub decisions: BTreeMap<String, MemberDecision>,
}

impl AnchorCluster {
    fn decision(&self, id: &str) -> Result<MemberDecision, ConsolidationError> {
        self.decisions
            .get(id)
            .copied()
            .ok_or_else(|| ConsolidationError::MissingDecision(id.to_string()))
    }

    /// Minimum kappa over the rewrites; `None` for a cluster without rewrites.
    pub fn kappa_min(&self) -> Result<Option<f64>, ConsolidationError> {
        let mut min: Option<f64> = None;
        for id in &self.rewrite_ids {
            let k = self.decision(id)?.kappa;
            min = Some(min.map_or(k, |m| m.min(k)));
        }
        Ok(min)
    }

    pub fn rewrite_labels(&self) -> Result<Vec<Label>, ConsolidationError> {
        self.rewrite_ids
            .iter()
            .map(|id| self.decision(id).map(|d| d.label))
            .collect()
    }
}

/// Whether the anchor of `cluster` is promoted to malicious.
pub fn promote_decision(
    cluster: &AnchorCluster,
    cfg: &Thresholds,
    mode: PromotionMode,
) -> Result<bool, ConsolidationError> {
    if cluster.rewrite_ids.contains(&cluster.anchor_id) {
        return Err(ConsolidationError::MalformedCluster(cluster.anchor_id.clone()));
    }
    let anchor = cluster.decision(&cluster.anchor_id)?.label;
    let rewrites = cluster.rewrite_labels()?;
    let Some(kappa_min) = cluster.kappa_min()? else {
        return Ok(false);
    };
    let no_benign = anchor != Label::Benign && !rewrites.contains(&Label::Benign);
    let confident = kappa_min >= cfg.eta;
    let promote = match mode {
        PromotionMode::Strict => {
            anchor == Label::Suspicious
                && confident
                && rewrites.iter().all(|l| *l == Label::Malicious)
                && no_benign
        }
        PromotionMode::Relaxed => {
            anchor != Label::Malicious
                && confident
                && rewrites.iter().filter(|l| **l == Label::Malicious).count() >= 2
                && no_benign
        }
    };
    Ok(promote)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromotionRecord {
    pub anchor_id: String,
    pub kappa_min: f64,
    pub rewrite_labels: Vec<Label>,
    pub mode: PromotionMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consolidated {
    pub labels: BTreeMap<String, Label>,
    pub promotions: Vec<PromotionRecord>,
}

/// Applies promotion to every cluster. Labels are read from `stage1`; the
/// clusters supply kappa. Only anchor labels can change, and only upward.
pub fn consolidate(
    clusters: &[AnchorCluster],
    stage1: &BTreeMap<String, Label>,
    cfg: &Thresholds,
    mode: PromotionMode,
) -> Result<Consolidated, ConsolidationError> {
    let mut labels = stage1.clone();
    let mut promotions = Vec::new();
    for cluster in clusters {
        let mut view = cluster.clone();
        for id in std::iter::once(&cluster.anchor_id).chain(&cluster.rewrite_ids) {
            let label = *stage1
                .get(id)
                .ok_or_else(|| ConsolidationError::MissingDecision(id.clone()))?;
            let kappa = cluster.decision(id)?.kappa;
            view.decisions.insert(id.clone(), MemberDecision { label, kappa });
        }
        if promote_decision(&view, cfg, mode)? {
            labels.insert(cluster.anchor_id.clone(), Label::Malicious);
            promotions.push(PromotionRecord {
                anchor_id: cluster.anchor_id.clone(),
                kappa_min: view.kappa_min()?.unwrap_or(1.0),
                rewrite_labels: view.rewrite_labels()?,
                mode,
            });
        }
    }
    Ok(Consolidated { labels, promotions })
}
