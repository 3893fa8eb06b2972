//! The four-stage decision chain over single packages and whole corpora.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjudication::{arbitrate, boot_dominance, confidence_gated_floor, fuse, risk_floor};
use crate::audit::{collect_evidence, AuditDecision, StageTrace, DECISION_SCHEMA_VERSION};
use crate::consolidation::{
    consolidate, AnchorCluster, ConsolidationError, MemberDecision, PromotionMode, PromotionRecord,
};
use crate::evidence::{extract, RolePack};
use crate::package::{cluster_map, CorpusEntry, Label, SkillPackage};
use crate::thresholds::Thresholds;
use crate::verification::{
    select_snippets, uncertainty_trigger, verify, SemanticVerifier, TranscriptLog, TranscriptRecord,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Consolidation(#[from] ConsolidationError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// How much of the chain runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    /// Risk floor from structured support only.
    ExtractOnly,
    /// Adds semantic verification on triggered packages.
    Verify,
    /// Adds chain arbitration with bootstrap dominance.
    Calibrate,
    /// Adds anchor consolidation.
    Robust,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 4] = [
        PipelineStage::ExtractOnly,
        PipelineStage::Verify,
        PipelineStage::Calibrate,
        PipelineStage::Robust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineStage::ExtractOnly => "extract_only",
            PipelineStage::Verify => "verify",
            PipelineStage::Calibrate => "calibrate",
            PipelineStage::Robust => "robust",
        }
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineStage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

pub struct Auditor<'a> {
    pub pack: &'a RolePack,
    pub cfg: &'a Thresholds,
    pub verifier: &'a dyn SemanticVerifier,
    pub transcript: Option<&'a TranscriptLog>,
}

#[derive(Debug, Clone)]
pub struct CorpusRun {
    /// Sorted by package id.
    pub decisions: Vec<AuditDecision>,
    pub promotions: Vec<PromotionRecord>,
}

impl CorpusRun {
    pub fn labels(&self) -> BTreeMap<String, Label> {
        self.decisions
            .iter()
            .map(|d| (d.package_id.clone(), d.label))
            .collect()
    }
}

impl<'a> Auditor<'a> {
    /// Runs stages I-III on one package. Consolidation needs cluster context,
    /// so `y2 = y1` here even for [`PipelineStage::Robust`].
    pub fn audit_package(&self, package: &SkillPackage, stage: PipelineStage) -> AuditDecision {
        let cfg = self.cfg;
        let ex = extract(package, self.pack, cfg);
        let mut warnings = Vec::new();
        let mut incident = None;
        let mut bundle_hash = None;
        let mut judgment = None;

        let triggered = stage != PipelineStage::ExtractOnly && uncertainty_trigger(&ex.support, cfg);
        if triggered {
            let bundle = select_snippets(package, &ex.vectors, &ex.support, &ex.features);
            let hash = bundle.content_hash();
            let started = Instant::now();
            let result = verify(&bundle, self.verifier);
            let latency_ms = started.elapsed().as_millis() as u64;
            if let Some(log) = self.transcript {
                let record = TranscriptRecord {
                    package_id: package.id.clone(),
                    bundle_hash: hash.clone(),
                    request_chars: bundle.render_prompt().chars().count(),
                    judgment: result.as_ref().ok().map(|v| v.judgment.clone()),
                    latency_ms,
                    error: result.as_ref().err().map(ToString::to_string),
                };
                if let Err(e) = log.append(&record) {
                    warnings.push(format!("transcript write failed: {e}"));
                }
            }
            match result {
                Ok(v) => {
                    warnings.extend(v.warnings);
                    judgment = Some(v.judgment);
                }
                Err(e) => incident = Some(format!("verification failed: {e}")),
            }
            bundle_hash = Some(hash);
        }

        let m = fuse(&ex.support, judgment.as_ref(), cfg);
        let floor = confidence_gated_floor(
            risk_floor(&m, &ex.support, cfg),
            &m,
            &ex.support,
            judgment.as_ref(),
            cfg,
        );

        let (y1, boot_dominant, kappa) = if incident.is_some() {
            // fail closed: hold for review rather than trust structure alone
            (Label::Suspicious, None, 0.0)
        } else {
            let kappa = judgment.as_ref().map_or(1.0, |j| j.kappa_min());
            match stage {
                PipelineStage::ExtractOnly | PipelineStage::Verify => (floor, None, kappa),
                PipelineStage::Calibrate | PipelineStage::Robust => {
                    let b = judgment.as_ref().map(|j| boot_dominance(j, cfg));
                    (arbitrate(&m, b.unwrap_or(false), floor, cfg), b, kappa)
                }
            }
        };

        let evidence = collect_evidence(package, &ex.vectors, &ex.support);
        AuditDecision {
            schema_version: DECISION_SCHEMA_VERSION,
            package_id: package.id.clone(),
            label: y1,
            stage: StageTrace {
                pipeline: stage,
                support: ex.support,
                features: ex.features,
                triggered,
                bundle_hash,
                judgment,
                m: Some(m),
                floor,
                boot_dominant,
                y1,
                kappa,
                promoted: false,
                y2: y1,
                promotion: None,
            },
            evidence,
            warnings,
            incident,
        }
    }

    /// Audits every entry (in parallel, `jobs` workers) and, at the robust
    /// stage, consolidates anchor/rewrite clusters.
    pub fn audit_corpus(
        &self,
        entries: &[CorpusEntry],
        stage: PipelineStage,
        mode: PromotionMode,
        jobs: usize,
    ) -> Result<CorpusRun, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
        let mut decisions: Vec<AuditDecision> = pool.install(|| {
            entries
                .par_iter()
                .map(|e| self.audit_package(&e.package, stage))
                .collect()
        });
        decisions.sort_by(|a, b| a.package_id.cmp(&b.package_id));

        let mut promotions = Vec::new();
        if stage == PipelineStage::Robust {
            let by_id: BTreeMap<String, usize> = decisions
                .iter()
                .enumerate()
                .map(|(i, d)| (d.package_id.clone(), i))
                .collect();
            let member = |id: &str| -> Result<MemberDecision, ConsolidationError> {
                let d = &decisions[*by_id
                    .get(id)
                    .ok_or_else(|| ConsolidationError::MissingDecision(id.to_string()))?];
                Ok(MemberDecision {
                    label: d.stage.y1,
                    kappa: d.stage.kappa,
                })
            };
            let mut clusters = Vec::new();
            for (anchor, rewrites) in cluster_map(entries) {
                let mut members = BTreeMap::new();
                for id in std::iter::once(&anchor).chain(&rewrites) {
                    members.insert(id.clone(), member(id)?);
                }
                clusters.push(AnchorCluster {
                    anchor_id: anchor,
                    rewrite_ids: rewrites,
                    decisions: members,
                });
            }
            let stage1: BTreeMap<String, Label> = decisions
                .iter()
                .map(|d| (d.package_id.clone(), d.stage.y1))
                .collect();
            let out = consolidate(&clusters, &stage1, self.cfg, mode)?;
            for record in &out.promotions {
                let d = &mut decisions[by_id[&record.anchor_id]];
                d.stage.promoted = true;
                d.stage.promotion = Some(record.clone());
            }
            for d in &mut decisions {
                d.stage.y2 = out.labels[&d.package_id];
                d.label = d.stage.y2;
            }
            promotions = out.promotions;
        }
        Ok(CorpusRun {
            decisions,
            promotions,
        })
    }
}
