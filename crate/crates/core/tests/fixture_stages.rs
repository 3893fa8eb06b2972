use std::collections::BTreeMap;

use skill_audit::consolidation::PromotionMode;
use skill_audit::corpus_gen::{generate, GenSpec};
use skill_audit::evidence::RolePack;
use skill_audit::metrics::{compute_metrics, Metric};
use skill_audit::package::{EntryKind, Label};
use skill_audit::verification::StubVerifier;
use skill_audit::{Auditor, PipelineStage, Thresholds};

fn run(stage: PipelineStage) -> (Vec<skill_audit::package::CorpusEntry>, BTreeMap<String, Label>) {
    let corpus = generate(&GenSpec::default_fixture()).unwrap();
    let pack = RolePack::builtin();
    let cfg = Thresholds::default();
    let verifier = StubVerifier;
    let auditor = Auditor { pack: &pack, cfg: &cfg, verifier: &verifier, transcript: None };
    let out = auditor.audit_corpus(&corpus, stage, PromotionMode::Strict, 2).unwrap();
    for d in &out.decisions {
        d.validate().unwrap();
    }
    let labels = out.labels();
    (corpus, labels)
}

fn family_labels(corpus: &[skill_audit::package::CorpusEntry], labels: &BTreeMap<String, Label>, family: &str) -> (Label, Vec<Label>) {
    let seed = corpus
        .iter()
        .find(|e| e.family.as_deref() == Some(family) && e.kind == EntryKind::RiskSeed)
        .unwrap();
    let rewrites = corpus
        .iter()
        .filter(|e| e.family.as_deref() == Some(family) && e.kind == EntryKind::Rewrite)
        .map(|e| labels[e.id()])
        .collect();
    (labels[seed.id()], rewrites)
}

#[test]
fn robust_stage_is_exact_on_fixture() {
    let (corpus, labels) = run(PipelineStage::Robust);
    let report = compute_metrics(&corpus, &labels).unwrap();
    for m in Metric::ALL {
        let rate = report.get(m).unwrap_or_else(|| panic!("{} undefined", m.key()));
        assert_eq!(rate.value, 1.0, "{}", m.key());
    }
}

#[test]
fn each_stage_fixes_its_family() {
    use Label::*;
    let expect = |stage, family: &str, seed, rewrite| {
        let (corpus, labels) = run(stage);
        let (s, rws) = family_labels(&corpus, &labels, family);
        assert_eq!(s, seed, "{stage} {family} seed");
        assert!(rws.iter().all(|l| *l == rewrite), "{stage} {family} rewrites {rws:?}");
    };
    expect(PipelineStage::ExtractOnly, "transfer-split", Benign, Benign);
    expect(PipelineStage::Verify, "transfer-split", Malicious, Malicious);
    expect(PipelineStage::Verify, "bootstrap-sync", Malicious, Malicious);
    expect(PipelineStage::Calibrate, "bootstrap-sync", Suspicious, Suspicious);
    expect(PipelineStage::Calibrate, "override-surface", Suspicious, Malicious);
    expect(PipelineStage::Robust, "override-surface", Malicious, Malicious);
}

#[test]
fn overall_exact_improves_from_extract_only() {
    let exact = |stage| {
        let (corpus, labels) = run(stage);
        compute_metrics(&corpus, &labels).unwrap().get(Metric::OverallExact).unwrap().value
    };
    let values: Vec<f64> = PipelineStage::ALL.into_iter().map(exact).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]), "{values:?}");
    assert!(values[0] < values[3], "{values:?}");
}
