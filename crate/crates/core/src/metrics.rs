//! Evaluation metrics over a labeled corpus run.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::package::{CorpusEntry, EntryKind, Label};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no prediction for `{0}`")]
    MissingPrediction(String),
    #[error("reports come from different corpus views ({0})")]
    ViewMismatch(String),
}

/// A count ratio; `value` is `numerator / denominator`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub numerator: u64,
    pub denominator: u64,
    pub value: f64,
}

impl Rate {
    /// `None` for an empty denominator.
    pub fn new(numerator: u64, denominator: u64) -> Option<Self> {
        (denominator > 0).then(|| Rate {
            numerator,
            denominator,
            value: numerator as f64 / denominator as f64,
        })
    }

    pub fn fraction(&self) -> Fraction {
        Fraction::new(self.numerator as i64, self.denominator)
    }
}

/// Exact signed rational in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: i64,
    pub denominator: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Fraction {
    pub fn new(numerator: i64, denominator: u64) -> Self {
        assert!(denominator > 0, "zero denominator");
        let g = gcd(numerator.unsigned_abs(), denominator).max(1);
        Fraction {
            numerator: numerator / g as i64,
            denominator: denominator / g,
        }
    }

    pub fn minus(self, other: Fraction) -> Fraction {
        let num = self.numerator * other.denominator as i64 - other.numerator * self.denominator as i64;
        Fraction::new(num, self.denominator * other.denominator)
    }

    pub fn value(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub fraction: Fraction,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub total: u64,
    pub clean: u64,
    pub risk_seed: u64,
    pub rewrite: u64,
    pub risk_seed_malicious: u64,
    pub rewrite_malicious: u64,
    pub pairs: u64,
    /// Clean, gold-benign entries predicted non-benign.
    pub false_positives: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub overall_exact: Option<Rate>,
    pub flagged_acc: Option<Rate>,
    pub risk_exact: Option<Rate>,
    pub risk_malicious_recall: Option<Rate>,
    pub rewrite_exact: Option<Rate>,
    pub rewrite_malicious_recall: Option<Rate>,
    pub attack_exact_consistency: Option<Rate>,
    /// Flagged accuracy minus risk malicious recall.
    pub collapse_gap: Option<Gap>,
    pub counts: Counts,
    /// Rows are gold labels, columns predictions, both in severity order.
    pub confusion: [[u64; 3]; 3],
}

/// The seven headline metrics, in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    OverallExact,
    FlaggedAcc,
    RiskExact,
    RiskMaliciousRecall,
    RewriteExact,
    RewriteMaliciousRecall,
    AttackExactConsistency,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::OverallExact,
        Metric::FlaggedAcc,
        Metric::RiskExact,
        Metric::RiskMaliciousRecall,
        Metric::RewriteExact,
        Metric::RewriteMaliciousRecall,
        Metric::AttackExactConsistency,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::OverallExact => "overall_exact",
            Metric::FlaggedAcc => "flagged_acc",
            Metric::RiskExact => "risk_exact",
            Metric::RiskMaliciousRecall => "risk_malicious_recall",
            Metric::RewriteExact => "rewrite_exact",
            Metric::RewriteMaliciousRecall => "rewrite_malicious_recall",
            Metric::AttackExactConsistency => "attack_exact_consistency",
        }
    }

    pub fn heading(self) -> &'static str {
        match self {
            Metric::OverallExact => "Overall Exact",
            Metric::FlaggedAcc => "Flagged Acc",
            Metric::RiskExact => "Risk Exact",
            Metric::RiskMaliciousRecall => "Risk M-Rec",
            Metric::RewriteExact => "Rewrite Exact",
            Metric::RewriteMaliciousRecall => "Rewrite M-Rec",
            Metric::AttackExactConsistency => "Attack Cons.",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl MetricsReport {
    pub fn get(&self, metric: Metric) -> Option<Rate> {
        match metric {
            Metric::OverallExact => self.overall_exact,
            Metric::FlaggedAcc => self.flagged_acc,
            Metric::RiskExact => self.risk_exact,
            Metric::RiskMaliciousRecall => self.risk_malicious_recall,
            Metric::RewriteExact => self.rewrite_exact,
            Metric::RewriteMaliciousRecall => self.rewrite_malicious_recall,
            Metric::AttackExactConsistency => self.attack_exact_consistency,
        }
    }
}

#[derive(Default)]
struct Tally {
    hit: u64,
    total: u64,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hit += u64::from(hit);
    }

    fn rate(&self) -> Option<Rate> {
        Rate::new(self.hit, self.total)
    }
}

pub fn compute_metrics(
    corpus: &[CorpusEntry],
    predictions: &BTreeMap<String, Label>,
) -> Result<MetricsReport, MetricsError> {
    let predicted = |id: &str| {
        predictions
            .get(id)
            .copied()
            .ok_or_else(|| MetricsError::MissingPrediction(id.to_string()))
    };

    let mut overall = Tally::default();
    let mut flagged = Tally::default();
    let mut risk_exact = Tally::default();
    let mut risk_recall = Tally::default();
    let mut rewrite_exact = Tally::default();
    let mut rewrite_recall = Tally::default();
    let mut consistency = Tally::default();
    let mut counts = Counts::default();
    let mut confusion = [[0u64; 3]; 3];

    for entry in corpus {
        let pred = predicted(entry.id())?;
        let gold = entry.gold;
        overall.add(pred == gold);
        confusion[gold.index()][pred.index()] += 1;
        counts.total += 1;

        if entry.kind.is_risk() {
            flagged.add(pred.is_flagged());
        }
        match entry.kind {
            EntryKind::Clean => {
                counts.clean += 1;
                if gold == Label::Benign && pred.is_flagged() {
                    counts.false_positives += 1;
                }
            }
            EntryKind::RiskSeed => {
                counts.risk_seed += 1;
                risk_exact.add(pred == gold);
                if gold == Label::Malicious {
                    counts.risk_seed_malicious += 1;
                    risk_recall.add(pred == Label::Malicious);
                }
            }
            EntryKind::Rewrite => {
                counts.rewrite += 1;
                rewrite_exact.add(pred == gold);
                if gold == Label::Malicious {
                    counts.rewrite_malicious += 1;
                    rewrite_recall.add(pred == Label::Malicious);
                }
                if let Some(anchor) = &entry.anchor_id {
                    counts.pairs += 1;
                    consistency.add(predicted(anchor)? == pred);
                }
            }
        }
    }

    let flagged_acc = flagged.rate();
    let risk_malicious_recall = risk_recall.rate();
    let collapse_gap = match (flagged_acc, risk_malicious_recall) {
        (Some(f), Some(r)) => {
            let fraction = f.fraction().minus(r.fraction());
            Some(Gap {
                fraction,
                value: fraction.value(),
            })
        }
        _ => None,
    };

    Ok(MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        overall_exact: overall.rate(),
        flagged_acc,
        risk_exact: risk_exact.rate(),
        risk_malicious_recall,
        rewrite_exact: rewrite_exact.rate(),
        rewrite_malicious_recall: rewrite_recall.rate(),
        attack_exact_consistency: consistency.rate(),
        collapse_gap,
        counts,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub counts: Counts,
    pub rows: Vec<MetricDelta>,
}

/// Per-metric `b - a` for two reports over the same corpus view.
pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Result<ReportDelta, MetricsError> {
    let view = |c: &Counts| (c.total, c.clean, c.risk_seed, c.rewrite, c.risk_seed_malicious, c.rewrite_malicious, c.pairs);
    if view(&a.counts) != view(&b.counts) {
        return Err(MetricsError::ViewMismatch(format!(
            "{} vs {} entries, {} vs {} pairs",
            a.counts.total, b.counts.total, a.counts.pairs, b.counts.pairs
        )));
    }
    let mut rows: Vec<MetricDelta> = Metric::ALL
        .into_iter()
        .map(|m| {
            let before = a.get(m).map(|r| r.value);
            let after = b.get(m).map(|r| r.value);
            MetricDelta {
                metric: m.key().to_string(),
                before,
                after,
                delta: before.zip(after).map(|(x, y)| y - x),
            }
        })
        .collect();
    let before = a.collapse_gap.map(|g| g.value);
    let after = b.collapse_gap.map(|g| g.value);
    rows.push(MetricDelta {
        metric: "collapse_gap".into(),
        before,
        after,
        delta: before.zip(after).map(|(x, y)| y - x),
    });
    Ok(ReportDelta {
        counts: a.counts,
        rows,
    })
}

fn pct(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0))
}

/// Header line for the metrics table.
pub fn table_header() -> String {
    let mut line = format!("{:<14}", "Run");
    for m in Metric::ALL {
        line.push_str(&format!(" {:>14}", m.heading()));
    }
    line
}

/// One table row, percentages with two decimals.
pub fn table_row(name: &str, report: &MetricsReport) -> String {
    let mut line = format!("{name:<14}");
    for m in Metric::ALL {
        line.push_str(&format!(" {:>14}", pct(report.get(m).map(|r| r.value))));
    }
    line
}

pub fn render_delta(delta: &ReportDelta) -> String {
    let mut out = format!("{:<26} {:>10} {:>10} {:>10}\n", "metric", "before", "after", "delta");
    for row in &delta.rows {
        let d = row
            .delta
            .map_or_else(|| "-".to_string(), |d| format!("{:+.2}", d * 100.0));
        out.push_str(&format!(
            "{:<26} {:>10} {:>10} {:>10}\n",
            row.metric,
            pct(row.before),
            pct(row.after),
            d
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::package::{FileRole, PackageFile, SkillPackage};

    fn entry(id: &str, kind: EntryKind, gold: Label, anchor: Option<&str>) -> CorpusEntry {
        CorpusEntry {
            package: SkillPackage::new(id, vec![PackageFile::new("SKILL.md", FileRole::SkillMd, "x").unwrap()])
                .unwrap(),
            gold,
            kind,
            family: None,
            anchor_id: anchor.map(str::to_string),
            root: id.to_string(),
        }
    }

    fn preds(pairs: &[(&str, Label)]) -> BTreeMap<String, Label> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    use EntryKind::*;
    use Label::*;

    #[test]
    fn perfect_predictions() {
        let corpus = vec![
            entry("c", Clean, Benign, None),
            entry("s", RiskSeed, Malicious, None),
            entry("r", Rewrite, Malicious, Some("s")),
        ];
        let r = compute_metrics(&corpus, &preds(&[("c", Benign), ("s", Malicious), ("r", Malicious)])).unwrap();
        for m in Metric::ALL {
            assert_eq!(r.get(m).unwrap().value, 1.0, "{m}");
        }
        assert_eq!(r.collapse_gap.unwrap().value, 0.0);
    }

    #[test]
    fn consistency_half() {
        let corpus = vec![
            entry("s", RiskSeed, Malicious, None),
            entry("r1", Rewrite, Malicious, Some("s")),
            entry("r2", Rewrite, Malicious, Some("s")),
        ];
        let r = compute_metrics(&corpus, &preds(&[("s", Malicious), ("r1", Malicious), ("r2", Suspicious)])).unwrap();
        let c = r.attack_exact_consistency.unwrap();
        assert_eq!((c.numerator, c.denominator), (1, 2));
        assert_eq!(r.counts.pairs, 2);
    }

    #[test]
    fn collapse_gap_toy() {
        let corpus = vec![
            entry("a", RiskSeed, Malicious, None),
            entry("b", RiskSeed, Malicious, None),
            entry("c", RiskSeed, Malicious, None),
        ];
        let r = compute_metrics(&corpus, &preds(&[("a", Malicious), ("b", Suspicious), ("c", Suspicious)])).unwrap();
        let rec = r.risk_malicious_recall.unwrap();
        assert_eq!((rec.numerator, rec.denominator), (1, 3));
        let flagged = r.flagged_acc.unwrap();
        assert_eq!((flagged.numerator, flagged.denominator), (3, 3));
        assert_eq!(r.collapse_gap.unwrap().fraction, Fraction::new(2, 3));
        assert!(r.rewrite_exact.is_none());
        assert!(r.attack_exact_consistency.is_none());
    }

    #[test]
    fn false_positives_and_confusion() {
        let corpus = vec![entry("c1", Clean, Benign, None), entry("c2", Clean, Benign, None)];
        let r = compute_metrics(&corpus, &preds(&[("c1", Suspicious), ("c2", Benign)])).unwrap();
        assert_eq!(r.counts.false_positives, 1);
        assert_eq!(r.confusion[0], [1, 1, 0]);
        assert!(r.flagged_acc.is_none());
        assert!(r.collapse_gap.is_none());
    }

    #[test]
    fn missing_prediction() {
        let corpus = vec![entry("c", Clean, Benign, None)];
        assert_eq!(
            compute_metrics(&corpus, &BTreeMap::new()),
            Err(MetricsError::MissingPrediction("c".into()))
        );
    }

    #[test]
    fn empty_corpus_has_no_rates() {
        let r = compute_metrics(&[], &BTreeMap::new()).unwrap();
        assert!(Metric::ALL.iter().all(|m| r.get(*m).is_none()));
    }

    #[test]
    fn compare_examples() {
        let corpus: Vec<_> = (0..20).map(|i| entry(&format!("c{i}"), Clean, Benign, None)).collect();
        let all_benign: BTreeMap<_, _> = corpus.iter().map(|e| (e.id().to_string(), Benign)).collect();
        let mut two_wrong = all_benign.clone();
        two_wrong.insert("c0".into(), Suspicious);
        two_wrong.insert("c1".into(), Suspicious);
        let mut one_wrong = all_benign.clone();
        one_wrong.insert("c0".into(), Suspicious);

        let a = compute_metrics(&corpus, &two_wrong).unwrap();
        let b = compute_metrics(&corpus, &one_wrong).unwrap();
        let same = compare_reports(&a, &a).unwrap();
        assert!(same.rows.iter().all(|r| r.delta.is_none() || r.delta == Some(0.0)));
        // 0.90 -> 0.95
        let d = compare_reports(&a, &b).unwrap();
        assert!((d.rows[0].delta.unwrap() - 0.05).abs() < 1e-12);

        let other = compute_metrics(&corpus[..5], &all_benign).unwrap();
        assert!(matches!(compare_reports(&a, &other), Err(MetricsError::ViewMismatch(_))));
    }

    #[test]
    fn table_formatting() {
        let corpus = vec![entry("c", Clean, Benign, None)];
        let r = compute_metrics(&corpus, &preds(&[("c", Benign)])).unwrap();
        let row = table_row("robust", &r);
        assert!(row.contains("100.00"));
        assert!(row.contains('-'));
        assert!(table_header().contains("Attack Cons."));
    }
}
