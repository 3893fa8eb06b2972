//! Synthetic corpus generation: clean packages, risk seeds built from a cue
//! table, and paraphrased rewrites of each seed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Chain;
use crate::evidence::SignalKind;
use crate::package::{CorpusEntry, EntryKind, FileRole, Label, PackageFile, RoleMap, SkillPackage};

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CueSlot {
    pub rule: String,
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BenignSkill {
    pub title: String,
    pub purpose: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BenignText {
    pub skills: Vec<BenignSkill>,
    pub skill_lines: Vec<String>,
    pub reference_lines: Vec<String>,
    pub shell_lines: Vec<String>,
    pub python_lines: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PathPools {
    pub reference: Vec<String>,
    pub shell: Vec<String>,
    pub python: Vec<String>,
    pub repo_context: Vec<String>,
}

/// Fixed paraphrase table: cue slots per signal (strongest first) plus benign filler.
#[derive(Debug, Clone, Deserialize)]
pub struct CueTable {
    pub signals: BTreeMap<SignalKind, Vec<CueSlot>>,
    pub benign: BenignText,
    pub paths: PathPools,
}

impl CueTable {
    pub fn slots(&self, signal: SignalKind) -> &[CueSlot] {
        self.signals.get(&signal).map_or(&[], Vec::as_slice)
    }
}

static CUES: LazyLock<CueTable> = LazyLock::new(|| {
    serde_json::from_str(include_str!("../data/cues.json")).expect("bundled cue table parses")
});

pub fn cue_table() -> &'static CueTable {
    &CUES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Companion {
    pub signal: SignalKind,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family_id: String,
    pub chain: Chain,
    pub gold: Label,
    /// Fraction of the chain's cue slots used, in [0, 1].
    pub strength: f64,
    #[serde(default)]
    pub companions: Vec<Companion>,
    /// Where the seed places its primary cues; rewrites always use the canonical role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_role: Option<FileRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenCounts {
    pub clean: usize,
    pub risk_seed_per_family: usize,
    pub rewrites_per_seed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub counts: GenCounts,
    pub families: Vec<FamilySpec>,
}

impl GenSpec {
    /// Six families covering each chain, the bootstrap/transfer conflict,
    /// and a surface-placed seed that only consolidation recovers.
    pub fn default_fixture() -> Self {
        let family = |id: &str, chain, gold, strength, companions: Vec<Companion>, anchor_role| FamilySpec {
            family_id: id.to_string(),
            chain,
            gold,
            strength,
            companions,
            anchor_role,
        };
        let companion = |signal, strength| Companion { signal, strength };
        GenSpec {
            seed: 17,
            counts: GenCounts {
                clean: 20,
                risk_seed_per_family: 1,
                rewrites_per_seed: 3,
            },
            families: vec![
                family(
                    "override-reference",
                    Chain::Override,
                    Label::Malicious,
                    1.0,
                    vec![companion(SignalKind::Concealment, 0.25)],
                    None,
                ),
                family("transfer-split", Chain::Transfer, Label::Malicious, 0.5, vec![], None),
                family("bootstrap-init", Chain::Bootstrap, Label::Suspicious, 0.5, vec![], None),
                family(
                    "bootstrap-sync",
                    Chain::Bootstrap,
                    Label::Suspicious,
                    0.5,
                    vec![companion(SignalKind::ExternalTransfer, 0.25)],
                    None,
                ),
                family(
                    "override-surface",
                    Chain::Override,
                    Label::Malicious,
                    0.25,
                    vec![companion(SignalKind::ToolExecution, 0.5)],
                    Some(FileRole::SkillMd),
                ),
                family(
                    "transfer-relay",
                    Chain::Transfer,
                    Label::Malicious,
                    1.0,
                    vec![companion(SignalKind::CoverStory, 0.25)],
                    None,
                ),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |msg: String| Err(GenError::InvalidSpec(msg));
        let id_ok = Regex::new("^[a-z0-9][a-z0-9-]*$").expect("valid regex");
        let strength_ok = |s: f64| s.is_finite() && (0.0..=1.0).contains(&s);
        let mut seen = BTreeSet::new();
        for f in &self.families {
            if !id_ok.is_match(&f.family_id) {
                return bad(format!("family id `{}` must be lowercase alphanumeric with dashes", f.family_id));
            }
            if !seen.insert(&f.family_id) {
                return bad(format!("duplicate family id `{}`", f.family_id));
            }
            if f.gold == Label::Benign {
                return bad(format!("family `{}` has a benign gold label", f.family_id));
            }
            if !strength_ok(f.strength) || f.strength == 0.0 {
                return bad(format!("family `{}` strength {} must be in (0, 1]", f.family_id, f.strength));
            }
            for c in &f.companions {
                if !strength_ok(c.strength) {
                    return bad(format!("family `{}` companion strength {} outside [0, 1]", f.family_id, c.strength));
                }
                if c.signal == f.chain.signal() {
                    return bad(format!("family `{}` lists its own chain as a companion", f.family_id));
                }
            }
            if f.anchor_role == Some(FileRole::RepoContext) {
                return bad(format!("family `{}` cannot anchor cues in repo context", f.family_id));
            }
        }
        Ok(())
    }
}

/// Number of slots used at a given strength.
pub fn cue_count(strength: f64, slots: usize) -> usize {
    ((strength * slots as f64).ceil() as usize).min(slots)
}

fn canonical_roles(signal: SignalKind) -> &'static [FileRole] {
    match signal {
        SignalKind::ExternalTransfer => &[FileRole::Script, FileRole::Reference],
        SignalKind::Override | SignalKind::Concealment => &[FileRole::Reference],
        SignalKind::ToolExecution | SignalKind::RemoteBootstrap | SignalKind::PrivilegeOverreach => {
            &[FileRole::Script]
        }
        SignalKind::CoverStory | SignalKind::DescriptionMismatch => &[FileRole::SkillMd],
    }
}

fn is_prose(line: &str) -> bool {
    line.starts_with(|c: char| c.is_ascii_uppercase()) && line.ends_with('.')
}

/// Per-seed random choices, shared by its rewrites with an offset.
struct SeedDraw {
    skill: usize,
    variants: BTreeMap<(SignalKind, usize), usize>,
    reference_path: usize,
    shell_path: usize,
    python_path: usize,
    filler: u64,
}

struct PlacedCue {
    signal: SignalKind,
    role: FileRole,
    text: String,
}

fn pick<'a>(pool: &'a [String], rng: &mut ChaCha8Rng, n: usize) -> Vec<&'a str> {
    let mut chosen: Vec<&str> = pool.choose_multiple(rng, n.min(pool.len())).map(String::as_str).collect();
    chosen.sort_unstable();
    chosen
}

fn skill_md(skill: &BenignSkill, lines: &[&str], cues: &[&str], see_also: Option<&str>) -> String {
    let slug = skill.title.to_lowercase().replace(' ', "-");
    let mut out = format!(
        "---\nname: {slug}\ndescription: {}.\n---\n\n# {}\n\nUse this skill to {}.\n\n",
        capitalize(&skill.purpose),
        skill.title,
        skill.purpose
    );
    for line in lines.iter().chain(cues) {
        out.push_str(&format!("- {line}\n"));
    }
    if let Some(path) = see_also {
        out.push_str(&format!("\nSee {path} for details.\n"));
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default()
}

fn reference_doc(skill: &BenignSkill, lines: &[&str], cues: &[&str]) -> String {
    let mut out = format!("# {} notes\n\n", skill.title);
    let (head, tail) = lines.split_at(lines.len() / 2);
    for line in head.iter().chain(cues).chain(tail) {
        out.push_str(line);
        out.push_str("\n\n");
    }
    out
}

fn script(skill: &BenignSkill, lines: &[&str], cues: &[&str], python: bool) -> String {
    let mut out = format!("# {} helper\n", skill.title);
    let (head, tail) = lines.split_at(lines.len().min(2));
    for line in head {
        out.push_str(line);
        out.push('\n');
    }
    for cue in cues {
        if is_prose(cue) {
            out.push_str("# ");
        }
        out.push_str(cue);
        out.push('\n');
    }
    for line in tail {
        out.push_str(line);
        out.push('\n');
    }
    if !python {
        out.push_str("echo done\n");
    }
    out
}

fn readme(skill: &BenignSkill) -> String {
    format!(
        "# {}\n\nA small skill to {}. See SKILL.md for usage.\n",
        skill.title, skill.purpose
    )
}

struct Builder<'a> {
    table: &'a CueTable,
    roles: RoleMap,
}

impl Builder<'_> {
    fn file(&self, path: &str, content: String) -> PackageFile {
        PackageFile::new(path, self.roles.role_for(path), content).expect("generated paths are relative")
    }

    fn draw(&self, family: &FamilySpec, rng: &mut ChaCha8Rng) -> SeedDraw {
        let t = self.table;
        let mut variants = BTreeMap::new();
        let mut signals = vec![family.chain.signal()];
        signals.extend(family.companions.iter().map(|c| c.signal));
        for signal in signals {
            for (i, slot) in t.slots(signal).iter().enumerate() {
                variants.insert((signal, i), rng.gen_range(0..slot.variants.len()));
            }
        }
        SeedDraw {
            skill: rng.gen_range(0..t.benign.skills.len()),
            variants,
            reference_path: rng.gen_range(0..t.paths.reference.len()),
            shell_path: rng.gen_range(0..t.paths.shell.len()),
            python_path: rng.gen_range(0..t.paths.python.len()),
            filler: rng.gen(),
        }
    }

    /// Builds the seed (`rewrite == 0`) or its `rewrite`-th paraphrase.
    fn risk_package(&self, id: &str, family: &FamilySpec, draw: &SeedDraw, rewrite: usize) -> SkillPackage {
        let t = self.table;
        let mut rng = ChaCha8Rng::seed_from_u64(draw.filler ^ rewrite as u64);
        let primary = family.chain.signal();
        let mut wanted = vec![(primary, family.strength)];
        wanted.extend(family.companions.iter().map(|c| (c.signal, c.strength)));

        let mut cues = Vec::new();
        for (signal, strength) in wanted {
            let slots = t.slots(signal);
            let roles = canonical_roles(signal);
            for i in 0..cue_count(strength, slots.len()) {
                let slot = &slots[i];
                let v = (draw.variants[&(signal, i)] + rewrite) % slot.variants.len();
                let role = match family.anchor_role {
                    Some(r) if rewrite == 0 && signal == primary => r,
                    _ => roles[(i + rewrite) % roles.len()],
                };
                cues.push(PlacedCue {
                    signal,
                    role,
                    text: slot.variants[v].clone(),
                });
            }
        }

        let in_role = |role: FileRole| -> Vec<&str> {
            cues.iter().filter(|c| c.role == role).map(|c| c.text.as_str()).collect()
        };
        let script_cues = in_role(FileRole::Script);
        let python = cues
            .iter()
            .any(|c| c.role == FileRole::Script && c.signal == SignalKind::ToolExecution);
        let skill = &t.benign.skills[(draw.skill + rewrite) % t.benign.skills.len()];
        let reference_path = &t.paths.reference[(draw.reference_path + rewrite) % t.paths.reference.len()];

        let mut files = vec![
            self.file(
                "SKILL.md",
                skill_md(
                    skill,
                    &pick(&t.benign.skill_lines, &mut rng, 2),
                    &in_role(FileRole::SkillMd),
                    Some(reference_path),
                ),
            ),
            self.file(
                reference_path,
                reference_doc(skill, &pick(&t.benign.reference_lines, &mut rng, 3), &in_role(FileRole::Reference)),
            ),
            self.file(&t.paths.repo_context[rewrite % t.paths.repo_context.len()], readme(skill)),
        ];
        if !script_cues.is_empty() {
            let (pool, start, lines) = if python {
                (&t.paths.python, draw.python_path, &t.benign.python_lines)
            } else {
                (&t.paths.shell, draw.shell_path, &t.benign.shell_lines)
            };
            let path = &pool[(start + rewrite) % pool.len()];
            let body = if python {
                lines.iter().map(String::as_str).collect()
            } else {
                pick(lines, &mut rng, 3)
            };
            files.push(self.file(path, script(skill, &body, &script_cues, python)));
        }
        SkillPackage::new(id, files).expect("generated paths are distinct")
    }

    fn clean_package(&self, id: &str, rng: &mut ChaCha8Rng) -> SkillPackage {
        let t = self.table;
        let skill = t.benign.skills.choose(rng).expect("non-empty skill list");
        let reference_path = t.paths.reference.choose(rng).expect("non-empty path pool");
        let mut files = vec![
            self.file(
                "SKILL.md",
                skill_md(skill, &pick(&t.benign.skill_lines, rng, 3), &[], Some(reference_path)),
            ),
            self.file(
                reference_path,
                reference_doc(skill, &pick(&t.benign.reference_lines, rng, 3), &[]),
            ),
        ];
        if rng.gen_bool(0.5) {
            let path = t.paths.python.choose(rng).expect("non-empty path pool");
            let lines: Vec<&str> = t.benign.python_lines.iter().map(String::as_str).collect();
            files.push(self.file(path, script(skill, &lines, &[], true)));
        } else {
            let path = t.paths.shell.choose(rng).expect("non-empty path pool");
            files.push(self.file(path, script(skill, &pick(&t.benign.shell_lines, rng, 4), &[], false)));
        }
        if rng.gen_bool(0.5) {
            files.push(self.file("README.md", readme(skill)));
        }
        SkillPackage::new(id, files).expect("generated paths are distinct")
    }
}

fn entry(package: SkillPackage, gold: Label, kind: EntryKind, family: Option<&str>, anchor: Option<&str>) -> CorpusEntry {
    CorpusEntry {
        root: format!("packages/{}", package.id),
        package,
        gold,
        kind,
        family: family.map(str::to_string),
        anchor_id: anchor.map(str::to_string),
    }
}

/// Deterministic corpus for `spec`: clean entries first, then each family's
/// seeds followed by their rewrites.
pub fn generate(spec: &GenSpec) -> Result<Vec<CorpusEntry>, GenError> {
    spec.validate()?;
    let builder = Builder {
        table: cue_table(),
        roles: RoleMap::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    for i in 0..spec.counts.clean {
        let id = format!("g{}-clean-{i:02}", spec.seed);
        let pkg = builder.clean_package(&id, &mut rng);
        out.push(entry(pkg, Label::Benign, EntryKind::Clean, None, None));
    }
    for family in &spec.families {
        for j in 0..spec.counts.risk_seed_per_family {
            let draw = builder.draw(family, &mut rng);
            let seed_id = format!("g{}-{}-s{j}", spec.seed, family.family_id);
            let fid = Some(family.family_id.as_str());
            let seed = builder.risk_package(&seed_id, family, &draw, 0);
            out.push(entry(seed, family.gold, EntryKind::RiskSeed, fid, None));
            for r in 1..=spec.counts.rewrites_per_seed {
                let id = format!("{seed_id}-rw{r}");
                let pkg = builder.risk_package(&id, family, &draw, r);
                out.push(entry(pkg, family.gold, EntryKind::Rewrite, fid, Some(&seed_id)));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// A URL whose host is not under the reserved `.invalid` TLD.
    LiveHost,
    /// A shebang file that also carries an install or pipe-to-shell command.
    ExecutableInstall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub package_id: String,
    pub path: String,
    pub line: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

static URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\b[a-z][a-z0-9+.-]*://(?:[^@/\s'"]*@)?([^/\s:'"\)]+)"#).expect("valid regex")
});
static INSTALL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(curl|wget)\b.*\|\s*(ba|z)?sh\b|\b(pip|npm|gem|apt|apt-get|brew)\s+install\b")
        .expect("valid regex")
});

/// Checks that generated content cannot reach a live host or run an installer.
pub fn sanitize_check(corpus: &[CorpusEntry]) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in corpus {
        for f in &e.package.files {
            let executable = f.content.starts_with("#!");
            for (n, line) in f.content.lines().enumerate() {
                let mut report = |kind, detail: String| {
                    out.push(Violation {
                        package_id: e.package.id.clone(),
                        path: f.path.clone(),
                        line: n + 1,
                        kind,
                        detail,
                    })
                };
                for cap in URL.captures_iter(line) {
                    let host = cap[1].trim_end_matches('.').to_ascii_lowercase();
                    if !(host == "invalid" || host.ends_with(".invalid")) {
                        report(ViolationKind::LiveHost, host);
                    }
                }
                if executable && INSTALL.is_match(line) {
                    report(ViolationKind::ExecutableInstall, line.trim().to_string());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{score_file, RolePack};
    use crate::package::validate_corpus;

    fn matched_rules(text: &str, pack: &RolePack) -> Vec<String> {
        let file = PackageFile::new("docs/x.md", FileRole::Reference, text).unwrap();
        let v = score_file(&file, pack);
        let mut ids: Vec<String> = v.matches.iter().flatten().map(|m| m.rule_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    #[test]
    fn every_variant_matches_exactly_its_slot_rule() {
        let pack = RolePack::builtin();
        for (signal, slots) in &cue_table().signals {
            for slot in slots {
                let rule = pack.rule(&slot.rule).unwrap_or_else(|| panic!("unknown rule {}", slot.rule));
                assert_eq!(rule.signal, *signal, "{}", slot.rule);
                assert!(slot.variants.len() >= 2, "{}", slot.rule);
                for v in &slot.variants {
                    assert_eq!(matched_rules(v, &pack), std::slice::from_ref(&slot.rule), "variant `{v}`");
                }
            }
            let weights: Vec<f64> = slots.iter().map(|s| pack.rule(&s.rule).unwrap().weight).collect();
            assert!(weights.windows(2).all(|w| w[0] >= w[1]), "{signal} slots not strongest first");
        }
    }

    #[test]
    fn benign_text_matches_nothing() {
        let pack = RolePack::builtin();
        let b = &cue_table().benign;
        let lines = b
            .skill_lines
            .iter()
            .chain(&b.reference_lines)
            .chain(&b.shell_lines)
            .chain(&b.python_lines)
            .chain(b.skills.iter().map(|s| &s.purpose));
        for line in lines {
            assert!(matched_rules(line, &pack).is_empty(), "benign line `{line}` matched");
        }
    }

    #[test]
    fn default_fixture_shape() {
        let spec = GenSpec::default_fixture();
        let corpus = generate(&spec).unwrap();
        assert_eq!(corpus.len(), 20 + 6 * 4);
        validate_corpus(&corpus).unwrap();
        assert!(sanitize_check(&corpus).is_empty());
        assert!(corpus.iter().all(|e| !e.package.files.iter().any(|f| f.content.starts_with("#!"))));
    }

    #[test]
    fn generation_is_deterministic_and_seeded() {
        let spec = GenSpec::default_fixture();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = GenSpec { seed: 18, ..spec.clone() };
        let a: BTreeSet<_> = generate(&spec).unwrap().iter().map(|e| e.id().to_string()).collect();
        let b: BTreeSet<_> = generate(&other).unwrap().iter().map(|e| e.id().to_string()).collect();
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn rewrites_change_surface_but_keep_rules() {
        let pack = RolePack::builtin();
        let corpus = generate(&GenSpec::default_fixture()).unwrap();
        let rules_of = |e: &CorpusEntry| -> BTreeSet<String> {
            e.package
                .files
                .iter()
                .flat_map(|f| score_file(f, &pack).matches.into_iter().flatten().map(|m| m.rule_id))
                .collect()
        };
        for rw in corpus.iter().filter(|e| e.kind == EntryKind::Rewrite) {
            let seed = corpus.iter().find(|e| Some(e.id()) == rw.anchor_id.as_deref()).unwrap();
            assert_eq!(rules_of(rw), rules_of(seed), "{}", rw.id());
            assert_ne!(rw.package.files, seed.package.files, "{}", rw.id());
        }
    }

    #[test]
    fn clean_packages_carry_no_evidence() {
        let pack = RolePack::builtin();
        let spec = GenSpec {
            counts: GenCounts {
                clean: 60,
                risk_seed_per_family: 0,
                rewrites_per_seed: 0,
            },
            ..GenSpec::default_fixture()
        };
        for e in generate(&spec).unwrap() {
            for f in &e.package.files {
                assert_eq!(score_file(f, &pack).mass(), 0.0, "{} {}", e.id(), f.path);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = GenSpec::default_fixture();
        spec.families[0].strength = 1.5;
        assert!(generate(&spec).is_err());
        let mut spec = GenSpec::default_fixture();
        spec.families[1].family_id = spec.families[0].family_id.clone();
        assert!(generate(&spec).is_err());
        let mut spec = GenSpec::default_fixture();
        spec.families[0].gold = Label::Benign;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn cue_counts() {
        assert_eq!(cue_count(0.25, 4), 1);
        assert_eq!(cue_count(0.5, 4), 2);
        assert_eq!(cue_count(1.0, 4), 4);
        assert_eq!(cue_count(0.5, 3), 2);
        assert_eq!(cue_count(0.0, 4), 0);
    }

    #[test]
    fn sanitizer_flags_live_hosts_and_executable_installs() {
        let pkg = SkillPackage::new(
            "p",
            vec![
                PackageFile::new("docs/a.md", FileRole::Reference, "see https://example.com/x and https://ok.invalid/y").unwrap(),
                PackageFile::new("run.sh", FileRole::Script, "#!/bin/sh\npip install thing\n").unwrap(),
            ],
        )
        .unwrap();
        let corpus = vec![entry(pkg, Label::Benign, EntryKind::Clean, None, None)];
        let v = sanitize_check(&corpus);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].kind, ViolationKind::LiveHost);
        assert_eq!(v[0].detail, "example.com");
        assert_eq!(v[1].kind, ViolationKind::ExecutableInstall);
        assert_eq!(v[1].line, 2);
    }
}
