//! Skill packages, labels, and labeled corpora loaded from disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use globset::{GlobBuilder, GlobMatcher};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

/// Default per-file size cap (512 KiB).
pub const DEFAULT_MAX_FILE_BYTES: u64 = 512 * 1024;

#[derive(Debug, Error)]
pub enum PackageError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("package at {0} contains no readable text files")]
    EmptyPackage(PathBuf),
    #[error("package contains more than one skill_md file: {first} and {second}")]
    DuplicateSkillMd { first: String, second: String },
    #[error("unknown file role `{0}`")]
    UnknownRole(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("invalid package path `{0}`")]
    InvalidPath(String),
    #[error("invalid role pattern `{pattern}`: {message}")]
    InvalidRolePattern { pattern: String, message: String },
    #[error("invalid package: {0}")]
    Invalid(String),
    #[error("manifest parse error in {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("rewrite `{rewrite}` references unknown risk seed `{anchor}`")]
    DanglingAnchor { rewrite: String, anchor: String },
    #[error("duplicate package id `{0}`")]
    DuplicateId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PackageError + '_ {
    move |source| PackageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileRole {
    SkillMd,
    Script,
    Reference,
    RepoContext,
}

impl FileRole {
    pub const ALL: [FileRole; 4] = [
        FileRole::SkillMd,
        FileRole::Script,
        FileRole::Reference,
        FileRole::RepoContext,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FileRole::SkillMd => "skill_md",
            FileRole::Script => "script",
            FileRole::Reference => "reference",
            FileRole::RepoContext => "repo_context",
        }
    }
}

impl fmt::Display for FileRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FileRole {
    type Err = PackageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "skill_md" => Ok(FileRole::SkillMd),
            "script" => Ok(FileRole::Script),
            "reference" => Ok(FileRole::Reference),
            "repo_context" => Ok(FileRole::RepoContext),
            other => Err(PackageError::UnknownRole(other.to_string())),
        }
    }
}

/// Three-way audit label, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Suspicious,
    Malicious,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Benign, Label::Suspicious, Label::Malicious];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Suspicious => "suspicious",
            Label::Malicious => "malicious",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_flagged(self) -> bool {
        self != Label::Benign
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = PackageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Label::Benign),
            "suspicious" => Ok(Label::Suspicious),
            "malicious" => Ok(Label::Malicious),
            other => Err(PackageError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageFile {
    pub path: String,
    pub role: FileRole,
    pub content: String,
}

impl PackageFile {
    pub fn new(
        path: impl Into<String>,
        role: FileRole,
        content: impl Into<String>,
    ) -> Result<Self, PackageError> {
        let path = path.into();
        validate_relative_path(&path)?;
        Ok(Self {
            path,
            role,
            content: content.into(),
        })
    }
}

/// Rejects empty, absolute, and parent-traversing paths. Separators are `/`.
pub fn validate_relative_path(path: &str) -> Result<(), PackageError> {
    let bad = path.is_empty()
        || path.starts_with('/')
        || path.starts_with('\\')
        || path.split('/').any(|seg| seg == ".." || seg.is_empty())
        || Path::new(path).is_absolute();
    if bad {
        return Err(PackageError::InvalidPath(path.to_string()));
    }
    Ok(())
}

/// A bundle of role-tagged files audited as one unit. Files are kept sorted by path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillPackage {
    pub id: String,
    pub files: Vec<PackageFile>,
}

impl SkillPackage {
    pub fn new(id: impl Into<String>, mut files: Vec<PackageFile>) -> Result<Self, PackageError> {
        let id = id.into();
        if id.is_empty() {
            return Err(PackageError::Invalid("package id is empty".into()));
        }
        if files.is_empty() {
            return Err(PackageError::Invalid(format!("package `{id}` has no files")));
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        for pair in files.windows(2) {
            if pair[0].path == pair[1].path {
                return Err(PackageError::Invalid(format!(
                    "package `{id}` lists `{}` twice",
                    pair[0].path
                )));
            }
        }
        let mut skill_md = files.iter().filter(|f| f.role == FileRole::SkillMd);
        if let (Some(first), Some(second)) = (skill_md.next(), skill_md.next()) {
            return Err(PackageError::DuplicateSkillMd {
                first: first.path.clone(),
                second: second.path.clone(),
            });
        }
        Ok(Self { id, files })
    }

    pub fn files_with_role(&self, role: FileRole) -> impl Iterator<Item = &PackageFile> {
        self.files.iter().filter(move |f| f.role == role)
    }
}

/// One ordered glob rule: the first matching rule assigns the role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleRule {
    pub pattern: String,
    pub role: FileRole,
}

/// Path-glob rules mapping package-relative paths to file roles.
#[derive(Debug, Clone)]
pub struct RoleMap {
    rules: Vec<(RoleRule, GlobMatcher)>,
    fallback: FileRole,
}

impl RoleMap {
    pub fn new(rules: Vec<RoleRule>, fallback: FileRole) -> Result<Self, PackageError> {
        let rules = rules
            .into_iter()
            .map(|rule| {
                let glob = GlobBuilder::new(&rule.pattern)
                    .literal_separator(true)
                    .build()
                    .map_err(|e| PackageError::InvalidRolePattern {
                        pattern: rule.pattern.clone(),
                        message: e.to_string(),
                    })?;
                Ok((rule, glob.compile_matcher()))
            })
            .collect::<Result<Vec<_>, PackageError>>()?;
        Ok(Self { rules, fallback })
    }

    pub fn default_rules() -> Vec<RoleRule> {
        let rule = |pattern: &str, role| RoleRule {
            pattern: pattern.to_string(),
            role,
        };
        vec![
            rule("SKILL.md", FileRole::SkillMd),
            rule("bin/**", FileRole::Script),
            rule("**/*.sh", FileRole::Script),
            rule("**/*.py", FileRole::Script),
            rule("**/*.js", FileRole::Script),
            rule("docs/**", FileRole::Reference),
            rule("*/**/*.md", FileRole::Reference),
        ]
    }

    pub fn rules(&self) -> impl Iterator<Item = &RoleRule> {
        self.rules.iter().map(|(r, _)| r)
    }

    pub fn role_for(&self, rel_path: &str) -> FileRole {
        self.rules
            .iter()
            .find(|(_, m)| m.is_match(rel_path))
            .map(|(r, _)| r.role)
            .unwrap_or(self.fallback)
    }
}

impl Default for RoleMap {
    fn default() -> Self {
        Self::new(Self::default_rules(), FileRole::RepoContext).expect("default role rules compile")
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub role_map: RoleMap,
    pub max_file_bytes: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            role_map: RoleMap::default(),
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
        }
    }
}

/// A loaded package plus the files skipped while loading it.
#[derive(Debug, Clone)]
pub struct LoadedPackage {
    pub package: SkillPackage,
    pub warnings: Vec<String>,
}

/// Walks `root_dir` and assigns every regular text file a role.
///
/// The package id is the directory name. Binary, non-UTF-8, and oversized
/// files are skipped and reported in `warnings`; symlinks are not followed.
pub fn load_package(root_dir: &Path, opts: &LoadOptions) -> Result<LoadedPackage, PackageError> {
    let id = root_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "package".to_string());
    load_package_with_id(root_dir, &id, opts)
}

pub fn load_package_with_id(
    root_dir: &Path,
    id: &str,
    opts: &LoadOptions,
) -> Result<LoadedPackage, PackageError> {
    let meta = fs::metadata(root_dir).map_err(io_err(root_dir))?;
    if !meta.is_dir() {
        return Err(PackageError::Io {
            path: root_dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        });
    }

    let mut files = Vec::new();
    let mut warnings = Vec::new();
    for entry in WalkDir::new(root_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root_dir).to_path_buf();
            PackageError::Io {
                source: e
                    .into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("walk error")),
                path,
            }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = relative_slash_path(root_dir, entry.path())?;
        let len = entry.metadata().map_err(|e| PackageError::Io {
            path: entry.path().to_path_buf(),
            source: e
                .into_io_error()
                .unwrap_or_else(|| std::io::Error::other("metadata error")),
        })?;
        if len.len() > opts.max_file_bytes {
            warnings.push(format!(
                "skipped {rel}: {} bytes exceeds the {} byte limit",
                len.len(),
                opts.max_file_bytes
            ));
            continue;
        }
        let bytes = fs::read(entry.path()).map_err(io_err(entry.path()))?;
        let content = match String::from_utf8(bytes) {
            Ok(text) if !text.contains('\0') => text,
            _ => {
                warnings.push(format!("skipped {rel}: binary or non-UTF-8 content"));
                continue;
            }
        };
        let role = opts.role_map.role_for(&rel);
        files.push(PackageFile::new(rel, role, content)?);
    }

    if files.is_empty() {
        return Err(PackageError::EmptyPackage(root_dir.to_path_buf()));
    }
    let package = SkillPackage::new(id, files)?;
    Ok(LoadedPackage { package, warnings })
}

fn relative_slash_path(root: &Path, path: &Path) -> Result<String, PackageError> {
    let rel = path
        .strip_prefix(root)
        .map_err(|_| PackageError::InvalidPath(path.display().to_string()))?;
    let mut parts = Vec::new();
    for comp in rel.components() {
        match comp {
            Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
            _ => return Err(PackageError::InvalidPath(rel.display().to_string())),
        }
    }
    Ok(parts.join("/"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Clean,
    RiskSeed,
    Rewrite,
}

impl EntryKind {
    pub fn is_risk(self) -> bool {
        matches!(self, EntryKind::RiskSeed | EntryKind::Rewrite)
    }
}

/// One manifest line: where a package lives and what it is labeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub root: String,
    pub gold: Label,
    pub kind: EntryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub package: SkillPackage,
    pub gold: Label,
    pub kind: EntryKind,
    pub family: Option<String>,
    pub anchor_id: Option<String>,
    /// Package directory relative to the manifest.
    pub root: String,
}

impl CorpusEntry {
    pub fn id(&self) -> &str {
        &self.package.id
    }

    pub fn manifest_entry(&self) -> ManifestEntry {
        ManifestEntry {
            id: self.package.id.clone(),
            root: self.root.clone(),
            gold: self.gold,
            kind: self.kind,
            family: self.family.clone(),
            anchor_id: self.anchor_id.clone(),
        }
    }
}

/// Checks id uniqueness and the seed→rewrite anchor structure.
pub fn validate_corpus(entries: &[CorpusEntry]) -> Result<(), PackageError> {
    let mut kinds = BTreeMap::new();
    for e in entries {
        if kinds.insert(e.id(), e.kind).is_some() {
            return Err(PackageError::DuplicateId(e.id().to_string()));
        }
    }
    for e in entries {
        match (e.kind, &e.anchor_id) {
            (EntryKind::Rewrite, Some(anchor)) => {
                if kinds.get(anchor.as_str()) != Some(&EntryKind::RiskSeed) {
                    return Err(PackageError::DanglingAnchor {
                        rewrite: e.id().to_string(),
                        anchor: anchor.clone(),
                    });
                }
            }
            (EntryKind::Rewrite, None) => {
                return Err(PackageError::Invalid(format!(
                    "rewrite `{}` has no anchor_id",
                    e.id()
                )))
            }
            (_, Some(_)) => {
                return Err(PackageError::Invalid(format!(
                    "`{}` is not a rewrite but has an anchor_id",
                    e.id()
                )))
            }
            (_, None) => {}
        }
    }
    Ok(())
}

/// Reads a JSON manifest (an array of entries) and loads every package root
/// relative to the manifest's directory.
pub fn load_corpus(manifest_path: &Path, opts: &LoadOptions) -> Result<Vec<CorpusEntry>, PackageError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| PackageError::ManifestParse {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut seen = BTreeSet::new();
    for m in &manifest {
        if !seen.insert(m.id.as_str()) {
            return Err(PackageError::DuplicateId(m.id.clone()));
        }
    }

    let entries = manifest
        .into_iter()
        .map(|m| {
            let loaded = load_package_with_id(&base.join(&m.root), &m.id, opts)?;
            Ok(CorpusEntry {
                package: loaded.package,
                gold: m.gold,
                kind: m.kind,
                family: m.family,
                anchor_id: m.anchor_id,
                root: m.root,
            })
        })
        .collect::<Result<Vec<_>, PackageError>>()?;
    validate_corpus(&entries)?;
    Ok(entries)
}

pub fn manifest_json(entries: &[CorpusEntry]) -> String {
    let manifest: Vec<ManifestEntry> = entries.iter().map(CorpusEntry::manifest_entry).collect();
    serde_json::to_string_pretty(&manifest).expect("manifest serializes")
}

/// Writes every package under `out_dir/<root>` and the manifest at
/// `out_dir/manifest.json`; returns the manifest path.
pub fn write_corpus(entries: &[CorpusEntry], out_dir: &Path) -> Result<PathBuf, PackageError> {
    validate_corpus(entries)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for entry in entries {
        validate_relative_path(&entry.root)?;
        let root = out_dir.join(&entry.root);
        for file in &entry.package.files {
            let path = root.join(&file.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&path, &file.content).map_err(io_err(&path))?;
        }
    }
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, manifest_json(entries)).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

/// Anchor id → rewrite ids, for every risk seed (seeds without rewrites map to an empty list).
pub fn cluster_map(entries: &[CorpusEntry]) -> BTreeMap<String, Vec<String>> {
    let mut clusters: BTreeMap<String, Vec<String>> = entries
        .iter()
        .filter(|e| e.kind == EntryKind::RiskSeed)
        .map(|e| (e.id().to_string(), Vec::new()))
        .collect();
    for e in entries {
        if let (EntryKind::Rewrite, Some(anchor)) = (e.kind, &e.anchor_id) {
            clusters.entry(anchor.clone()).or_default().push(e.id().to_string());
        }
    }
    for rewrites in clusters.values_mut() {
        rewrites.sort();
    }
    clusters
}
