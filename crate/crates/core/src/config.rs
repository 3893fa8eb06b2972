//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consolidation::PromotionMode;
use crate::evidence::{EvidenceError, RolePack};
use crate::package::{FileRole, LoadOptions, PackageError, RoleMap, RoleRule, DEFAULT_MAX_FILE_BYTES};
use crate::thresholds::{ThresholdError, Thresholds};
use crate::verification::{RemoteConfig, RemoteVerifier, SemanticVerifier, StubVerifier};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error(transparent)]
    Thresholds(#[from] ThresholdError),
    #[error(transparent)]
    Roles(#[from] PackageError),
    #[error(transparent)]
    RulePack(#[from] EvidenceError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    #[default]
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierConfig {
    pub kind: VerifierKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the API key.
    pub key_env: Option<String>,
    pub timeout_s: u64,
    pub max_retries: u32,
    /// Concurrent packages during corpus runs.
    pub parallelism: usize,
    pub request_budget: Option<usize>,
    pub min_interval_ms: u64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            kind: VerifierKind::Stub,
            endpoint: None,
            model: None,
            key_env: None,
            timeout_s: 60,
            max_retries: 3,
            parallelism: 4,
            request_budget: None,
            min_interval_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleConfig {
    /// Replaces the built-in rules when non-empty.
    pub rules: Vec<RoleRule>,
    pub fallback: FileRole,
}

impl Default for RoleConfig {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            fallback: FileRole::RepoContext,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub thresholds: Thresholds,
    /// Rule pack file (TOML or JSON); the bundled pack when absent.
    pub rule_pack: Option<PathBuf>,
    pub roles: RoleConfig,
    pub max_file_bytes: u64,
    pub verifier: VerifierConfig,
    pub promotion_mode: PromotionMode,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            rule_pack: None,
            roles: RoleConfig::default(),
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
            verifier: VerifierConfig::default(),
            promotion_mode: PromotionMode::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; a relative `rule_pack` resolves against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(pack), Some(dir)) = (&cfg.rule_pack, path.parent()) {
            if pack.is_relative() {
                cfg.rule_pack = Some(dir.join(pack));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.thresholds.validate()?;
        let v = &self.verifier;
        if v.kind == VerifierKind::Remote {
            let missing = |f: &Option<String>| f.as_deref().is_none_or(|s| s.trim().is_empty());
            if missing(&v.endpoint) || missing(&v.model) {
                return Err(ConfigError::Invalid(
                    "remote verifier needs both `endpoint` and `model`".into(),
                ));
            }
        }
        if v.parallelism == 0 {
            return Err(ConfigError::Invalid("verifier parallelism must be at least 1".into()));
        }
        if self.max_file_bytes == 0 {
            return Err(ConfigError::Invalid("max_file_bytes must be positive".into()));
        }
        self.role_map()?;
        Ok(())
    }

    pub fn role_map(&self) -> Result<RoleMap, ConfigError> {
        let rules = if self.roles.rules.is_empty() {
            RoleMap::default_rules()
        } else {
            self.roles.rules.clone()
        };
        Ok(RoleMap::new(rules, self.roles.fallback)?)
    }

    pub fn load_options(&self) -> Result<LoadOptions, ConfigError> {
        Ok(LoadOptions {
            role_map: self.role_map()?,
            max_file_bytes: self.max_file_bytes,
        })
    }

    pub fn role_pack(&self) -> Result<RolePack, ConfigError> {
        match &self.rule_pack {
            Some(path) => Ok(RolePack::load(path)?),
            None => Ok(RolePack::builtin()),
        }
    }

    pub fn build_verifier(&self) -> Result<Arc<dyn SemanticVerifier>, ConfigError> {
        let v = &self.verifier;
        match v.kind {
            VerifierKind::Stub => Ok(Arc::new(StubVerifier)),
            VerifierKind::Remote => {
                let (Some(endpoint), Some(model)) = (&v.endpoint, &v.model) else {
                    return Err(ConfigError::Invalid(
                        "remote verifier needs both `endpoint` and `model`".into(),
                    ));
                };
                let api_key = match &v.key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        ConfigError::Invalid(format!("environment variable `{var}` is not set"))
                    })?),
                    None => None,
                };
                let mut rc = RemoteConfig::new(endpoint, model);
                rc.api_key = api_key;
                rc.timeout = Duration::from_secs(v.timeout_s);
                rc.max_retries = v.max_retries;
                rc.request_budget = v.request_budget;
                rc.min_interval = Duration::from_millis(v.min_interval_ms);
                Ok(Arc::new(RemoteVerifier::new(rc)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn full_config_parses() {
        let cfg = RunConfig::from_toml(
            r#"
promotion_mode = "relaxed"
output_dir = "runs/a"

[thresholds]
tau_minus = 0.3

[roles]
fallback = "reference"
[[roles.rules]]
pattern = "SKILL.md"
role = "skill_md"

[verifier]
kind = "remote"
endpoint = "http://127.0.0.1:9/v1/chat/completions"
model = "judge"
parallelism = 2
"#,
        )
        .unwrap();
        assert_eq!(cfg.promotion_mode, PromotionMode::Relaxed);
        assert_eq!(cfg.thresholds.tau_minus, 0.3);
        assert_eq!(cfg.role_map().unwrap().role_for("x/y.txt"), FileRole::Reference);
        assert_eq!(cfg.verifier.kind, VerifierKind::Remote);
        assert_eq!(cfg.build_verifier().unwrap().name(), "remote");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("[verifier]\nkind = \"remote\"\nmodel = \"m\"\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[thresholds]\ntau_minus = 0.9\ntau_plus = 0.1\n"),
            Err(ConfigError::Thresholds(_))
        ));
        assert!(matches!(RunConfig::from_toml("colour = 1\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RunConfig::from_toml("[[roles.rules]]\npattern = \"[\"\nrole = \"script\"\n"),
            Err(ConfigError::Roles(_))
        ));
    }

    #[test]
    fn missing_key_env_is_reported() {
        let mut cfg = RunConfig::default();
        cfg.verifier.kind = VerifierKind::Remote;
        cfg.verifier.endpoint = Some("http://127.0.0.1:9".into());
        cfg.verifier.model = Some("m".into());
        cfg.verifier.key_env = Some("SKILL_AUDIT_TEST_KEY_THAT_IS_UNSET".into());
        assert!(matches!(cfg.build_verifier(), Err(ConfigError::Invalid(_))));
    }
}
