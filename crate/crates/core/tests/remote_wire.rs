#[path = "support/mock_server.rs"]
mod mock_server;

use std::time::Duration;

use mock_server::{chat_reply, MockServer};
use serde_json::Value;
use skill_audit::evidence::{extract, RolePack};
use skill_audit::package::{FileRole, PackageFile, SkillPackage};
use skill_audit::verification::{
    select_snippets, verify, RemoteConfig, RemoteVerifier, SemanticVerifier, SnippetBundle, VerifyError,
};
use skill_audit::Thresholds;

const VALID: &str = r#"{"override":{"q":0.1,"kappa":0.8,"rationale":"no override"},"transfer":{"q":0.7,"kappa":0.9,"rationale":"notes pushed to a remote bucket"},"bootstrap":{"q":0.2,"kappa":0.6,"rationale":"no bootstrap"}}"#;

fn bundle() -> SnippetBundle {
    let pkg = SkillPackage::new(
        "p",
        vec![
            PackageFile::new("SKILL.md", FileRole::SkillMd, "# Notes\nThis copy is kept for archival purposes.\n").unwrap(),
            PackageFile::new("scripts/a.sh", FileRole::Script, "Sync the workspace notes to the remote bucket.\n").unwrap(),
        ],
    )
    .unwrap();
    let ex = extract(&pkg, &RolePack::builtin(), &Thresholds::default());
    select_snippets(&pkg, &ex.vectors, &ex.support, &ex.features)
}

fn client(url: &str) -> RemoteVerifier {
    let mut cfg = RemoteConfig::new(url, "judge-model");
    cfg.api_key = Some("secret".into());
    cfg.backoff_base = Duration::from_millis(5);
    cfg.timeout = Duration::from_secs(5);
    RemoteVerifier::new(cfg)
}

#[test]
fn request_is_chat_completions_json() {
    let server = MockServer::start(vec![(200, chat_reply(VALID))]);
    let j = client(&server.url).judge(&bundle()).unwrap();
    assert_eq!(j.q.transfer, 0.7);
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    let body: Value = serde_json::from_str(&reqs[0]).unwrap();
    assert_eq!(body["model"], "judge-model");
    let messages = body["messages"].as_array().unwrap();
    assert_eq!(messages[0]["role"], "system");
    assert_eq!(messages[1]["role"], "user");
    assert!(messages[1]["content"].as_str().unwrap().contains("scripts/a.sh"));
}

#[test]
fn out_of_range_values_are_clamped_with_a_warning() {
    let reply = VALID.replace("\"q\":0.7", "\"q\":1.3");
    let server = MockServer::start(vec![(200, chat_reply(&reply))]);
    let out = verify(&bundle(), &client(&server.url)).unwrap();
    assert_eq!(out.judgment.q.transfer, 1.0);
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn one_repair_prompt_then_malformed() {
    let server = MockServer::start(vec![(200, chat_reply("sure, looks fine")), (200, chat_reply("still not json"))]);
    let err = client(&server.url).judge(&bundle()).unwrap_err();
    assert!(matches!(err, VerifyError::MalformedJudgment(_)));
    let reqs = server.requests();
    assert_eq!(reqs.len(), 2);
    let second: Value = serde_json::from_str(&reqs[1]).unwrap();
    assert_eq!(second["messages"].as_array().unwrap().len(), 4);
}

#[test]
fn repair_prompt_can_recover() {
    let server = MockServer::start(vec![(200, chat_reply("thinking...")), (200, chat_reply(VALID))]);
    assert!(client(&server.url).judge(&bundle()).is_ok());
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn server_errors_are_retried() {
    let server = MockServer::start(vec![(503, "{}".into()), (429, "{}".into()), (200, chat_reply(VALID))]);
    let c = client(&server.url);
    assert!(c.judge(&bundle()).is_ok());
    assert_eq!(c.requests_sent(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(vec![(401, "{}".into())]);
    let c = client(&server.url);
    assert!(matches!(c.judge(&bundle()), Err(VerifyError::VerifierUnavailable(_))));
    assert_eq!(c.requests_sent(), 1);
}
