use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::VerifierJudgment;

/// One verifier call, for remote-cost accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub package_id: String,
    pub bundle_hash: String,
    pub request_chars: usize,
    pub judgment: Option<VerifierJudgment>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only JSONL sink shared across worker threads.
pub struct TranscriptLog {
    out: Mutex<Box<dyn Write + Send>>,
}

impl TranscriptLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_writer(BufWriter::new(File::create(path)?)))
    }

    pub fn from_writer(w: impl Write + Send + 'static) -> Self {
        Self {
            out: Mutex::new(Box::new(w)),
        }
    }

    pub fn append(&self, record: &TranscriptRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        let mut out = self.out.lock().expect("transcript lock");
        writeln!(out, "{line}")
    }

    pub fn flush(&self) -> std::io::Result<()> {
        self.out.lock().expect("transcript lock").flush()
    }
}
