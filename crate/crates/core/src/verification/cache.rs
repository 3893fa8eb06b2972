use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{SemanticVerifier, SnippetBundle, VerifierJudgment, VerifyError};

/// Memoizes judgments by bundle content hash. Failures are not cached.
pub struct CachingVerifier<V> {
    inner: V,
    entries: Mutex<HashMap<String, VerifierJudgment>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<V: SemanticVerifier> CachingVerifier<V> {
    pub fn new(inner: V) -> Self {
        Self {
            inner,
            entries: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &V {
        &self.inner
    }
}

impl<V: SemanticVerifier> SemanticVerifier for CachingVerifier<V> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn judge(&self, bundle: &SnippetBundle) -> Result<VerifierJudgment, VerifyError> {
        let key = bundle.content_hash();
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        // Lock released during the call; concurrent misses on one key store equal values.
        let judgment = self.inner.judge(bundle)?;
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key, judgment.clone());
        Ok(judgment)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{AggregatedFeatures, NUM_SIGNALS};
    use crate::package::FileRole;
    use crate::verification::{SnippetItem, StructuredSummary, StubVerifier};

    fn bundle(text: &str) -> SnippetBundle {
        SnippetBundle {
            items: vec![SnippetItem {
                path: "SKILL.md".into(),
                role: FileRole::SkillMd,
                text: text.into(),
                truncated: false,
            }],
            summary: StructuredSummary {
                support: [0.1; NUM_SIGNALS],
                features: AggregatedFeatures::default(),
            },
        }
    }

    #[test]
    fn second_call_hits() {
        let cache = CachingVerifier::new(StubVerifier);
        let a = cache.judge(&bundle("a")).unwrap();
        let b = cache.judge(&bundle("a")).unwrap();
        cache.judge(&bundle("b")).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.hits(), 1);
        assert_eq!(cache.misses(), 2);
    }
}
