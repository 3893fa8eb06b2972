use crate::chain::{Chain, PerChain};

use super::{SemanticVerifier, SnippetBundle, VerifierJudgment, VerifyError};

/// Confidence reported by the stub for every chain.
pub const STUB_KAPPA: f64 = 0.9;

/// Deterministic offline verifier: `q_c` is the structured support of the
/// chain's signal, `kappa_c` is 0.9, and the rationale names the dominant chain.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubVerifier;

impl SemanticVerifier for StubVerifier {
    fn name(&self) -> &str {
        "stub"
    }

    fn judge(&self, bundle: &SnippetBundle) -> Result<VerifierJudgment, VerifyError> {
        let q = PerChain::from_fn(|c| bundle.summary.get(c.signal()));
        let dominant = Chain::ALL
            .into_iter()
            .fold(Chain::Override, |best, c| if q[c] > q[best] { c } else { best });
        let rationale = PerChain::from_fn(|c| {
            if q[c] > 0.0 {
                format!(
                    "{c} chain supported by structured evidence (s={:.2}); dominant chain: {dominant}",
                    q[c]
                )
            } else {
                format!("no {c} evidence in the selected snippets")
            }
        });
        Ok(VerifierJudgment {
            q,
            kappa: PerChain::splat(STUB_KAPPA),
            rationale,
        })
    }
}
