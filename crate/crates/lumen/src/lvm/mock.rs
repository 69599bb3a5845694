//! Offline provider whose reply is a pure function of the prompt.

use lumen_core::prompt::{PromptBundle, PREDICTED_PREFIX, VERDICT_PREFIX};

use super::{LvmRequest, LvmTransport, TransportError, TransportReply};

pub const MOCK_PROVIDER: &str = "mock";

/// `Model predicted {prediction}; salient region described; verdict {verdict}`,
/// filled from the bundle's `Predicted:` and `Verdict hint:` lines.
pub fn mock_text(bundle: &PromptBundle) -> Result<String, TransportError> {
    let prediction = bundle
        .line_value(PREDICTED_PREFIX)
        .ok_or_else(|| TransportError::Malformed("prompt has no prediction line".into()))?;
    let verdict = bundle
        .line_value(VERDICT_PREFIX)
        .ok_or_else(|| TransportError::Malformed("prompt has no verdict line".into()))?;
    Ok(format!(
        "Model predicted {prediction}; salient region described; verdict {verdict}"
    ))
}

pub struct MockTransport;

impl LvmTransport for MockTransport {
    fn requires_credential(&self) -> bool {
        false
    }

    fn send(&self, req: &LvmRequest<'_>) -> Result<TransportReply, TransportError> {
        Ok(TransportReply {
            text: mock_text(req.bundle)?,
            token_usage: None,
        })
    }
}
