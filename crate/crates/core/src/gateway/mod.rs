//! Prompting the language model and turning its replies into compositions.
//!
//! [`Gateway`] is stateless: every call renders a prompt, asks the provider,
//! and validates the reply. Rejected replies are retried with a corrective
//! hint; once retries run out a reply that is only missing odorants is
//! repaired locally, anything else is surfaced as an error.

mod mock;
mod parse;
mod prompt;
mod provider;

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{ConstraintWarning, RatioVector};
use crate::palette::Palette;

pub use mock::MockProvider;
pub use parse::{parse_response, parse_response_lenient, strip_fence, ParseError};
pub use prompt::{
    build_generation_prompt, build_revision_prompt, generation_system_prompt, render_ratios,
    render_user_input, revision_system_prompt, HistoryEntry, PromptBundle, CURRENT_RATIOS,
    EMPTY_HISTORY, LATEST_FEEDBACK, ORIGINAL_REQUEST, PRIOR_HISTORY,
};
pub use provider::{Provider, ProviderError, ScriptedProvider};

/// Retries after the first attempt.
pub const DEFAULT_MAX_RETRIES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("unrepairable model output after {attempts} attempts ({code}): {detail}")]
    Unrepairable {
        attempts: usize,
        code: &'static str,
        detail: String,
    },
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::InvalidInput(_) => "invalid_input",
            GatewayError::Provider(_) => "provider_failure",
            GatewayError::Unrepairable { .. } => "unrepairable_output",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Speech,
}

/// A user's description of the target aroma. Image and audio have already
/// been cascaded to text by the time they land here.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

fn present(field: &Option<String>) -> bool {
    field.as_deref().is_some_and(|s| !s.trim().is_empty())
}

impl UserInput {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.modalities().is_empty() {
            return Err(GatewayError::InvalidInput(
                "at least one of text, image or speech is required".into(),
            ));
        }
        Ok(())
    }

    pub fn modalities(&self) -> BTreeSet<Modality> {
        [
            (Modality::Text, &self.text),
            (Modality::Image, &self.image_description),
            (Modality::Speech, &self.transcript),
        ]
        .into_iter()
        .filter(|(_, f)| present(f))
        .map(|(m, _)| m)
        .collect()
    }
}

/// A validated (and possibly repaired) composition from the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompositionResult {
    pub ratios: RatioVector,
    pub justification: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub changes_made: Option<String>,
    /// The reply needed local repair to satisfy the ratio contract.
    pub repaired: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ConstraintWarning>,
}

impl CompositionResult {
    /// The result in the model's own output schema.
    pub fn to_response_json(&self) -> String {
        let mut obj = serde_json::json!({
            "scent_ratios": self.ratios.to_json_numbers(),
            "justification": self.justification,
        });
        if let Some(changes) = &self.changes_made {
            obj["changes_made"] = changes.clone().into();
        }
        serde_json::to_string_pretty(&obj).expect("result serializes")
    }
}

/// A gateway call's result plus telemetry.
#[derive(Debug, Clone)]
pub struct Generation {
    pub result: CompositionResult,
    pub attempts: usize,
    pub latency_ms: u64,
}

pub struct Gateway<'a> {
    provider: &'a dyn Provider,
    palette: &'a Palette,
    max_retries: usize,
}

impl<'a> Gateway<'a> {
    pub fn new(provider: &'a dyn Provider, palette: &'a Palette) -> Self {
        Self {
            provider,
            palette,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn with_max_retries(mut self, retries: usize) -> Self {
        self.max_retries = retries;
        self
    }

    pub fn palette(&self) -> &Palette {
        self.palette
    }

    /// Zero-shot composition for `input`.
    pub fn generate(&self, input: &UserInput) -> Result<Generation, GatewayError> {
        let prompt = build_generation_prompt(self.palette, input)?;
        self.run(&prompt)
    }

    /// Revision of `current` given the full feedback history.
    pub fn refine(
        &self,
        original: &UserInput,
        current: &RatioVector,
        history: &[HistoryEntry],
        latest_feedback: &str,
    ) -> Result<Generation, GatewayError> {
        let prompt =
            build_revision_prompt(self.palette, original, current, history, latest_feedback)?;
        self.run(&prompt)
    }

    /// Cascades raw image bytes to a text description.
    pub fn describe_image(&self, image: &[u8]) -> Result<String, GatewayError> {
        Ok(self.provider.describe_image(image)?)
    }

    pub fn transcribe(&self, audio: &[u8]) -> Result<String, GatewayError> {
        Ok(self.provider.transcribe(audio)?)
    }

    fn run(&self, prompt: &PromptBundle) -> Result<Generation, GatewayError> {
        let started = Instant::now();
        let mut failures: Vec<(String, ParseError)> = Vec::new();
        let attempts = self.max_retries + 1;
        for attempt in 1..=attempts {
            let user = match failures.last() {
                Some((_, err)) => format!("{}{}", prompt.user, retry_hint(err)),
                None => prompt.user.clone(),
            };
            let raw = self.provider.complete(&prompt.system, &user)?;
            match parse_response(&raw, self.palette) {
                Ok(result) => {
                    return Ok(self.finish(result, attempt, started));
                }
                Err(err) => {
                    tracing::debug!(attempt, code = err.code(), "model reply rejected");
                    failures.push((raw, err));
                }
            }
        }

        if let Some((raw, _)) = failures.iter().rev().find(|(_, e)| e.is_repairable()) {
            if let Ok(result) = parse_response_lenient(raw, self.palette) {
                return Ok(self.finish(result, attempts, started));
            }
        }
        let (_, last) = failures.pop().expect("at least one attempt");
        Err(GatewayError::Unrepairable {
            attempts,
            code: last.code(),
            detail: last.to_string(),
        })
    }

    fn finish(&self, result: CompositionResult, attempts: usize, started: Instant) -> Generation {
        for w in &result.warnings {
            tracing::warn!(%w, "composition outside prompt constraints");
        }
        Generation {
            result,
            attempts,
            latency_ms: u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX),
        }
    }
}

fn retry_hint(err: &ParseError) -> String {
    format!(
        "\n\nYOUR PREVIOUS RESPONSE WAS REJECTED ({}): {err}. Reply with a single corrected JSON object that satisfies every constraint.",
        err.code()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::Hundredths;

    fn palette() -> Palette {
        Palette::bundled()
    }

    fn blend(pairs: &[(&str, u32)]) -> String {
        let p = palette();
        let ratios = RatioVector::from_hundredths(&p, pairs.iter().copied()).unwrap();
        CompositionResult {
            ratios,
            justification: "beats".into(),
            changes_made: None,
            repaired: false,
            warnings: vec![],
        }
        .to_response_json()
    }

    fn four() -> String {
        blend(&[("Onion", 40), ("Thyme", 20), ("Sage", 20), ("Cumin", 20)])
    }

    #[test]
    fn valid_reply_passes_through() {
        let p = palette();
        let provider = ScriptedProvider::new([four()]);
        let g = Gateway::new(&provider, &p)
            .generate(&UserInput::text("pizza"))
            .unwrap();
        assert_eq!(g.result.ratios.active_odorants().len(), 4);
        assert_eq!(g.attempts, 1);
    }

    #[test]
    fn fenced_reply_accepted_first_time() {
        let p = palette();
        let provider = ScriptedProvider::new([format!("```json\n{}\n```", four()), four()]);
        let g = Gateway::new(&provider, &p)
            .generate(&UserInput::text("pizza"))
            .unwrap();
        assert_eq!(g.attempts, 1);
        assert_eq!(provider.calls().len(), 1);
    }

    #[test]
    fn garbage_exhausts_retries() {
        let p = palette();
        let provider = ScriptedProvider::new(["nope", "still nope", "{bad"]);
        let err = Gateway::new(&provider, &p)
            .generate(&UserInput::text("pizza"))
            .unwrap_err();
        assert!(matches!(
            err,
            GatewayError::Unrepairable {
                attempts: 3,
                code: "unparseable_json",
                ..
            }
        ));
        let calls = provider.calls();
        assert_eq!(calls.len(), 3);
        assert!(!calls[0].1.contains("REJECTED"));
        assert!(calls[1].1.contains("REJECTED (unparseable_json)"));
    }

    #[test]
    fn retry_recovers() {
        let p = palette();
        let provider = ScriptedProvider::new(["garbage".to_owned(), four()]);
        let g = Gateway::new(&provider, &p)
            .generate(&UserInput::text("pizza"))
            .unwrap();
        assert_eq!(g.attempts, 2);
    }

    #[test]
    fn missing_odorants_repaired_after_retries() {
        let p = palette();
        let partial = r#"{"scent_ratios": {"Onion": 0.6, "Thyme": 0.4}, "justification": "j"}"#;
        let provider = ScriptedProvider::new([partial; 3]);
        let g = Gateway::new(&provider, &p)
            .generate(&UserInput::text("soup"))
            .unwrap();
        assert_eq!(g.attempts, 3);
        assert!(g.result.repaired);
        assert_eq!(g.result.ratios.get("Onion"), Some(Hundredths(60)));
    }

    #[test]
    fn transport_failure_surfaces() {
        let p = palette();
        let provider =
            ScriptedProvider::from_results([Err(ProviderError::Transport("refused".into()))]);
        let err = Gateway::new(&provider, &p)
            .generate(&UserInput::text("pizza"))
            .unwrap_err();
        assert_eq!(err.code(), "provider_failure");
    }

    #[test]
    fn empty_feedback_rejected_before_provider_call() {
        let p = palette();
        let provider = ScriptedProvider::new([four()]);
        let current = RatioVector::from_hundredths(&p, [("Onion", 100)]).unwrap();
        let err = Gateway::new(&provider, &p)
            .refine(&UserInput::text("pizza"), &current, &[], "   ")
            .unwrap_err();
        assert!(matches!(err, GatewayError::InvalidInput(_)));
        assert!(provider.calls().is_empty());
    }

    #[test]
    fn modalities_follow_present_fields() {
        let input = UserInput {
            image_description: Some("ramen".into()),
            transcript: Some("".into()),
            ..UserInput::default()
        };
        assert_eq!(input.modalities(), BTreeSet::from([Modality::Image]));
        assert!(UserInput::default().validate().is_err());
    }
}
