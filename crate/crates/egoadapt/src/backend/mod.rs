//! Model-backend contract: option-letter log-probabilities at the first
//! generation position plus short free generation.
//!
//! Two implementations ship with the crate: [`HttpBackend`], a networked
//! client speaking a completions-style JSON protocol, and [`MockBackend`], a
//! deterministic synthetic model used for tests and offline runs. A
//! [`fixture::FixtureServer`] serves canned protocol responses for offline
//! client testing.

mod http;
mod mock;

pub mod fixture;
pub mod protocol;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{MockBackend, MockConfig};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::prompting::PromptBundle;

/// Media descriptor sent to a backend: an opaque locator plus the sampled
/// frame timestamps. The harness never decodes pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct MediaInput {
    pub uri: String,
    /// Raw-coordinate timestamps, strictly increasing.
    pub timestamps: Vec<f64>,
}

/// One logical backend exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub system_text: String,
    pub user_text: String,
    pub media: Vec<MediaInput>,
    pub max_generation_tokens: usize,
    /// Idempotence and cache key; embeds `(question id, stage, run index)`.
    pub request_tag: String,
}

impl BackendRequest {
    /// Assemble a request from a prompt bundle, lifting the clip plan into
    /// media descriptors.
    pub fn from_bundle(bundle: &PromptBundle, max_generation_tokens: usize, tag: &str) -> Self {
        BackendRequest {
            system_text: bundle.system_text.clone(),
            user_text: bundle.user_text.clone(),
            media: bundle
                .clip
                .videos
                .iter()
                .map(|v| MediaInput {
                    uri: v.uri.clone(),
                    timestamps: v.timestamps.clone(),
                })
                .collect(),
            max_generation_tokens,
            request_tag: tag.to_string(),
        }
    }
}

/// Compose a request tag from its parts. The question id comes first so
/// tooling (and the mock) can recover it with [`tag_question_id`].
pub fn request_tag(question_id: &str, stage: &str, run: usize) -> String {
    format!("{question_id}::{stage}::{run}")
}

/// Question id embedded in a request tag.
pub fn tag_question_id(tag: &str) -> &str {
    tag.split("::").next().unwrap_or(tag)
}

/// Raw model log-probabilities per displayed letter label. Values are not
/// assumed normalized, only finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LetterDistribution {
    scores: BTreeMap<char, f64>,
    /// Labels that were absent from the backend's top-k and fell back to
    /// [`LetterDistribution::FLOOR`].
    pub floored: Vec<char>,
}

impl LetterDistribution {
    /// Log-probability assigned to labels missing from a backend's top-k.
    pub const FLOOR: f64 = -30.0;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: char, logprob: f64) {
        debug_assert!(logprob.is_finite());
        self.scores.insert(label, logprob);
    }

    pub fn insert_floored(&mut self, label: char) {
        self.scores.insert(label, Self::FLOOR);
        self.floored.push(label);
    }

    pub fn score(&self, label: char) -> Option<f64> {
        self.scores.get(&label).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    /// Label with the highest log-probability; ties go to the earlier letter.
    pub fn argmax(&self) -> Option<char> {
        self.scores
            .iter()
            .fold(None::<(char, f64)>, |best, (&l, &s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((l, s)),
            })
            .map(|(l, _)| l)
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, f64)> + '_ {
        self.scores.iter().map(|(&l, &s)| (l, s))
    }
}

/// One backend reply. `letters` is empty only for generation-only calls.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub letters: LetterDistribution,
    pub generated_text: String,
    pub latency_ms: u64,
    pub backend_id: String,
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Transient failure; the caller may retry.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    /// Permanent rejection; retrying cannot help.
    #[error("backend rejected request: {0}")]
    Rejected(String),
    /// The backend cannot expose letter log-probabilities at all.
    #[error("backend does not expose letter log-probabilities: {0}")]
    MissingLogprobs(String),
}

/// A model server capable of letter scoring and short free generation.
/// Implementations must be safe for concurrent calls.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    /// Score every displayed label at the first generation position and run
    /// a short free-generation pass. `letters` in the response covers every
    /// label in `labels`.
    fn score_and_generate(
        &self,
        req: &BackendRequest,
        labels: &[char],
    ) -> Result<BackendResponse, BackendError>;

    /// Free generation only; the letter distribution may be empty.
    fn generate_only(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_round_trip() {
        let tag = request_tag("q-17", "tta", 3);
        assert_eq!(tag, "q-17::tta::3");
        assert_eq!(tag_question_id(&tag), "q-17");
        assert_eq!(tag_question_id("bare"), "bare");
    }

    #[test]
    fn distribution_argmax_and_floor() {
        let mut d = LetterDistribution::new();
        d.insert('A', -2.0);
        d.insert('B', -0.5);
        d.insert_floored('C');
        assert_eq!(d.argmax(), Some('B'));
        assert_eq!(d.score('C'), Some(LetterDistribution::FLOOR));
        assert_eq!(d.floored, vec!['C']);
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn argmax_tie_prefers_earlier_letter() {
        let mut d = LetterDistribution::new();
        d.insert('B', -1.0);
        d.insert('A', -1.0);
        assert_eq!(d.argmax(), Some('A'));
    }
}
