//! Fixed-format multiple-choice prompt assembly: category system prompt,
//! rewritten question text, lettered options in displayed order, and the
//! terminal answer cue.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::benchmark::{option_letter, Category, Question};
use crate::permute::Permutation;
use crate::routing::{RouteConfig, RewrittenQuestion, RoutingTable, SampledClip};

/// The cue every option-scoring prompt ends with; the next token the backend
/// emits should be a bare option letter.
pub const ANSWER_CUE: &str = "Correct:";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read prompt library {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt library: {0}")]
    BadLibrary(String),
    #[error("prompt library has no entry for id {0:?}")]
    MissingPromptEntry(String),
    #[error("prompt id {0:?} has no verification text but the route enables verification")]
    MissingVerificationText(String),
    #[error("permutation covers {got} options, question has {want}")]
    PermutationSize { got: usize, want: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptEntry {
    system: String,
    #[serde(default)]
    verification: Option<String>,
}

/// Prompt texts keyed by prompt id. Ids are arbitrary strings; the built-in
/// library uses the category names.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    entries: BTreeMap<String, PromptEntry>,
}

/// Prompt library shipped with the crate.
pub const DEFAULT_PROMPTS_TOML: &str = include_str!("defaults/prompts.toml");

impl PromptLibrary {
    pub fn builtin() -> PromptLibrary {
        PromptLibrary::from_toml_str(DEFAULT_PROMPTS_TOML).expect("built-in prompt library is valid")
    }

    pub fn load(path: &Path) -> Result<PromptLibrary, PromptError> {
        let raw = fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        PromptLibrary::from_toml_str(&raw)
    }

    pub fn from_toml_str(raw: &str) -> Result<PromptLibrary, PromptError> {
        let entries: BTreeMap<String, PromptEntry> =
            toml::from_str(raw).map_err(|e| PromptError::BadLibrary(e.to_string()))?;
        Ok(PromptLibrary { entries })
    }

    /// Check that every id the routing table references resolves, including
    /// verification texts where the route enables them. Runs at startup so
    /// per-question lookups never fail.
    pub fn validate_against(&self, table: &RoutingTable) -> Result<(), PromptError> {
        for (category, cfg) in table.iter() {
            let entry = self
                .entries
                .get(&cfg.system_prompt_id)
                .ok_or_else(|| PromptError::MissingPromptEntry(cfg.system_prompt_id.clone()))?;
            let wants_verification = cfg.verification_enabled
                && matches!(category, Category::Nutrition | Category::ObjectMotion);
            if wants_verification && entry.verification.is_none() {
                return Err(PromptError::MissingVerificationText(
                    cfg.system_prompt_id.clone(),
                ));
            }
        }
        Ok(())
    }

    pub fn system_for_id(&self, id: &str) -> Result<&str, PromptError> {
        self.entries
            .get(id)
            .map(|e| e.system.as_str())
            .ok_or_else(|| PromptError::MissingPromptEntry(id.to_string()))
    }

    pub fn verification_for_id(&self, id: &str) -> Option<&str> {
        self.entries.get(id).and_then(|e| e.verification.as_deref())
    }
}

/// System prompt for a category under the conventional id scheme
/// (id == category name).
pub fn system_prompt_for(category: Category, library: &PromptLibrary) -> Result<&str, PromptError> {
    library.system_for_id(category.wire_name())
}

/// One fully assembled option-scoring prompt plus the bookkeeping needed to
/// map the backend's answer back to original option indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: String,
    /// Question text, lettered options, then the answer cue; ends exactly
    /// with [`ANSWER_CUE`].
    pub user_text: String,
    pub letter_labels: Vec<char>,
    pub permutation: Permutation,
    pub clip: SampledClip,
}

/// Render the fixed multiple-choice layout: rewritten question text, one
/// `X. <text>` line per displayed option, then the answer cue.
pub fn build_prompt(
    question: &Question,
    rewritten: &RewrittenQuestion,
    clip: &SampledClip,
    system_text: &str,
    perm: &Permutation,
) -> Result<PromptBundle, PromptError> {
    let n = question.options.len();
    if perm.len() != n {
        return Err(PromptError::PermutationSize {
            got: perm.len(),
            want: n,
        });
    }
    let letter_labels: Vec<char> = (0..n).map(option_letter).collect();
    let mut user_text = String::with_capacity(rewritten.text.len() + 32 * n);
    user_text.push_str(&rewritten.text);
    user_text.push_str("\n\n");
    for slot in 0..n {
        let original = perm.original_of(slot);
        user_text.push(letter_labels[slot]);
        user_text.push_str(". ");
        user_text.push_str(&rewritten.options[original]);
        user_text.push('\n');
    }
    user_text.push_str(ANSWER_CUE);
    Ok(PromptBundle {
        system_text: system_text.to_string(),
        user_text,
        letter_labels,
        permutation: perm.clone(),
        clip: clip.clone(),
    })
}

/// A free-form auxiliary prompt eliciting one intermediate fact; answered by
/// generation only, so it carries no options or cue.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationPrompt {
    pub system_text: String,
    pub user_text: String,
}

/// Verification prompt for the categories where a compact auxiliary question
/// summarizes the evidence; `None` everywhere else.
pub fn build_verification_prompt(
    question: &Question,
    cfg: &RouteConfig,
    library: &PromptLibrary,
) -> Option<VerificationPrompt> {
    if !cfg.verification_enabled {
        return None;
    }
    if !matches!(question.category, Category::Nutrition | Category::ObjectMotion) {
        return None;
    }
    let verification = library.verification_for_id(&cfg.system_prompt_id)?;
    let system_text = library.system_for_id(&cfg.system_prompt_id).ok()?.to_string();
    Some(VerificationPrompt {
        system_text,
        user_text: verification.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{QuestionRecord, VideoRef};
    use crate::determinism::SplitMix64;
    use crate::routing::{plan_clip, rewrite_time_tags};

    fn question(n_options: usize, category: Category) -> Question {
        QuestionRecord {
            id: "p1".into(),
            category,
            subtype: String::new(),
            question: "Which step came first?".into(),
            videos: vec![VideoRef {
                key: "video 1".into(),
                uri: "mem://v".into(),
                input_start: 0.0,
                input_end: 60.0,
            }],
            options: (0..n_options).map(|i| format!("step {i}")).collect(),
            answer: Some(0),
        }
        .into_question()
        .unwrap()
    }

    fn bundle_for(q: &Question, perm: &Permutation) -> PromptBundle {
        let table = RoutingTable::builtin();
        let lib = PromptLibrary::builtin();
        let cfg = table.get(q.category);
        let clip = plan_clip(q, cfg).unwrap();
        let rewritten = rewrite_time_tags(q, &clip, cfg);
        let system = lib.system_for_id(&cfg.system_prompt_id).unwrap();
        build_prompt(q, &rewritten, &clip, system, perm).unwrap()
    }

    #[test]
    fn builtin_library_covers_builtin_routes() {
        let lib = PromptLibrary::builtin();
        lib.validate_against(&RoutingTable::builtin()).unwrap();
    }

    #[test]
    fn category_prompts_carry_their_emphases() {
        let lib = PromptLibrary::builtin();
        let recipe = system_prompt_for(Category::Recipe, &lib).unwrap();
        for needle in [
            "step localization",
            "step recognition",
            "multi-recipe tracking",
            "preparation-step identification",
        ] {
            assert!(recipe.contains(needle), "recipe prompt missing {needle:?}");
        }
        let nutrition = system_prompt_for(Category::Nutrition, &lib).unwrap();
        assert!(nutrition.contains("carb, fat, protein, and calorie contributions"));
        let gaze = system_prompt_for(Category::Gaze, &lib).unwrap();
        assert!(gaze.contains("current gaze estimation"));
        assert!(gaze.contains("future interaction anticipation"));
        let ingredient = system_prompt_for(Category::Ingredient, &lib).unwrap();
        assert!(ingredient.contains("addition order"));
        let motion = system_prompt_for(Category::ObjectMotion, &lib).unwrap();
        assert!(motion.contains("movement itineraries"));
    }

    #[test]
    fn missing_entry_is_a_load_time_error() {
        let lib = PromptLibrary::from_toml_str("[recipe]\nsystem = \"only recipe\"\n").unwrap();
        let err = lib.validate_against(&RoutingTable::builtin()).unwrap_err();
        assert!(matches!(err, PromptError::MissingPromptEntry(_)));
    }

    #[test]
    fn identity_permutation_keeps_dataset_order() {
        let q = question(3, Category::Recipe);
        let bundle = bundle_for(&q, &Permutation::identity(3));
        assert!(bundle.user_text.contains("A. step 0\n"));
        assert!(bundle.user_text.contains("B. step 1\n"));
        assert!(bundle.user_text.contains("C. step 2\n"));
        assert!(bundle.user_text.ends_with(ANSWER_CUE));
        assert_eq!(bundle.letter_labels, vec!['A', 'B', 'C']);
    }

    #[test]
    fn swapped_permutation_moves_option_under_label_a() {
        let q = question(3, Category::Recipe);
        let perm = Permutation::from_forward(vec![2, 1, 0]).unwrap();
        let bundle = bundle_for(&q, &perm);
        assert!(bundle.user_text.contains("A. step 2\n"));
        assert!(bundle.user_text.contains("C. step 0\n"));
    }

    #[test]
    fn twenty_six_options_fill_the_alphabet() {
        let q = question(26, Category::Ingredient);
        let bundle = bundle_for(&q, &Permutation::identity(26));
        assert_eq!(bundle.letter_labels.len(), 26);
        assert_eq!(*bundle.letter_labels.last().unwrap(), 'Z');
        assert!(bundle.user_text.contains("Z. step 25\n"));
    }

    #[test]
    fn cue_appears_exactly_once_at_the_end() {
        let q = question(4, Category::Gaze);
        let bundle = bundle_for(&q, &Permutation::identity(4));
        assert_eq!(bundle.user_text.matches(ANSWER_CUE).count(), 1);
        assert!(bundle.user_text.ends_with(ANSWER_CUE));
    }

    #[test]
    fn prompts_are_deterministic() {
        let q = question(5, Category::Nutrition);
        let mut rng = SplitMix64::new(1);
        let perm = Permutation::shuffled(5, &mut rng);
        let a = bundle_for(&q, &perm);
        let b = bundle_for(&q, &perm);
        assert_eq!(a, b);
    }

    #[test]
    fn verification_prompt_only_for_supported_categories() {
        let table = RoutingTable::builtin();
        let lib = PromptLibrary::builtin();

        let nutrition = question(3, Category::Nutrition);
        let vp = build_verification_prompt(&nutrition, table.get(Category::Nutrition), &lib)
            .expect("nutrition verification");
        assert!(vp.user_text.to_lowercase().contains("which ingredient was added"));

        let motion = question(3, Category::ObjectMotion);
        let vp = build_verification_prompt(&motion, table.get(Category::ObjectMotion), &lib)
            .expect("object motion verification");
        assert!(vp.user_text.to_lowercase().contains("resting location"));

        let recipe = question(3, Category::Recipe);
        assert!(build_verification_prompt(&recipe, table.get(Category::Recipe), &lib).is_none());
    }

    #[test]
    fn verification_respects_route_switch() {
        let lib = PromptLibrary::builtin();
        let mut cfg = RoutingTable::builtin().get(Category::Nutrition).clone();
        cfg.verification_enabled = false;
        let q = question(3, Category::Nutrition);
        assert!(build_verification_prompt(&q, &cfg, &lib).is_none());
    }
}
