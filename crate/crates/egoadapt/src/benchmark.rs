//! Benchmark data model: questions, categories, video references, and the
//! inline `<TIME>` tag markup, plus dataset loading and validation.
//!
//! Dataset files are UTF-8 JSON lines, one question per line:
//!
//! ```json
//! {"id":"q1","category":"recipe","subtype":"step localization",
//!  "question":"What happened <TIME video=\"video 1\" start=\"480\" end=\"481\">?",
//!  "videos":[{"key":"video 1","uri":"v1.mp4","input_start":0.0,"input_end":600.0}],
//!  "options":["stirred the pot","added salt"],
//!  "answer":1}
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The seven question macro-categories. Every question carries exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "recipe")]
    Recipe,
    #[serde(rename = "ingredient")]
    Ingredient,
    #[serde(rename = "nutrition")]
    Nutrition,
    #[serde(rename = "fine_grained_action")]
    FineGrainedAction,
    #[serde(rename = "3d_perception")]
    Perception3D,
    #[serde(rename = "object_motion")]
    ObjectMotion,
    #[serde(rename = "gaze")]
    Gaze,
}

impl Category {
    /// All categories in canonical reporting order.
    pub const ALL: [Category; 7] = [
        Category::Recipe,
        Category::Ingredient,
        Category::Nutrition,
        Category::FineGrainedAction,
        Category::Perception3D,
        Category::ObjectMotion,
        Category::Gaze,
    ];

    /// The snake-case name used in dataset files and config sections.
    pub fn wire_name(self) -> &'static str {
        match self {
            Category::Recipe => "recipe",
            Category::Ingredient => "ingredient",
            Category::Nutrition => "nutrition",
            Category::FineGrainedAction => "fine_grained_action",
            Category::Perception3D => "3d_perception",
            Category::ObjectMotion => "object_motion",
            Category::Gaze => "gaze",
        }
    }

    pub fn from_wire_name(name: &str) -> Option<Category> {
        Category::ALL.iter().copied().find(|c| c.wire_name() == name)
    }

    /// Human-readable column heading.
    pub fn display_name(self) -> &'static str {
        match self {
            Category::Recipe => "Recipe",
            Category::Ingredient => "Ingredient",
            Category::Nutrition => "Nutrition",
            Category::FineGrainedAction => "Fine-grained",
            Category::Perception3D => "3D Perception",
            Category::ObjectMotion => "Object Motion",
            Category::Gaze => "Gaze",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

/// One input video of a question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRef {
    /// Input key referenced by `<TIME>` tags, e.g. `"video 1"`.
    pub key: String,
    /// Opaque media locator; never dereferenced by the harness.
    pub uri: String,
    /// Start of the usable span, seconds.
    pub input_start: f64,
    /// End of the usable span, seconds; must exceed `input_start`.
    pub input_end: f64,
}

impl VideoRef {
    pub fn duration(&self) -> f64 {
        self.input_end - self.input_start
    }
}

/// A parsed `<TIME>` tag: a timestamp or interval in one input video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTag {
    /// Key of the referenced video.
    pub video_key: String,
    /// Tag start time, seconds, in raw video coordinates.
    pub start: f64,
    /// Tag end time; absent for single timestamps.
    pub end: Option<f64>,
    /// Byte range of the tag markup within its host text.
    pub span: (usize, usize),
}

/// One answer option. `text` keeps the raw markup; `time_tags` are parsed
/// from it with spans into `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub index: usize,
    pub text: String,
    pub time_tags: Vec<TimeTag>,
}

/// One benchmark instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub category: Category,
    /// Free-form sub-question type; carried opaquely, never branched on.
    pub subtype: String,
    /// Question text with raw `<TIME>` markup.
    pub text: String,
    /// Tags parsed from `text`.
    pub text_tags: Vec<TimeTag>,
    pub videos: Vec<VideoRef>,
    pub options: Vec<AnswerOption>,
    /// 0-based correct option, when the split carries labels.
    pub ground_truth: Option<usize>,
}

impl Question {
    pub fn video(&self, key: &str) -> Option<&VideoRef> {
        self.videos.iter().find(|v| v.key == key)
    }
}

/// Letter label for a displayed slot: 0 -> 'A', 25 -> 'Z'.
pub fn option_letter(index: usize) -> char {
    debug_assert!(index < 26);
    (b'A' + index as u8) as char
}

/// Inverse of [`option_letter`]; accepts either case.
pub fn letter_index(letter: char) -> Option<usize> {
    let up = letter.to_ascii_uppercase();
    up.is_ascii_uppercase().then(|| (up as u8 - b'A') as usize)
}

#[derive(Debug, Error)]
pub enum TagError {
    #[error("malformed TIME tag at byte {position}: {detail}")]
    MalformedTag { position: usize, detail: String },
    #[error("TIME tag at byte {position} references unknown video key {key:?}")]
    UnresolvedVideoKey { position: usize, key: String },
}

/// Result of scanning one host text for `<TIME>` tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTags {
    /// Tags in textual order; spans cover exactly the tag occurrences.
    pub tags: Vec<TimeTag>,
    /// Complementary byte ranges holding untagged text (possibly empty ranges
    /// are omitted).
    pub clean_spans: Vec<(usize, usize)>,
}

fn tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^<TIME\s+video="([^"<>]*)"\s+start="([^"<>]*)"(?:\s+end="([^"<>]*)")?\s*>"#)
            .expect("tag grammar regex")
    })
}

/// Scan `text` for `<TIME video="KEY" start="S" end="E">` tags (`end`
/// optional, seconds as decimal numbers) and resolve keys against `videos`.
pub fn parse_time_tags(text: &str, videos: &[VideoRef]) -> Result<ParsedTags, TagError> {
    let mut tags = Vec::new();
    let mut clean_spans = Vec::new();
    let mut cursor = 0usize;
    let mut search_from = 0usize;

    while let Some(found) = text[search_from..].find("<TIME") {
        let pos = search_from + found;
        let m = tag_regex()
            .captures(&text[pos..])
            .ok_or_else(|| TagError::MalformedTag {
                position: pos,
                detail: "does not match <TIME video=\"KEY\" start=\"S\" [end=\"E\"]>".into(),
            })?;

        let key = m.get(1).unwrap().as_str().to_string();
        let parse_secs = |s: &str| -> Result<f64, TagError> {
            s.trim().parse::<f64>().map_err(|_| TagError::MalformedTag {
                position: pos,
                detail: format!("invalid seconds value {s:?}"),
            })
        };
        let start = parse_secs(m.get(2).unwrap().as_str())?;
        let end = m.get(3).map(|g| parse_secs(g.as_str())).transpose()?;

        if !videos.iter().any(|v| v.key == key) {
            return Err(TagError::UnresolvedVideoKey { position: pos, key });
        }

        let span = (pos, pos + m.get(0).unwrap().end());
        if span.0 > cursor {
            clean_spans.push((cursor, span.0));
        }
        cursor = span.1;
        tags.push(TimeTag {
            video_key: key,
            start,
            end,
            span,
        });
        search_from = span.1;
    }
    if cursor < text.len() {
        clean_spans.push((cursor, text.len()));
    }
    Ok(ParsedTags { tags, clean_spans })
}

/// Wire-format record for one dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub category: Category,
    #[serde(default)]
    pub subtype: String,
    pub question: String,
    pub videos: Vec<VideoRef>,
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<usize>,
}

impl QuestionRecord {
    /// Parse all tags and build the in-memory question. Fails on tag errors;
    /// remaining invariants are checked by [`validate_question`].
    pub fn into_question(self) -> Result<Question, String> {
        let text_tags = parse_time_tags(&self.question, &self.videos)
            .map_err(|e| format!("question text: {e}"))?
            .tags;
        let mut options = Vec::with_capacity(self.options.len());
        for (index, text) in self.options.into_iter().enumerate() {
            let time_tags = parse_time_tags(&text, &self.videos)
                .map_err(|e| format!("option {index}: {e}"))?
                .tags;
            options.push(AnswerOption {
                index,
                text,
                time_tags,
            });
        }
        Ok(Question {
            id: self.id,
            category: self.category,
            subtype: self.subtype,
            text: self.question,
            text_tags,
            videos: self.videos,
            options,
            ground_truth: self.answer,
        })
    }

    pub fn from_question(q: &Question) -> QuestionRecord {
        QuestionRecord {
            id: q.id.clone(),
            category: q.category,
            subtype: q.subtype.clone(),
            question: q.text.clone(),
            videos: q.videos.clone(),
            options: q.options.iter().map(|o| o.text.clone()).collect(),
            answer: q.ground_truth,
        }
    }
}

/// Violations found in one record; empty `violations` never appears in a
/// load report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedRecord {
    pub id: String,
    pub violations: Vec<String>,
}

/// Outcome of a permissive dataset load: valid questions in file order plus
/// per-record issues.
#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub questions: Vec<Question>,
    pub issues: Vec<MalformedRecord>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record {id}: {detail}")]
    Malformed { id: String, detail: String },
}

/// Load a JSON-lines dataset. With `strict`, the first malformed record is
/// fatal; otherwise issues are aggregated and valid questions returned in
/// file order.
pub fn load_dataset(path: &Path, strict: bool) -> Result<LoadOutcome, DatasetError> {
    let raw = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_dataset_str(&raw, strict)
}

/// [`load_dataset`] over in-memory text; used by tests and fixtures.
pub fn load_dataset_str(raw: &str, strict: bool) -> Result<LoadOutcome, DatasetError> {
    let mut out = LoadOutcome::default();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let issue_id;
        let violations: Vec<String> = match serde_json::from_str::<QuestionRecord>(line) {
            Err(e) => {
                issue_id = format!("<line {}>", lineno + 1);
                vec![format!("invalid JSON record: {e}")]
            }
            Ok(rec) => {
                issue_id = rec.id.clone();
                match rec.into_question() {
                    Err(reason) => vec![reason],
                    Ok(q) => {
                        let mut v = validate_question(&q).violations;
                        if !seen_ids.insert(q.id.clone()) {
                            v.push("duplicate question id".to_string());
                        }
                        if v.is_empty() {
                            out.questions.push(q);
                        }
                        v
                    }
                }
            }
        };
        if !violations.is_empty() {
            if strict {
                return Err(DatasetError::Malformed {
                    id: issue_id,
                    detail: violations.join("; "),
                });
            }
            out.issues.push(MalformedRecord {
                id: issue_id,
                violations,
            });
        }
    }
    Ok(out)
}

/// Serialize questions back to the JSON-lines wire format.
pub fn serialize_dataset(questions: &[Question]) -> String {
    let mut buf = String::new();
    for q in questions {
        let rec = QuestionRecord::from_question(q);
        buf.push_str(&serde_json::to_string(&rec).expect("question record serializes"));
        buf.push('\n');
    }
    buf
}

/// Per-question validation report; empty iff the question is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every structural invariant of a question and list each violation.
pub fn validate_question(q: &Question) -> ValidationReport {
    let mut v = Vec::new();

    if q.id.trim().is_empty() {
        v.push("empty question id".to_string());
    }
    if q.videos.is_empty() {
        v.push("question has no input videos".to_string());
    }
    if q.videos.len() > 2 {
        v.push(format!(
            "question has {} input videos; at most two are supported",
            q.videos.len()
        ));
    }
    let mut keys = BTreeSet::new();
    for video in &q.videos {
        if !keys.insert(video.key.as_str()) {
            v.push(format!("duplicate video key {:?}", video.key));
        }
        if video.input_start < 0.0 {
            v.push(format!(
                "video {:?}: input_start {} is negative",
                video.key, video.input_start
            ));
        }
        if !(video.input_end > video.input_start) {
            v.push(format!(
                "video {:?}: input span [{}, {}] is empty or reversed",
                video.key, video.input_start, video.input_end
            ));
        }
    }

    if q.options.len() < 2 {
        v.push("fewer than two answer options".to_string());
    }
    if q.options.len() > 26 {
        v.push("option count exceeds letter alphabet".to_string());
    }
    for (pos, opt) in q.options.iter().enumerate() {
        if opt.index != pos {
            v.push(format!(
                "option at position {pos} carries index {} (indices must be 0..n-1 with no gaps)",
                opt.index
            ));
        }
        if opt.index >= 26 {
            v.push(format!("option index {} beyond letter labels A-Z", opt.index));
        }
        let stripped = strip_tag_markup(&opt.text, &opt.time_tags);
        if stripped.split_whitespace().next().is_none() && opt.time_tags.is_empty() {
            v.push(format!("option {pos} is empty after whitespace normalization"));
        }
    }

    match q.ground_truth {
        Some(gt) if gt >= q.options.len() => {
            v.push(format!(
                "ground truth {gt} out of range for {} options",
                q.options.len()
            ));
        }
        _ => {}
    }

    let mut check_tags = |host: &str, tags: &[TimeTag]| {
        for tag in tags {
            if q.video(&tag.video_key).is_none() {
                v.push(format!(
                    "{host}: tag references unknown video key {:?}",
                    tag.video_key
                ));
            }
            if let Some(end) = tag.end {
                if end < tag.start {
                    v.push(format!(
                        "{host}: tag interval [{}, {end}] is reversed",
                        tag.start
                    ));
                }
            }
        }
    };
    check_tags("question text", &q.text_tags);
    for opt in &q.options {
        check_tags(&format!("option {}", opt.index), &opt.time_tags);
    }

    ValidationReport { violations: v }
}

/// Host text with tag markup spans removed; used for emptiness checks.
fn strip_tag_markup(text: &str, tags: &[TimeTag]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for tag in tags {
        out.push_str(&text[cursor..tag.span.0]);
        cursor = tag.span.1;
    }
    out.push_str(&text[cursor..]);
    out
}

/// Validate an entire dataset file permissively and return one entry per
/// record with violations (the validation-report wire format).
pub fn validate_dataset(path: &Path) -> Result<Vec<MalformedRecord>, DatasetError> {
    Ok(load_dataset(path, false)?.issues)
}
