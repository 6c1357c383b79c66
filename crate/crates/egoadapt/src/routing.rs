//! Category-conditioned inference routing and all temporal math: frame
//! timestamp sampling, budget allocation across videos, time-tag remapping,
//! and tag rewriting into human-readable clip times.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{Category, Question, TimeTag, VideoRef};

/// Serde adapter for thresholds that may legitimately be infinite.
/// JSON has no literal for infinity, so non-finite values travel as strings.
pub mod infinite_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            ser.serialize_f64(*value)
        } else if *value > 0.0 {
            ser.serialize_str("inf")
        } else {
            ser.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(x) => Ok(x),
            Raw::Text(s) => match s.trim() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => other.parse().map_err(serde::de::Error::custom),
            },
        }
    }
}

/// How the observation window is derived from a video's input span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPolicy {
    /// Observe the full `[input_start, input_end]` span.
    FullSpan,
    /// Observe only the final given seconds of the span (clamped to it).
    TailWindow(f64),
}

/// Per-category inference policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteConfig {
    pub category: Category,
    /// Key into the prompt library.
    pub system_prompt_id: String,
    /// Maximum frames sampled for one question, summed across videos.
    pub frame_budget: usize,
    /// Upper bound on sampling density, frames per second of raw video.
    pub sampling_fps: f64,
    pub window_policy: WindowPolicy,
    /// Scale factor from raw seconds to remapped clip seconds.
    pub temporal_divisor: f64,
    /// Margin below which consistency adaptation triggers; may be infinite.
    #[serde(with = "infinite_float")]
    pub tta_margin_threshold: f64,
    pub verification_enabled: bool,
    /// Additive bonus for the option agreeing with free generation.
    pub agreement_bonus: f64,
}

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("invalid sampling span: end {end} precedes start {start}")]
    InvalidSpan { start: f64, end: f64 },
    #[error("frame count must be at least 1")]
    InvalidFrameCount,
    #[error("cannot read routing table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("routing table: {0}")]
    BadTable(String),
}

/// Total map from category to route. Lookup never fails once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    routes: BTreeMap<Category, RouteConfig>,
}

/// Partial per-section fields; anything absent inherits from `[default]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteSection {
    system_prompt_id: Option<String>,
    frame_budget: Option<usize>,
    sampling_fps: Option<f64>,
    window_policy: Option<WindowPolicy>,
    temporal_divisor: Option<f64>,
    tta_margin_threshold: Option<f64>,
    verification_enabled: Option<bool>,
    agreement_bonus: Option<f64>,
}

impl RouteSection {
    fn overlay(&self, base: &RouteSection) -> RouteSection {
        RouteSection {
            system_prompt_id: self.system_prompt_id.clone().or_else(|| base.system_prompt_id.clone()),
            frame_budget: self.frame_budget.or(base.frame_budget),
            sampling_fps: self.sampling_fps.or(base.sampling_fps),
            window_policy: self.window_policy.or(base.window_policy),
            temporal_divisor: self.temporal_divisor.or(base.temporal_divisor),
            tta_margin_threshold: self.tta_margin_threshold.or(base.tta_margin_threshold),
            verification_enabled: self.verification_enabled.or(base.verification_enabled),
            agreement_bonus: self.agreement_bonus.or(base.agreement_bonus),
        }
    }
}

/// Routing table shipped with the crate; every value can be overridden by a
/// user-supplied table file.
pub const DEFAULT_ROUTES_TOML: &str = include_str!("defaults/routes.toml");

impl RoutingTable {
    /// The built-in default table.
    pub fn builtin() -> RoutingTable {
        RoutingTable::from_toml_str(DEFAULT_ROUTES_TOML).expect("built-in routing table is valid")
    }

    pub fn load(path: &Path) -> Result<RoutingTable, RoutingError> {
        let raw = fs::read_to_string(path).map_err(|source| RoutingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RoutingTable::from_toml_str(&raw)
    }

    pub fn from_toml_str(raw: &str) -> Result<RoutingTable, RoutingError> {
        let sections: BTreeMap<String, RouteSection> =
            toml::from_str(raw).map_err(|e| RoutingError::BadTable(e.to_string()))?;
        for name in sections.keys() {
            if name != "default" && Category::from_wire_name(name).is_none() {
                return Err(RoutingError::BadTable(format!("unknown section {name:?}")));
            }
        }
        let default = sections.get("default").cloned();
        let mut routes = BTreeMap::new();
        for category in Category::ALL {
            let section = sections.get(category.wire_name());
            let merged = match (section, &default) {
                (Some(s), Some(d)) => s.overlay(d),
                (Some(s), None) => s.clone(),
                (None, Some(d)) => d.clone(),
                (None, None) => {
                    return Err(RoutingError::BadTable(format!(
                        "no section for category {:?} and no [default] section",
                        category.wire_name()
                    )))
                }
            };
            routes.insert(category, Self::finish(category, merged)?);
        }
        Ok(RoutingTable { routes })
    }

    fn finish(category: Category, s: RouteSection) -> Result<RouteConfig, RoutingError> {
        let field = |name: &str| {
            RoutingError::BadTable(format!(
                "category {:?}: field {name:?} missing from its section and [default]",
                category.wire_name()
            ))
        };
        let cfg = RouteConfig {
            category,
            system_prompt_id: s.system_prompt_id.ok_or_else(|| field("system_prompt_id"))?,
            frame_budget: s.frame_budget.ok_or_else(|| field("frame_budget"))?,
            sampling_fps: s.sampling_fps.ok_or_else(|| field("sampling_fps"))?,
            window_policy: s.window_policy.ok_or_else(|| field("window_policy"))?,
            temporal_divisor: s.temporal_divisor.ok_or_else(|| field("temporal_divisor"))?,
            tta_margin_threshold: s
                .tta_margin_threshold
                .ok_or_else(|| field("tta_margin_threshold"))?,
            verification_enabled: s
                .verification_enabled
                .ok_or_else(|| field("verification_enabled"))?,
            agreement_bonus: s.agreement_bonus.ok_or_else(|| field("agreement_bonus"))?,
        };
        let bad = |msg: String| Err(RoutingError::BadTable(msg));
        let name = category.wire_name();
        if cfg.frame_budget < 2 {
            return bad(format!("category {name:?}: frame_budget must be at least 2"));
        }
        if !(cfg.sampling_fps > 0.0) {
            return bad(format!("category {name:?}: sampling_fps must be positive"));
        }
        if !(cfg.temporal_divisor > 0.0) || !cfg.temporal_divisor.is_finite() {
            return bad(format!("category {name:?}: temporal_divisor must be positive and finite"));
        }
        if cfg.tta_margin_threshold < 0.0 || cfg.tta_margin_threshold.is_nan() {
            return bad(format!("category {name:?}: tta_margin_threshold must be >= 0"));
        }
        if cfg.agreement_bonus < 0.0 || !cfg.agreement_bonus.is_finite() {
            return bad(format!("category {name:?}: agreement_bonus must be finite and >= 0"));
        }
        if let WindowPolicy::TailWindow(w) = cfg.window_policy {
            if !(w > 0.0) {
                return bad(format!("category {name:?}: tail window must be positive"));
            }
        }
        Ok(cfg)
    }

    pub fn get(&self, category: Category) -> &RouteConfig {
        &self.routes[&category]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Category, &RouteConfig)> {
        self.routes.iter()
    }
}

/// Look up the route for a question. Total by construction of the table.
pub fn route<'t>(q: &Question, table: &'t RoutingTable) -> &'t RouteConfig {
    table.get(q.category)
}

/// Uniformly spaced timestamps over `[start, end]`.
///
/// For `n >= 2` the first and last values equal the bounds exactly. A single
/// frame lands on the window midpoint; a zero-length window collapses to one
/// timestamp.
pub fn sample_timestamps(start: f64, end: f64, n: usize) -> Result<Vec<f64>, RoutingError> {
    if end < start {
        return Err(RoutingError::InvalidSpan { start, end });
    }
    if n == 0 {
        return Err(RoutingError::InvalidFrameCount);
    }
    if end == start {
        return Ok(vec![start]);
    }
    if n == 1 {
        return Ok(vec![start + (end - start) / 2.0]);
    }
    let mut ts = Vec::with_capacity(n);
    let span = end - start;
    let denom = (n - 1) as f64;
    for j in 1..=n {
        let t = if j == 1 {
            start
        } else if j == n {
            end
        } else {
            start + (j - 1) as f64 / denom * span
        };
        if ts.last() != Some(&t) {
            ts.push(t);
        }
    }
    Ok(ts)
}

/// Sampling plan for one video: observation window, frame timestamps in raw
/// coordinates, and the concatenation offset in remapped coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub key: String,
    pub uri: String,
    pub window: (f64, f64),
    pub timestamps: Vec<f64>,
    pub offset: f64,
}

/// Full sampling plan for a question's videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledClip {
    pub videos: Vec<VideoClip>,
    pub total_remapped_duration: f64,
}

impl SampledClip {
    pub fn offset_for(&self, key: &str) -> Option<f64> {
        self.videos.iter().find(|v| v.key == key).map(|v| v.offset)
    }

    pub fn frame_count(&self) -> usize {
        self.videos.iter().map(|v| v.timestamps.len()).sum()
    }
}

/// Split `budget` across `weights` proportionally with largest-remainder
/// rounding; every entry receives at least one unit.
fn allocate_budget(budget: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    if total <= 0.0 {
        let mut alloc = vec![budget / n; n];
        for slot in alloc.iter_mut().take(budget % n) {
            *slot += 1;
        }
        return alloc;
    }
    let mut alloc: Vec<usize> = Vec::with_capacity(n);
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut assigned = 0usize;
    for (i, w) in weights.iter().enumerate() {
        let exact = budget as f64 * w / total;
        let floor = exact.floor() as usize;
        alloc.push(floor);
        assigned += floor;
        remainders.push((i, exact - floor as f64));
    }
    // Largest remainder first; ties resolved by lower index.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut leftover = budget.saturating_sub(assigned);
    for (i, _) in remainders {
        if leftover == 0 {
            break;
        }
        alloc[i] += 1;
        leftover -= 1;
    }
    // Minimum one frame per video, taken from the largest allocation.
    for i in 0..n {
        while alloc[i] == 0 {
            let donor = (0..n)
                .filter(|&j| alloc[j] > 1)
                .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
                .expect("budget of at least one per video");
            alloc[donor] -= 1;
            alloc[i] += 1;
        }
    }
    alloc
}

/// Build the sampling plan for a question under its route: clamp windows per
/// policy, split the frame budget proportionally to window length, sample
/// uniformly, and chain concatenation offsets.
pub fn plan_clip(q: &Question, cfg: &RouteConfig) -> Result<SampledClip, RoutingError> {
    let windows: Vec<(f64, f64)> = q
        .videos
        .iter()
        .map(|v| match cfg.window_policy {
            WindowPolicy::FullSpan => (v.input_start, v.input_end),
            WindowPolicy::TailWindow(w) => ((v.input_end - w).max(v.input_start), v.input_end),
        })
        .collect();
    let weights: Vec<f64> = windows.iter().map(|(a, b)| b - a).collect();
    let alloc = allocate_budget(cfg.frame_budget, &weights);

    let mut videos = Vec::with_capacity(q.videos.len());
    let mut offset = 0.0f64;
    for ((video, window), share) in q.videos.iter().zip(&windows).zip(&alloc) {
        let duration = window.1 - window.0;
        let fps_cap = ((duration * cfg.sampling_fps).floor() + 1.0).max(1.0);
        let n = if fps_cap >= *share as f64 {
            *share
        } else {
            fps_cap as usize
        };
        let timestamps = sample_timestamps(window.0, window.1, n.max(1))?;
        videos.push(VideoClip {
            key: video.key.clone(),
            uri: video.uri.clone(),
            window: *window,
            timestamps,
            offset,
        });
        offset += video.duration() / cfg.temporal_divisor;
    }
    Ok(SampledClip {
        videos,
        total_remapped_duration: offset,
    })
}

/// A remapped time value; `clamped` marks raw times that preceded the
/// video's input span and were clamped to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemappedTime {
    pub seconds: f64,
    pub clamped: bool,
}

/// Map a raw video timestamp into the concatenated clip's coordinates:
/// `(t_raw - input_start) / divisor + offset`.
pub fn remap_time(t_raw: f64, video: &VideoRef, divisor: f64, offset: f64) -> RemappedTime {
    debug_assert!(divisor > 0.0);
    let clamped = t_raw < video.input_start;
    let t = if clamped { video.input_start } else { t_raw };
    RemappedTime {
        seconds: (t - video.input_start) / divisor + offset,
        clamped,
    }
}

/// Clip time rendered as `HH:MM:SS.d`, fractional seconds truncated to one
/// decimal.
pub fn format_clip_time(seconds: f64) -> String {
    let tenths = (seconds.max(0.0) * 10.0).floor() as i64;
    let h = tenths / 36_000;
    let m = tenths / 600 % 60;
    let s = tenths / 10 % 60;
    let d = tenths % 10;
    format!("{h:02}:{m:02}:{s:02}.{d}")
}

/// Question and option texts after tag rewriting; pure text, no markup left.
#[derive(Debug, Clone, PartialEq)]
pub struct RewrittenQuestion {
    pub text: String,
    pub options: Vec<String>,
    pub warnings: Vec<String>,
}

fn rewrite_one(
    host_label: &str,
    text: &str,
    tags: &[TimeTag],
    q: &Question,
    clip: &SampledClip,
    divisor: f64,
    warnings: &mut Vec<String>,
) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0usize;
    for tag in tags {
        out.push_str(&text[cursor..tag.span.0]);
        let video = q.video(&tag.video_key).expect("validated tag key");
        let offset = clip.offset_for(&tag.video_key).expect("clip covers all videos");
        let start = remap_time(tag.start, video, divisor, offset);
        if start.clamped {
            warnings.push(format!(
                "{host_label}: tag time {} precedes input start of {:?}; clamped",
                tag.start, tag.video_key
            ));
        }
        match tag.end {
            None => out.push_str(&format!("at {}", format_clip_time(start.seconds))),
            Some(end_raw) => {
                let end = remap_time(end_raw, video, divisor, offset);
                if end.clamped {
                    warnings.push(format!(
                        "{host_label}: tag time {end_raw} precedes input start of {:?}; clamped",
                        tag.video_key
                    ));
                }
                out.push_str(&format!(
                    "from {} to {}",
                    format_clip_time(start.seconds),
                    format_clip_time(end.seconds)
                ));
            }
        }
        cursor = tag.span.1;
    }
    out.push_str(&text[cursor..]);
    out
}

/// Replace every `<TIME>` tag in the question and option texts with its
/// remapped, human-readable clip time. Non-tag text is left untouched.
pub fn rewrite_time_tags(q: &Question, clip: &SampledClip, cfg: &RouteConfig) -> RewrittenQuestion {
    let mut warnings = Vec::new();
    let text = rewrite_one(
        "question text",
        &q.text,
        &q.text_tags,
        q,
        clip,
        cfg.temporal_divisor,
        &mut warnings,
    );
    let options = q
        .options
        .iter()
        .map(|opt| {
            rewrite_one(
                &format!("option {}", opt.index),
                &opt.text,
                &opt.time_tags,
                q,
                clip,
                cfg.temporal_divisor,
                &mut warnings,
            )
        })
        .collect();
    RewrittenQuestion {
        text,
        options,
        warnings,
    }
}

impl fmt::Display for WindowPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowPolicy::FullSpan => write!(f, "full span"),
            WindowPolicy::TailWindow(w) => write!(f, "final {w} s"),
        }
    }
}
