//! The multi-turn interaction loop between a policy and a search backend.

pub mod policy;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{uniform_frame_indices, SampleAnnotation};
use crate::retrieval::{ResultKind, SearchEngine, SearchResultSet};
use crate::trajectory::{
    parse_trajectory, serialize_trajectory, Mode, Notice, SearchCall, SearchTool, Terminal, Trajectory,
    TurnKind, TurnPayload,
};
pub use policy::{ExternalProcessPolicy, HttpPolicy, Policy, PolicyError, ScriptedPolicy};

pub const SYSTEM_PROMPT: &str = "\
You help locate a described object in a video and may look things up on the web first.
You receive an object description and several video frames; each frame comes after its index.
Locate the object with a bounding box and a point on the frame you select.

Tools, called one at a time as a JSON object inside <search></search>:
{\"name\": \"text_search\", \"query\": string} returns text passages from the web.
{\"name\": \"image_search\", \"query\": string} returns reference images from the web.
Results are returned inside <information></information>.

Every reply starts with <think>your reasoning</think> and then contains exactly one of:
<search>{\"name\": tool, \"query\": keywords}</search> when more knowledge is needed;
<keyframe>frame index</keyframe> to pick the frame where the object is clearest, which is then shown at high resolution;
<answer>{\"bbox_2d\": [x1, y1, x2, y2], \"point_2d\": [x, y]}</answer> once the high resolution frame is visible.
For a single image there is no keyframe step; answer on the image directly.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_search_turns: usize,
    pub topk_text: usize,
    pub topk_image: usize,
    /// Frames sampled uniformly from the video and shown to the policy.
    pub frame_count: usize,
    pub lowres_edge: u32,
    pub highres_edge: u32,
    pub max_generated_tokens: usize,
    /// Total budget for retrieved text across the episode.
    pub max_feedback_tokens: usize,
    /// Refused searches tolerated before the episode is cut off.
    pub max_refused_searches: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_search_turns: 5,
            topk_text: 3,
            topk_image: 1,
            frame_count: 6,
            lowres_edge: 448,
            highres_edge: 864,
            max_generated_tokens: 4096,
            max_feedback_tokens: 2048,
            max_refused_searches: 5,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        for (name, v) in [
            ("max_search_turns", self.max_search_turns),
            ("topk_text", self.topk_text),
            ("topk_image", self.topk_image),
            ("frame_count", self.frame_count),
            ("lowres_edge", self.lowres_edge as usize),
            ("highres_edge", self.highres_edge as usize),
            ("max_generated_tokens", self.max_generated_tokens),
            ("max_feedback_tokens", self.max_feedback_tokens),
        ] {
            if v == 0 {
                return Err(EpisodeError::Config(name));
            }
        }
        Ok(())
    }

    fn topk(&self, tool: SearchTool) -> usize {
        match tool {
            SearchTool::TextSearch => self.topk_text,
            SearchTool::ImageSearch => self.topk_image,
        }
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("sample `{0}` has no frames")]
    NoFrames(String),
    #[error("episode config field `{0}` must be positive")]
    Config(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Counts tokens for budget enforcement.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
    /// Longest prefix of `text` holding at most `max` tokens.
    fn truncate<'a>(&self, text: &'a str, max: usize) -> &'a str;
}

/// One token per whitespace-delimited word.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn truncate<'a>(&self, text: &'a str, max: usize) -> &'a str {
        if max == 0 {
            return "";
        }
        let mut seen = 0;
        let mut in_word = false;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if in_word {
                    seen += 1;
                    if seen == max {
                        return &text[..i];
                    }
                }
                in_word = false;
            } else {
                in_word = true;
            }
        }
        text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub index: usize,
    pub path: PathBuf,
    /// Square edge the frame is resized to.
    pub edge: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ContextEntry {
    System { text: String },
    User { query: String, frames: Vec<FrameRef> },
    Assistant { text: String },
    Information { text: String },
    Keyframe { frame: FrameRef },
}

/// Everything the policy has seen so far. Entries are only ever appended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationContext {
    pub mode: Mode,
    pub entries: Vec<ContextEntry>,
}

impl ConversationContext {
    fn push(&mut self, entry: ContextEntry) {
        self.entries.push(entry);
    }
}

pub fn build_context(ann: &SampleAnnotation, cfg: &EpisodeConfig) -> Result<ConversationContext, EpisodeError> {
    if ann.frames.is_empty() {
        return Err(EpisodeError::NoFrames(ann.id.clone()));
    }
    let frames = uniform_frame_indices(ann.frames.len(), cfg.frame_count)
        .into_iter()
        .enumerate()
        .map(|(index, src)| FrameRef {
            index,
            path: ann.frames[src].lowres.clone(),
            edge: cfg.lowres_edge,
        })
        .collect();
    Ok(ConversationContext {
        mode: ann.mode,
        entries: vec![
            ContextEntry::System {
                text: SYSTEM_PROMPT.to_string(),
            },
            ContextEntry::User {
                query: ann.query.clone(),
                frames,
            },
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationReason {
    BudgetExhausted,
    TokenLimit,
    MalformedTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLogEntry {
    pub call: SearchCall,
    pub results: SearchResultSet,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub notice: Option<Notice>,
    /// False for searches refused because the budget was spent.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub id: String,
    pub trajectory: Trajectory,
    pub search_log: Vec<SearchLogEntry>,
    pub truncation_reason: Option<TruncationReason>,
    pub generated_tokens: usize,
    pub feedback_tokens: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    id: String,
    mode: Mode,
    terminal: Terminal,
    truncation_reason: Option<TruncationReason>,
    rollout: String,
    search_log: Vec<SearchLogEntry>,
    generated_tokens: usize,
    feedback_tokens: usize,
}

impl EpisodeRecord {
    /// Canonical rollout text when the trajectory is well formed, the raw
    /// text otherwise.
    pub fn rollout_text(&self) -> String {
        serialize_trajectory(&self.trajectory).unwrap_or_else(|_| self.trajectory.source_text.clone())
    }

    pub fn accepted_count(&self) -> usize {
        self.search_log.iter().filter(|e| e.accepted).count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(RecordFile {
            id: self.id.clone(),
            mode: self.trajectory.mode,
            terminal: self.trajectory.terminal,
            truncation_reason: self.truncation_reason,
            rollout: self.rollout_text(),
            search_log: self.search_log.clone(),
            generated_tokens: self.generated_tokens,
            feedback_tokens: self.feedback_tokens,
        })
        .expect("record serialization is infallible")
    }

    /// Inverse of [`EpisodeRecord::to_json`]; the trajectory is re-parsed
    /// from the rollout text.
    pub fn from_json(value: serde_json::Value) -> Result<Self, serde_json::Error> {
        let f: RecordFile = serde_json::from_value(value)?;
        Ok(EpisodeRecord {
            id: f.id,
            trajectory: parse_trajectory(&f.rollout, f.mode),
            search_log: f.search_log,
            truncation_reason: f.truncation_reason,
            generated_tokens: f.generated_tokens,
            feedback_tokens: f.feedback_tokens,
        })
    }
}

const TAG_LITERALS: [(&str, &str); 10] = [
    ("<think>", "[think]"),
    ("</think>", "[/think]"),
    ("<search>", "[search]"),
    ("</search>", "[/search]"),
    ("<information>", "[information]"),
    ("</information>", "[/information]"),
    ("<keyframe>", "[keyframe]"),
    ("</keyframe>", "[/keyframe]"),
    ("<answer>", "[answer]"),
    ("</answer>", "[/answer]"),
];

/// Neutralises tag literals so retrieved text cannot open or close turns.
pub fn sanitize(text: &str) -> String {
    let mut out = text.to_string();
    for (tag, replacement) in TAG_LITERALS {
        if out.contains(tag) {
            out = out.replace(tag, replacement);
        }
    }
    out
}

/// Text placed inside the information turn for a result set.
pub fn render_results(results: &SearchResultSet) -> String {
    if results.entries.is_empty() {
        return "no results".to_string();
    }
    let lines: Vec<String> = results
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let title = sanitize(e.title.trim());
            let content = sanitize(e.content.trim());
            match results.kind {
                ResultKind::Text => format!("Doc {} (Title: {}) {}", i + 1, title, content),
                ResultKind::Image => format!("{}. (Title: {}) [image: {}]", i + 1, title, content),
            }
        })
        .collect();
    lines.join("\n").trim().to_string()
}

struct Loop<'a> {
    cfg: &'a EpisodeConfig,
    tok: &'a dyn Tokenizer,
    text: String,
    ctx: ConversationContext,
    search_log: Vec<SearchLogEntry>,
    generated: usize,
    feedback: usize,
    refused: usize,
}

impl Loop<'_> {
    fn append(&mut self, piece: &str) {
        if !self.text.is_empty() {
            self.text.push('\n');
        }
        self.text.push_str(piece);
    }

    fn inform(&mut self, body: &str) {
        self.append(&format!("{}{}{}", TurnKind::Information.open_tag(), body, TurnKind::Information.close_tag()));
        self.ctx.push(ContextEntry::Information { text: body.to_string() });
    }

    /// Handles an accepted-or-refused search; returns true to stop.
    fn search(&mut self, call: SearchCall, engine: &dyn SearchEngine) -> bool {
        let kind = match call.tool {
            SearchTool::TextSearch => ResultKind::Text,
            SearchTool::ImageSearch => ResultKind::Image,
        };
        let accepted_so_far = self.search_log.iter().filter(|e| e.accepted).count();
        if accepted_so_far >= self.cfg.max_search_turns {
            self.inform(&Notice::BudgetExhausted.to_string());
            self.search_log.push(SearchLogEntry {
                call,
                results: SearchResultSet::empty(kind),
                notice: Some(Notice::BudgetExhausted),
                accepted: false,
            });
            self.refused += 1;
            return self.refused > self.cfg.max_refused_searches;
        }
        match engine.search(&call, self.cfg.topk(call.tool)) {
            Ok(results) => {
                let rendered = render_results(&results);
                let remaining = self.cfg.max_feedback_tokens.saturating_sub(self.feedback);
                let body = self.tok.truncate(&rendered, remaining).trim_end().to_string();
                self.feedback += self.tok.count(&body);
                self.inform(&body);
                self.search_log.push(SearchLogEntry {
                    call,
                    results,
                    notice: None,
                    accepted: true,
                });
            }
            Err(e) => {
                let notice = Notice::BackendError(sanitize(&e.to_string()).replace('\n', " "));
                self.inform(&notice.to_string());
                self.search_log.push(SearchLogEntry {
                    call,
                    results: SearchResultSet::empty(kind),
                    notice: Some(notice),
                    accepted: true,
                });
            }
        }
        false
    }
}

/// Runs one episode to completion.
///
/// Each policy reply may hold several turns (typically a think followed by an
/// action); the environment reacts to the last one. Replies that add no turn,
/// contain an information turn, break the rollout grammar or select an
/// out-of-range keyframe end the episode with [`TruncationReason::MalformedTurn`].
pub fn run_episode(
    ann: &SampleAnnotation,
    policy: &mut dyn Policy,
    engine: &dyn SearchEngine,
    cfg: &EpisodeConfig,
    tok: &dyn Tokenizer,
) -> Result<EpisodeRecord, EpisodeError> {
    cfg.validate()?;
    let ctx = build_context(ann, cfg)?;
    let sampled_frames = uniform_frame_indices(ann.frames.len(), cfg.frame_count);
    let mut state = Loop {
        cfg,
        tok,
        text: String::new(),
        ctx,
        search_log: Vec::new(),
        generated: 0,
        feedback: 0,
        refused: 0,
    };
    let mut known_turns = 0;
    let mut reason = None;

    while let Some(reply) = policy.next_turn(&state.ctx)? {
        let remaining = cfg.max_generated_tokens - state.generated;
        let tokens = tok.count(&reply);
        if tokens > remaining {
            let prefix = tok.truncate(&reply, remaining);
            if !prefix.trim().is_empty() {
                state.append(prefix);
                state.ctx.push(ContextEntry::Assistant { text: prefix.to_string() });
            }
            state.generated = cfg.max_generated_tokens;
            reason = Some(TruncationReason::TokenLimit);
            break;
        }
        state.generated += tokens;
        state.append(&reply);
        state.ctx.push(ContextEntry::Assistant { text: reply.clone() });

        let parsed = parse_trajectory(&state.text, ann.mode);
        let new_turns = &parsed.turns[known_turns.min(parsed.turns.len())..];
        if parsed.terminal == Terminal::Malformed
            || new_turns.is_empty()
            || new_turns.iter().any(|t| t.kind() == TurnKind::Information)
        {
            reason = Some(TruncationReason::MalformedTurn);
            break;
        }
        known_turns = parsed.turns.len();
        match new_turns.last().map(|t| t.payload.clone()) {
            Some(TurnPayload::Search(Ok(call))) => {
                if state.search(call, engine) {
                    reason = Some(TruncationReason::BudgetExhausted);
                    break;
                }
                known_turns += 1;
            }
            Some(TurnPayload::Search(Err(invalid))) => {
                state.inform(&Notice::InvalidCall(sanitize(&invalid.reason).replace('\n', " ")).to_string());
                known_turns += 1;
            }
            Some(TurnPayload::Keyframe(i)) => {
                let Some(&src) = sampled_frames.get(i) else {
                    reason = Some(TruncationReason::MalformedTurn);
                    break;
                };
                state.ctx.push(ContextEntry::Keyframe {
                    frame: FrameRef {
                        index: i,
                        path: ann.frames[src].highres.clone(),
                        edge: cfg.highres_edge,
                    },
                });
            }
            Some(TurnPayload::Answer(_)) => break,
            _ => {}
        }
    }

    Ok(EpisodeRecord {
        id: ann.id.clone(),
        trajectory: parse_trajectory(&state.text, ann.mode),
        search_log: state.search_log,
        truncation_reason: reason,
        generated_tokens: state.generated,
        feedback_tokens: state.feedback,
    })
}
