//! Tag-delimited rollout language.
//!
//! A rollout is a sequence of tagged turns:
//!
//! ```text
//! <think>..</think> <search>{"name": .., "query": ..}</search> <information>..</information>
//! <keyframe>2</keyframe> <answer>{"bbox_2d": [..], "point_2d": [..]}</answer>
//! ```
//!
//! Parsing is total: structural problems are recorded on the returned
//! [`Trajectory`] instead of being reported as errors, because malformed
//! rollouts still have to be scored.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Whether the rollout answers on a selected video keyframe or directly on an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Video,
    Image,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "video" => Ok(Mode::Video),
            "image" => Ok(Mode::Image),
            other => Err(format!("unknown mode `{other}` (expected video or image)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Think,
    Search,
    Information,
    Keyframe,
    Answer,
}

impl TurnKind {
    pub const ALL: [TurnKind; 5] = [
        TurnKind::Think,
        TurnKind::Search,
        TurnKind::Information,
        TurnKind::Keyframe,
        TurnKind::Answer,
    ];

    pub fn open_tag(self) -> &'static str {
        match self {
            TurnKind::Think => "<think>",
            TurnKind::Search => "<search>",
            TurnKind::Information => "<information>",
            TurnKind::Keyframe => "<keyframe>",
            TurnKind::Answer => "<answer>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            TurnKind::Think => "</think>",
            TurnKind::Search => "</search>",
            TurnKind::Information => "</information>",
            TurnKind::Keyframe => "</keyframe>",
            TurnKind::Answer => "</answer>",
        }
    }
}

impl fmt::Display for TurnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TurnKind::Think => "think",
            TurnKind::Search => "search",
            TurnKind::Information => "information",
            TurnKind::Keyframe => "keyframe",
            TurnKind::Answer => "answer",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchTool {
    TextSearch,
    ImageSearch,
}

impl SearchTool {
    /// Canonical tool name as advertised in the system prompt.
    pub fn name(self) -> &'static str {
        match self {
            SearchTool::TextSearch => "text_search",
            SearchTool::ImageSearch => "image_search",
        }
    }

    /// Accepts the canonical names plus the `search_text` / `search_image` aliases.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "text_search" | "search_text" => Some(SearchTool::TextSearch),
            "image_search" | "search_image" => Some(SearchTool::ImageSearch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchCall {
    pub tool: SearchTool,
    pub query: String,
}

impl SearchCall {
    pub fn new(tool: SearchTool, query: impl Into<String>) -> Self {
        SearchCall {
            tool,
            query: query.into(),
        }
    }

    pub fn to_payload(&self) -> String {
        let query = serde_json::to_string(&self.query).expect("string serialization is infallible");
        format!("{{\"name\": \"{}\", \"query\": {}}}", self.tool.name(), query)
    }
}

/// Positional prompt emitted by the policy, in keyframe pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerPayload {
    /// `[x1, y1, x2, y2]`
    pub bbox: [f64; 4],
    /// `[x, y]`
    pub point: [f64; 2],
}

impl AnswerPayload {
    pub fn to_payload(&self) -> String {
        let b: Vec<String> = self.bbox.iter().map(|v| format_coord(*v)).collect();
        let p: Vec<String> = self.point.iter().map(|v| format_coord(*v)).collect();
        format!(
            "{{\"bbox_2d\": [{}], \"point_2d\": [{}]}}",
            b.join(", "),
            p.join(", ")
        )
    }
}

fn format_coord(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Messages the environment injects instead of search results.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "notice", content = "detail")]
pub enum Notice {
    BudgetExhausted,
    BackendError(String),
    InvalidCall(String),
}

const BUDGET_NOTICE: &str = "search budget exhausted";
const BACKEND_PREFIX: &str = "search backend error: ";
const INVALID_PREFIX: &str = "invalid search call: ";

impl Notice {
    fn from_text(text: &str) -> Option<Self> {
        if text == BUDGET_NOTICE {
            Some(Notice::BudgetExhausted)
        } else if let Some(detail) = text.strip_prefix(BACKEND_PREFIX) {
            Some(Notice::BackendError(detail.to_string()))
        } else {
            text.strip_prefix(INVALID_PREFIX)
                .map(|detail| Notice::InvalidCall(detail.to_string()))
        }
    }
}

impl fmt::Display for Notice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Notice::BudgetExhausted => f.write_str(BUDGET_NOTICE),
            Notice::BackendError(detail) => write!(f, "{BACKEND_PREFIX}{detail}"),
            Notice::InvalidCall(detail) => write!(f, "{INVALID_PREFIX}{detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Information {
    Results(String),
    Notice(Notice),
}

impl Information {
    fn from_text(text: &str) -> Self {
        match Notice::from_text(text) {
            Some(n) => Information::Notice(n),
            None => Information::Results(text.to_string()),
        }
    }

    pub fn text(&self) -> String {
        match self {
            Information::Results(t) => t.clone(),
            Information::Notice(n) => n.to_string(),
        }
    }
}

/// A `<search>` payload that did not parse as a tool call. Such a turn is an
/// invalid action but not a structural violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidSearch {
    pub raw: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TurnPayload {
    Think(String),
    Search(Result<SearchCall, InvalidSearch>),
    Information(Information),
    Keyframe(usize),
    Answer(AnswerPayload),
}

impl TurnPayload {
    pub fn kind(&self) -> TurnKind {
        match self {
            TurnPayload::Think(_) => TurnKind::Think,
            TurnPayload::Search(_) => TurnKind::Search,
            TurnPayload::Information(_) => TurnKind::Information,
            TurnPayload::Keyframe(_) => TurnKind::Keyframe,
            TurnPayload::Answer(_) => TurnKind::Answer,
        }
    }

    fn body(&self) -> String {
        match self {
            TurnPayload::Think(t) => t.clone(),
            TurnPayload::Search(Ok(call)) => call.to_payload(),
            TurnPayload::Search(Err(invalid)) => invalid.raw.clone(),
            TurnPayload::Information(info) => info.text(),
            TurnPayload::Keyframe(i) => i.to_string(),
            TurnPayload::Answer(a) => a.to_payload(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub payload: TurnPayload,
    /// Byte range of the whole tag pair in the source text.
    pub span: Range<usize>,
}

impl Turn {
    pub fn new(payload: TurnPayload) -> Self {
        Turn { payload, span: 0..0 }
    }

    pub fn kind(&self) -> TurnKind {
        self.payload.kind()
    }

    pub fn valid_search(&self) -> Option<&SearchCall> {
        match &self.payload {
            TurnPayload::Search(Ok(call)) => Some(call),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Answered,
    Truncated,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum ViolationKind {
    UnclosedTag(TurnKind),
    StrayClosingTag(TurnKind),
    StrayText,
    MissingInformation,
    UnexpectedInformation,
    InvalidKeyframe(String),
    InvalidAnswer(String),
    DuplicateKeyframe,
    DuplicateAnswer,
    KeyframeInImageMode,
    AnswerWithoutKeyframe,
    SearchAfterKeyframe,
    TurnAfterAnswer,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::UnclosedTag(k) => write!(f, "unclosed <{k}> tag"),
            ViolationKind::StrayClosingTag(k) => write!(f, "closing </{k}> without opening tag"),
            ViolationKind::StrayText => f.write_str("text outside of any tag"),
            ViolationKind::MissingInformation => {
                f.write_str("search call not followed by an information turn")
            }
            ViolationKind::UnexpectedInformation => {
                f.write_str("information turn without a preceding search")
            }
            ViolationKind::InvalidKeyframe(r) => write!(f, "invalid keyframe payload: {r}"),
            ViolationKind::InvalidAnswer(r) => write!(f, "invalid answer payload: {r}"),
            ViolationKind::DuplicateKeyframe => f.write_str("second keyframe turn"),
            ViolationKind::DuplicateAnswer => f.write_str("second answer turn"),
            ViolationKind::KeyframeInImageMode => f.write_str("keyframe turn in image mode"),
            ViolationKind::AnswerWithoutKeyframe => f.write_str("answer before any keyframe"),
            ViolationKind::SearchAfterKeyframe => f.write_str("search after keyframe selection"),
            ViolationKind::TurnAfterAnswer => f.write_str("turn after the answer"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: Mode,
    pub turns: Vec<Turn>,
    pub terminal: Terminal,
    /// First structural violation, present iff `terminal` is `Malformed`.
    pub violation: Option<Violation>,
    pub source_text: String,
}

impl Trajectory {
    /// Builds a trajectory from turns without parsing. The terminal status is
    /// `Answered` when an answer turn is present, `Truncated` otherwise.
    pub fn from_turns(turns: Vec<Turn>, mode: Mode) -> Self {
        let mut t = Trajectory {
            mode,
            turns,
            terminal: Terminal::Truncated,
            violation: None,
            source_text: String::new(),
        };
        if t.turns.iter().any(|turn| turn.kind() == TurnKind::Answer) {
            t.terminal = Terminal::Answered;
        }
        t
    }

    /// Turns before the first structural violation.
    pub fn valid_prefix(&self) -> &[Turn] {
        match &self.violation {
            None => &self.turns,
            Some(v) => {
                let end = self.turns.partition_point(|t| t.span.start < v.span.start);
                &self.turns[..end]
            }
        }
    }

    pub fn keyframe(&self) -> Option<usize> {
        self.valid_prefix().iter().find_map(|t| match t.payload {
            TurnPayload::Keyframe(i) => Some(i),
            _ => None,
        })
    }

    pub fn answer(&self) -> Option<&AnswerPayload> {
        self.valid_prefix().iter().find_map(|t| match &t.payload {
            TurnPayload::Answer(a) => Some(a),
            _ => None,
        })
    }

    /// Query of the first search turn, if that turn parsed as a tool call.
    /// `None` inside `Some` means the first search was malformed.
    pub fn first_search(&self) -> Option<Option<&SearchCall>> {
        self.turns
            .iter()
            .find(|t| t.kind() == TurnKind::Search)
            .map(|t| t.valid_search())
    }

    /// Searches that received results (or a backend error) rather than a
    /// refusal, in rollout order.
    pub fn accepted_searches(&self) -> Vec<&SearchCall> {
        let prefix = self.valid_prefix();
        prefix
            .iter()
            .enumerate()
            .filter_map(|(i, turn)| {
                let call = turn.valid_search()?;
                match prefix.get(i + 1).map(|t| &t.payload) {
                    Some(TurnPayload::Information(Information::Notice(Notice::BudgetExhausted))) => {
                        None
                    }
                    Some(TurnPayload::Information(_)) => Some(call),
                    _ => None,
                }
            })
            .collect()
    }

    /// Equality on turn kinds and payloads, ignoring spans and source text.
    pub fn same_structure(&self, other: &Trajectory) -> bool {
        self.mode == other.mode
            && self.terminal == other.terminal
            && self.turns.len() == other.turns.len()
            && self
                .turns
                .iter()
                .zip(&other.turns)
                .all(|(a, b)| a.payload == b.payload)
    }
}

/// Parses a rollout. Never fails; see [`Trajectory::terminal`] and
/// [`Trajectory::violation`].
pub fn parse_trajectory(text: &str, mode: Mode) -> Trajectory {
    let mut parser = Parser {
        mode,
        turns: Vec::new(),
        violation: None,
        saw_keyframe: false,
        saw_answer: false,
        pending_search: false,
    };
    let bytes = text.as_bytes();
    let mut pos = 0;
    while pos < text.len() {
        if bytes[pos].is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        let rest = &text[pos..];
        if let Some(kind) = TurnKind::ALL.into_iter().find(|k| rest.starts_with(k.open_tag())) {
            let body_start = pos + kind.open_tag().len();
            match text[body_start..].find(kind.close_tag()) {
                None => {
                    parser.violate(ViolationKind::UnclosedTag(kind), pos..text.len());
                    break;
                }
                Some(offset) => {
                    let body_end = body_start + offset;
                    let end = body_end + kind.close_tag().len();
                    parser.accept(kind, text[body_start..body_end].trim(), pos..end);
                    pos = end;
                }
            }
        } else if let Some(kind) = TurnKind::ALL.into_iter().find(|k| rest.starts_with(k.close_tag())) {
            let end = pos + kind.close_tag().len();
            parser.violate(ViolationKind::StrayClosingTag(kind), pos..end);
            pos = end;
        } else {
            let skip = rest.chars().next().map_or(1, char::len_utf8);
            let end = rest[skip..].find('<').map(|o| pos + skip + o).unwrap_or(text.len());
            parser.violate(ViolationKind::StrayText, pos..end);
            pos = end;
        }
    }

    let terminal = if parser.violation.is_some() {
        Terminal::Malformed
    } else if parser.saw_answer {
        Terminal::Answered
    } else {
        Terminal::Truncated
    };
    Trajectory {
        mode,
        turns: parser.turns,
        terminal,
        violation: parser.violation,
        source_text: text.to_string(),
    }
}

struct Parser {
    mode: Mode,
    turns: Vec<Turn>,
    violation: Option<Violation>,
    saw_keyframe: bool,
    saw_answer: bool,
    pending_search: bool,
}

impl Parser {
    fn violate(&mut self, kind: ViolationKind, span: Range<usize>) {
        if self.violation.is_none() {
            self.violation = Some(Violation { kind, span });
        }
    }

    fn push(&mut self, payload: TurnPayload, span: Range<usize>) {
        self.turns.push(Turn { payload, span });
    }

    fn accept(&mut self, kind: TurnKind, body: &str, span: Range<usize>) {
        if self.saw_answer {
            let v = if kind == TurnKind::Answer {
                ViolationKind::DuplicateAnswer
            } else {
                ViolationKind::TurnAfterAnswer
            };
            self.violate(v, span.clone());
        }
        if self.pending_search && kind != TurnKind::Information {
            self.violate(ViolationKind::MissingInformation, span.clone());
        }
        self.pending_search = false;

        match kind {
            TurnKind::Think => self.push(TurnPayload::Think(body.to_string()), span),
            TurnKind::Search => {
                if self.saw_keyframe {
                    self.violate(ViolationKind::SearchAfterKeyframe, span.clone());
                }
                let call = parse_search_call(body).map_err(|reason| InvalidSearch {
                    raw: body.to_string(),
                    reason,
                });
                self.pending_search = call.is_ok();
                self.push(TurnPayload::Search(call), span);
            }
            TurnKind::Information => {
                if !matches!(self.turns.last(), Some(t) if t.kind() == TurnKind::Search) {
                    self.violate(ViolationKind::UnexpectedInformation, span.clone());
                }
                self.push(TurnPayload::Information(Information::from_text(body)), span);
            }
            TurnKind::Keyframe => {
                if self.mode == Mode::Image {
                    self.violate(ViolationKind::KeyframeInImageMode, span.clone());
                } else if self.saw_keyframe {
                    self.violate(ViolationKind::DuplicateKeyframe, span.clone());
                }
                match parse_keyframe(body) {
                    Ok(index) => {
                        self.saw_keyframe = true;
                        self.push(TurnPayload::Keyframe(index), span);
                    }
                    Err(reason) => self.violate(ViolationKind::InvalidKeyframe(reason), span),
                }
            }
            TurnKind::Answer => match parse_answer(body) {
                Ok(answer) => {
                    if self.mode == Mode::Video && !self.saw_keyframe {
                        self.violate(ViolationKind::AnswerWithoutKeyframe, span.clone());
                    }
                    self.saw_answer = true;
                    self.push(TurnPayload::Answer(answer), span);
                }
                Err(reason) => self.violate(ViolationKind::InvalidAnswer(reason), span),
            },
        }
    }
}

fn parse_object(body: &str) -> Result<Map<String, Value>, String> {
    match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err("payload is not a JSON object".into()),
        Err(e) => Err(format!("payload is not valid JSON: {e}")),
    }
}

fn check_keys(map: &Map<String, Value>, expected: &[&str]) -> Result<(), String> {
    for key in expected {
        if !map.contains_key(*key) {
            return Err(format!("missing field `{key}`"));
        }
    }
    if let Some(extra) = map.keys().find(|k| !expected.contains(&k.as_str())) {
        return Err(format!("unexpected field `{extra}`"));
    }
    Ok(())
}

pub fn parse_search_call(body: &str) -> Result<SearchCall, String> {
    let map = parse_object(body)?;
    check_keys(&map, &["name", "query"])?;
    let name = map["name"].as_str().ok_or("`name` is not a string")?;
    let tool = SearchTool::from_name(name).ok_or_else(|| format!("unknown tool `{name}`"))?;
    let query = map["query"].as_str().ok_or("`query` is not a string")?;
    if query.trim().is_empty() {
        return Err("empty query".into());
    }
    Ok(SearchCall::new(tool, query))
}

fn parse_keyframe(body: &str) -> Result<usize, String> {
    let inner = body
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .map(str::trim)
        .unwrap_or(body);
    inner
        .parse::<usize>()
        .map_err(|_| format!("`{inner}` is not a non-negative integer frame index"))
}

fn coords<const N: usize>(map: &Map<String, Value>, key: &str) -> Result<[f64; N], String> {
    let arr = map[key]
        .as_array()
        .ok_or_else(|| format!("`{key}` is not an array"))?;
    if arr.len() != N {
        return Err(format!("`{key}` must have {N} numbers, got {}", arr.len()));
    }
    let mut out = [0.0; N];
    for (slot, v) in out.iter_mut().zip(arr) {
        let x = v.as_f64().ok_or_else(|| format!("`{key}` holds a non-number"))?;
        if !x.is_finite() || x < 0.0 {
            return Err(format!("`{key}` coordinate {x} is negative or not finite"));
        }
        *slot = x;
    }
    Ok(out)
}

pub fn parse_answer(body: &str) -> Result<AnswerPayload, String> {
    let map = parse_object(body)?;
    check_keys(&map, &["bbox_2d", "point_2d"])?;
    let bbox = coords::<4>(&map, "bbox_2d")?;
    let point = coords::<2>(&map, "point_2d")?;
    if bbox[0] > bbox[2] || bbox[1] > bbox[3] {
        return Err("bbox corners are not ordered (x1 <= x2, y1 <= y2)".into());
    }
    Ok(AnswerPayload { bbox, point })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SerializeError {
    #[error("cannot serialize a malformed trajectory")]
    Malformed,
    #[error("turn {index} ({kind}) payload would not survive a round trip")]
    UnrepresentablePayload { index: usize, kind: TurnKind },
}

/// Emits canonical rollout text: one tag pair per line.
pub fn serialize_trajectory(t: &Trajectory) -> Result<String, SerializeError> {
    if t.terminal == Terminal::Malformed {
        return Err(SerializeError::Malformed);
    }
    let mut parts = Vec::with_capacity(t.turns.len());
    for (index, turn) in t.turns.iter().enumerate() {
        let kind = turn.kind();
        let body = turn.payload.body();
        if body.trim() != body || body.contains(kind.close_tag()) {
            return Err(SerializeError::UnrepresentablePayload { index, kind });
        }
        parts.push(format!("{}{}{}", kind.open_tag(), body, kind.close_tag()));
    }
    Ok(parts.join("\n"))
}

/// Number of valid actions: accepted searches plus one for a complete answer
/// phase (keyframe and answer together in video mode). `frame_count` bounds
/// the keyframe index when known.
pub fn count_valid_actions(t: &Trajectory, frame_count: Option<usize>) -> usize {
    let searches = t.accepted_searches().len();
    let answer_phase = match t.mode {
        Mode::Image => t.answer().is_some(),
        Mode::Video => {
            let in_range = t
                .keyframe()
                .is_some_and(|i| frame_count.is_none_or(|n| i < n));
            in_range && t.answer().is_some()
        }
    };
    searches + usize::from(answer_phase)
}
