//! Structured turn grammar shared by both simulators.
//!
//! Every generated turn commits to exactly one action before producing the
//! user-facing text:
//!
//! ```text
//! turn            := ws* action_block ws* response_block
//! action_block    := "<action>" "<" CMD ">" "</action>"
//! response_block  := "<response>" TEXT "</response>"?
//! CMD             := recommend | inquire | greeting | disclose-goal | feedback | accept
//! ```
//!
//! `TEXT` may carry one inline `<movie_title>…</movie_title>` span. Only the
//! first span is extracted; any later spans stay verbatim in the text. The
//! closing `</response>` may be missing (truncated generations); every other
//! structural defect is an error carrying the byte offset where parsing failed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const ACTION_OPEN: &str = "<action>";
const ACTION_CLOSE: &str = "</action>";
const RESPONSE_OPEN: &str = "<response>";
const RESPONSE_CLOSE: &str = "</response>";
const TITLE_OPEN: &str = "<movie_title>";
const TITLE_CLOSE: &str = "</movie_title>";

/// Which side of the conversation produced a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Recommender,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::User, Role::Recommender];

    pub fn other(self) -> Role {
        match self {
            Role::User => Role::Recommender,
            Role::Recommender => Role::User,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Recommender => "recommender",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" => Ok(Role::User),
            "recommender" | "rec" | "assistant" => Ok(Role::Recommender),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

/// The closed set of dialogue actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Recommend,
    Inquire,
    Greeting,
    DiscloseGoal,
    Feedback,
    Accept,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::Recommend,
        ActionKind::Inquire,
        ActionKind::Greeting,
        ActionKind::DiscloseGoal,
        ActionKind::Feedback,
        ActionKind::Accept,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Recommend => "recommend",
            ActionKind::Inquire => "inquire",
            ActionKind::Greeting => "greeting",
            ActionKind::DiscloseGoal => "disclose-goal",
            ActionKind::Feedback => "feedback",
            ActionKind::Accept => "accept",
        }
    }

    /// Whether `role` may produce this action.
    ///
    /// user: greeting, disclose-goal, feedback, accept, inquire.
    /// recommender: greeting, inquire, recommend.
    pub fn is_legal_for(self, role: Role) -> bool {
        use ActionKind::*;
        match role {
            Role::User => matches!(self, Greeting | DiscloseGoal | Feedback | Accept | Inquire),
            Role::Recommender => matches!(self, Greeting | Inquire | Recommend),
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown action command `{s}`"))
    }
}

/// A recommended title and where it sits inside the response text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TitleSpan {
    pub text: String,
    /// Byte offset into `Turn::response_text` where the title starts.
    pub offset: usize,
}

/// One parsed protocol turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub action: ActionKind,
    /// User-facing text with the title tags removed (title text kept inline).
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<TitleSpan>,
    /// The string this turn was parsed from (canonical form for constructed turns).
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("missing <action> block at byte {offset}")]
    MissingActionBlock { offset: usize },
    #[error("malformed <action> block at byte {offset}")]
    MalformedActionBlock { offset: usize },
    #[error("unknown action command `{command}` at byte {offset}")]
    UnknownActionCommand { offset: usize, command: String },
    #[error("missing <response> block at byte {offset}")]
    MissingResponseBlock { offset: usize },
    #[error("recommend turn without a movie title (byte {offset})")]
    EmptyMovieTitle { offset: usize },
    #[error("malformed <movie_title> span at byte {offset}")]
    MalformedMovieTitle { offset: usize },
    #[error("input is not valid UTF-8 at byte {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("turn invariant violated: {0}")]
    InvariantViolation(String),
}

impl ProtocolError {
    /// Byte offset of the failure, when the error came from parsing.
    pub fn offset(&self) -> Option<usize> {
        match self {
            ProtocolError::MissingActionBlock { offset }
            | ProtocolError::MalformedActionBlock { offset }
            | ProtocolError::UnknownActionCommand { offset, .. }
            | ProtocolError::MissingResponseBlock { offset }
            | ProtocolError::EmptyMovieTitle { offset }
            | ProtocolError::MalformedMovieTitle { offset }
            | ProtocolError::InvalidUtf8 { offset } => Some(*offset),
            ProtocolError::InvariantViolation(_) => None,
        }
    }
}

/// A (role, action) pair outside the legality table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IllegalPair {
    pub role: Role,
    pub action: ActionKind,
}

impl fmt::Display for IllegalPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} may not produce <{}>", self.role, self.action)
    }
}

fn skip_ws(s: &str, from: usize) -> usize {
    s[from..]
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map(|(i, _)| from + i)
        .unwrap_or(s.len())
}

/// Parses one raw model output into a [`Turn`] for `role`.
pub fn parse_turn(raw: &str, role: Role) -> Result<Turn, ProtocolError> {
    let mut pos = skip_ws(raw, 0);
    if !raw[pos..].starts_with(ACTION_OPEN) {
        return Err(ProtocolError::MissingActionBlock { offset: pos });
    }
    pos += ACTION_OPEN.len();

    let cmd_start = pos;
    if !raw[pos..].starts_with('<') {
        return Err(ProtocolError::MalformedActionBlock { offset: cmd_start });
    }
    let cmd_end = match raw[pos + 1..].find(['<', '>']) {
        Some(i) if raw.as_bytes()[pos + 1 + i] == b'>' => pos + 1 + i,
        _ => return Err(ProtocolError::MalformedActionBlock { offset: cmd_start }),
    };
    let command = &raw[pos + 1..cmd_end];
    let action = command
        .parse::<ActionKind>()
        .map_err(|_| ProtocolError::UnknownActionCommand {
            offset: cmd_start,
            command: command.to_string(),
        })?;
    pos = cmd_end + 1;
    if !raw[pos..].starts_with(ACTION_CLOSE) {
        return Err(ProtocolError::MalformedActionBlock { offset: pos });
    }
    pos += ACTION_CLOSE.len();

    pos = skip_ws(raw, pos);
    if !raw[pos..].starts_with(RESPONSE_OPEN) {
        return Err(ProtocolError::MissingResponseBlock { offset: pos });
    }
    let body_start = pos + RESPONSE_OPEN.len();
    let body_end = raw[body_start..]
        .find(RESPONSE_CLOSE)
        .map(|i| body_start + i)
        .unwrap_or(raw.len());
    let body = &raw[body_start..body_end];

    let (response_text, title) = match body.find(TITLE_OPEN) {
        None => (body.to_string(), None),
        Some(open) => {
            let title_start = open + TITLE_OPEN.len();
            let close = body[title_start..].find(TITLE_CLOSE).map(|i| title_start + i).ok_or(
                ProtocolError::MalformedMovieTitle {
                    offset: body_start + open,
                },
            )?;
            let title = &body[title_start..close];
            if title.contains(['<', '>']) {
                return Err(ProtocolError::MalformedMovieTitle {
                    offset: body_start + open,
                });
            }
            if title.trim().is_empty() {
                return Err(ProtocolError::EmptyMovieTitle {
                    offset: body_start + open,
                });
            }
            let mut text = String::with_capacity(body.len());
            text.push_str(&body[..open]);
            text.push_str(title);
            text.push_str(&body[close + TITLE_CLOSE.len()..]);
            (
                text,
                Some(TitleSpan {
                    text: title.to_string(),
                    offset: open,
                }),
            )
        }
    };

    if action == ActionKind::Recommend && title.is_none() {
        return Err(ProtocolError::EmptyMovieTitle { offset: body_start });
    }

    Ok(Turn {
        role,
        action,
        response_text,
        title,
        raw: raw.to_string(),
    })
}

/// Byte-level entry point; invalid UTF-8 is reported, never panicked on.
pub fn parse_turn_bytes(raw: &[u8], role: Role) -> Result<Turn, ProtocolError> {
    let s = std::str::from_utf8(raw).map_err(|e| ProtocolError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    parse_turn(s, role)
}

fn check_invariants(action: ActionKind, response_text: &str, title: Option<&TitleSpan>) -> Result<(), ProtocolError> {
    let violation = |msg: &str| Err(ProtocolError::InvariantViolation(msg.to_string()));
    if response_text.contains(RESPONSE_CLOSE) {
        return violation("response text contains a </response> tag");
    }
    match title {
        None => {
            if action == ActionKind::Recommend {
                return violation("recommend turn lacks a movie title");
            }
            if response_text.contains(TITLE_OPEN) {
                return violation("untitled turn carries a <movie_title> tag in its text");
            }
        }
        Some(span) => {
            if span.text.trim().is_empty() {
                return violation("movie title is empty");
            }
            if span.text.contains(['<', '>']) {
                return violation("movie title contains tag characters");
            }
            let end = span.offset + span.text.len();
            if end > response_text.len()
                || !response_text.is_char_boundary(span.offset)
                || !response_text.is_char_boundary(end)
                || response_text[span.offset..end] != span.text
            {
                return violation("title span does not match the response text");
            }
            if response_text[..span.offset].contains(TITLE_OPEN) {
                return violation("a <movie_title> tag precedes the recorded title span");
            }
        }
    }
    Ok(())
}

/// Emits the canonical wire form of a turn.
pub fn serialize_turn(turn: &Turn) -> Result<String, ProtocolError> {
    check_invariants(turn.action, &turn.response_text, turn.title.as_ref())?;
    let mut out = String::with_capacity(turn.response_text.len() + 64);
    out.push_str(ACTION_OPEN);
    out.push('<');
    out.push_str(turn.action.as_str());
    out.push('>');
    out.push_str(ACTION_CLOSE);
    out.push_str(RESPONSE_OPEN);
    match &turn.title {
        None => out.push_str(&turn.response_text),
        Some(span) => {
            let end = span.offset + span.text.len();
            out.push_str(&turn.response_text[..span.offset]);
            out.push_str(TITLE_OPEN);
            out.push_str(&span.text);
            out.push_str(TITLE_CLOSE);
            out.push_str(&turn.response_text[end..]);
        }
    }
    out.push_str(RESPONSE_CLOSE);
    Ok(out)
}

/// Every `<movie_title>` span in `text`, in order. Unclosed spans are skipped.
pub fn title_spans(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(i) = text[from..].find(TITLE_OPEN) {
        let start = from + i + TITLE_OPEN.len();
        match text[start..].find(TITLE_CLOSE) {
            Some(j) => {
                out.push(&text[start..start + j]);
                from = start + j + TITLE_CLOSE.len();
            }
            None => break,
        }
    }
    out
}

/// Returns one violation per illegal (role, action) pair; empty when legal.
pub fn validate_role_legality(turn: &Turn) -> Vec<IllegalPair> {
    if turn.action.is_legal_for(turn.role) {
        Vec::new()
    } else {
        vec![IllegalPair {
            role: turn.role,
            action: turn.action,
        }]
    }
}

impl Turn {
    /// Builds a turn and fills `raw` with its canonical serialization.
    pub fn new(
        role: Role,
        action: ActionKind,
        response_text: impl Into<String>,
        title: Option<TitleSpan>,
    ) -> Result<Turn, ProtocolError> {
        let mut turn = Turn {
            role,
            action,
            response_text: response_text.into(),
            title,
            raw: String::new(),
        };
        turn.raw = serialize_turn(&turn)?;
        Ok(turn)
    }

    /// A turn without a title span.
    pub fn plain(role: Role, action: ActionKind, text: impl Into<String>) -> Result<Turn, ProtocolError> {
        Turn::new(role, action, text, None)
    }

    /// A turn whose text is `before + title + after`, with the title tagged.
    pub fn titled(
        role: Role,
        action: ActionKind,
        before: &str,
        title: &str,
        after: &str,
    ) -> Result<Turn, ProtocolError> {
        let span = TitleSpan {
            text: title.to_string(),
            offset: before.len(),
        };
        Turn::new(role, action, format!("{before}{title}{after}"), Some(span))
    }

    pub fn title(&self) -> Option<&str> {
        self.title.as_ref().map(|t| t.text.as_str())
    }

    /// Canonical wire form; falls back to `raw` if the turn was mutated into
    /// an invalid state.
    pub fn canonical(&self) -> String {
        serialize_turn(self).unwrap_or_else(|_| self.raw.clone())
    }

    pub fn is_accept(&self) -> bool {
        self.role == Role::User && self.action == ActionKind::Accept
    }

    pub fn is_recommend(&self) -> bool {
        self.role == Role::Recommender && self.action == ActionKind::Recommend
    }
}
