//! Whole-symbol tokenizer for the toy grammar.
//!
//! Token ids are laid out as: structural markers, the six action commands,
//! one symbol per catalog item, then plain words. Catalog titles are matched
//! case-insensitively before word splitting; words outside the vocabulary
//! are dropped.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crsim_core::corpus::{CatalogEntry, MaskedView};
use crsim_core::metrics::diversity::tokenize;
use crsim_core::protocol::{parse_turn, ActionKind, ProtocolError, Role};
use crsim_core::text::find_ci;

use crate::MaskedSequence;

pub const CTX: &str = "<ctx>";
pub const USER: &str = "<u>";
pub const REC: &str = "<r>";
pub const EOT: &str = "<eot>";

const STRUCTURAL: [&str; 4] = [CTX, USER, REC, EOT];

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VocabError {
    #[error("vocabulary has {0} symbols, more than the 64 allowed")]
    TooLarge(usize),
    #[error("duplicate vocabulary word `{0}`")]
    DuplicateWord(String),
    #[error("dialogue {dialogue_id}: message {index} does not parse: {source}")]
    Unparseable {
        dialogue_id: String,
        index: usize,
        #[source]
        source: ProtocolError,
    },
    #[error("dialogue {dialogue_id}: encodes to {len} tokens, model window is {max}")]
    TooLong {
        dialogue_id: String,
        len: usize,
        max: usize,
    },
    #[error("dialogue {0} has no messages")]
    Empty(String),
}

/// What a token id stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol<'a> {
    Marker(&'a str),
    Action(ActionKind),
    Item(&'a CatalogEntry),
    Word(&'a str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    items: Vec<CatalogEntry>,
    words: Vec<String>,
    #[serde(skip)]
    word_ids: HashMap<String, TokenId>,
}

pub const MAX_VOCAB: usize = 64;

impl Vocab {
    pub fn new(items: Vec<CatalogEntry>, words: Vec<String>) -> Result<Vocab, VocabError> {
        let size = STRUCTURAL.len() + ActionKind::ALL.len() + items.len() + words.len();
        if size > MAX_VOCAB {
            return Err(VocabError::TooLarge(size));
        }
        let mut v = Vocab {
            items,
            words,
            word_ids: HashMap::new(),
        };
        v.index_words()?;
        Ok(v)
    }

    fn index_words(&mut self) -> Result<(), VocabError> {
        let base = self.word_base();
        self.word_ids.clear();
        for (i, w) in self.words.iter().enumerate() {
            if self.word_ids.insert(w.clone(), base + i as TokenId).is_some() {
                return Err(VocabError::DuplicateWord(w.clone()));
            }
        }
        Ok(())
    }

    /// Restores the lookup table after deserialization.
    pub fn rebuild(mut self) -> Result<Vocab, VocabError> {
        self.index_words()?;
        Ok(self)
    }

    fn action_base(&self) -> TokenId {
        STRUCTURAL.len() as TokenId
    }

    fn item_base(&self) -> TokenId {
        self.action_base() + ActionKind::ALL.len() as TokenId
    }

    fn word_base(&self) -> TokenId {
        self.item_base() + self.items.len() as TokenId
    }

    pub fn len(&self) -> usize {
        self.word_base() as usize + self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn items(&self) -> &[CatalogEntry] {
        &self.items
    }

    pub fn marker(&self, name: &str) -> TokenId {
        STRUCTURAL
            .iter()
            .position(|m| *m == name)
            .unwrap_or_else(|| panic!("unknown marker {name}")) as TokenId
    }

    pub fn role_marker(&self, role: Role) -> TokenId {
        match role {
            Role::User => self.marker(USER),
            Role::Recommender => self.marker(REC),
        }
    }

    pub fn action(&self, action: ActionKind) -> TokenId {
        let i = ActionKind::ALL.iter().position(|a| *a == action).expect("closed set");
        self.action_base() + i as TokenId
    }

    pub fn word(&self, w: &str) -> Option<TokenId> {
        self.word_ids.get(w).copied()
    }

    pub fn symbol(&self, id: TokenId) -> Option<Symbol<'_>> {
        let i = id as usize;
        let a = self.action_base() as usize;
        let it = self.item_base() as usize;
        let w = self.word_base() as usize;
        if i < a {
            Some(Symbol::Marker(STRUCTURAL[i]))
        } else if i < it {
            Some(Symbol::Action(ActionKind::ALL[i - a]))
        } else if i < w {
            Some(Symbol::Item(&self.items[i - it]))
        } else {
            self.words.get(i - w).map(|s| Symbol::Word(s.as_str()))
        }
    }

    pub fn token_str(&self, id: TokenId) -> String {
        match self.symbol(id) {
            Some(Symbol::Marker(m)) => m.to_string(),
            Some(Symbol::Action(a)) => format!("<{a}>"),
            Some(Symbol::Item(e)) => format!("[{}]", e.title),
            Some(Symbol::Word(w)) => w.to_string(),
            None => format!("<#{id}>"),
        }
    }

    /// Free text to tokens: catalog titles become item symbols, other text is
    /// split with the v1 word tokenizer and filtered to known words.
    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        let mut spans: Vec<(usize, usize, TokenId)> = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            for r in find_ci(text, &item.title) {
                spans.push((r.start, r.end, self.item_base() + i as TokenId));
            }
        }
        spans.sort();
        let mut out = Vec::new();
        let mut pos = 0;
        for (start, end, id) in spans {
            if start < pos {
                continue;
            }
            self.push_words(&text[pos..start], &mut out);
            out.push(id);
            pos = end;
        }
        self.push_words(&text[pos..], &mut out);
        out
    }

    fn push_words(&self, text: &str, out: &mut Vec<TokenId>) {
        out.extend(tokenize(text).iter().filter_map(|w| self.word(w)));
    }

    /// Tokens for one protocol message: role marker, action, response words
    /// (titles as item symbols), end-of-turn.
    pub fn encode_message(&self, role: Role, raw: &str) -> Result<Vec<TokenId>, ProtocolError> {
        let turn = parse_turn(raw, role)?;
        let mut out = vec![self.role_marker(role), self.action(turn.action)];
        out.extend(self.encode_text(&turn.response_text));
        out.push(self.marker(EOT));
        Ok(out)
    }

    /// Turns a masked view into model input. The context gets a leading
    /// `<ctx>` symbol; every token of a loss-flagged message is a loss target.
    pub fn encode_view(&self, view: &MaskedView, max_len: usize) -> Result<MaskedSequence, VocabError> {
        if view.messages.is_empty() {
            return Err(VocabError::Empty(view.dialogue_id.clone()));
        }
        let mut context = vec![self.marker(CTX)];
        context.extend(self.encode_text(&view.context));
        let mut targets = Vec::new();
        let mut mask = Vec::new();
        for (i, m) in view.messages.iter().enumerate() {
            let tokens = self
                .encode_message(m.role, &m.text)
                .map_err(|source| VocabError::Unparseable {
                    dialogue_id: view.dialogue_id.clone(),
                    index: i + 1,
                    source,
                })?;
            mask.extend(std::iter::repeat_n(m.loss, tokens.len()));
            targets.extend(tokens);
        }
        let seq = MaskedSequence { context, targets, mask };
        if seq.input_len() > max_len {
            return Err(VocabError::TooLong {
                dialogue_id: view.dialogue_id.clone(),
                len: seq.input_len(),
                max: max_len,
            });
        }
        Ok(seq)
    }

    /// Renders decoded turn tokens (action first, up to `<eot>`) back into
    /// protocol text. Returns `None` when the first token is not an action.
    pub fn decode_turn(&self, tokens: &[TokenId]) -> Option<String> {
        let (&first, rest) = tokens.split_first()?;
        let Some(Symbol::Action(action)) = self.symbol(first) else {
            return None;
        };
        let mut words: Vec<String> = Vec::new();
        for &t in rest {
            match self.symbol(t)? {
                Symbol::Marker(m) if m == EOT => break,
                Symbol::Word(w) => words.push(w.to_string()),
                Symbol::Item(e) => words.push(format!("<movie_title>{}</movie_title>", e.title)),
                Symbol::Action(a) => words.push(format!("<{a}>")),
                Symbol::Marker(m) => words.push(m.to_string()),
            }
        }
        Some(format!(
            "<action><{action}></action><response>{}</response>",
            words.join(" ")
        ))
    }
}
