//! Post-training sampling audit: prompt a model at its own role's turns in
//! held-out dialogues, decode greedily, and count role-legal actions.

use std::collections::BTreeMap;

use serde::Serialize;

use crsim_core::corpus::{export_masked_views, SourceDialogue};
use crsim_core::protocol::{parse_turn, Role};

use crate::model::{ModelError, TinyLm};
use crate::synth::generate_synthetic_corpus;
use crate::train::TrainError;
use crate::vocab::{Symbol, TokenId, Vocab, CTX, EOT};

/// Prompts per model in the standard audit.
pub const AUDIT_PROMPTS: usize = 500;
/// Decoding budget per turn.
pub const MAX_NEW_TOKENS: usize = 16;

/// Turn-start prompts for `role`: persona context, the dialogue so far, and
/// the role marker of the turn to be written. Collected in corpus order.
pub fn turn_prompts(
    corpus: &[SourceDialogue],
    vocab: &Vocab,
    role: Role,
    limit: usize,
) -> Result<Vec<Vec<TokenId>>, TrainError> {
    let mut prompts = Vec::new();
    for d in corpus {
        let (user_view, rec_view) = export_masked_views(d)?;
        let view = match role {
            Role::User => user_view,
            Role::Recommender => rec_view,
        };
        let mut prefix = vec![vocab.marker(CTX)];
        prefix.extend(vocab.encode_text(&view.context));
        for (i, m) in view.messages.iter().enumerate() {
            if m.role == role {
                if prompts.len() == limit {
                    return Ok(prompts);
                }
                let mut p = prefix.clone();
                p.push(vocab.role_marker(role));
                prompts.push(p);
            }
            let tokens =
                vocab
                    .encode_message(m.role, &m.text)
                    .map_err(|source| crate::vocab::VocabError::Unparseable {
                        dialogue_id: view.dialogue_id.clone(),
                        index: i + 1,
                        source,
                    })?;
            prefix.extend(tokens);
        }
    }
    Ok(prompts)
}

/// Held-out prompts: generates synthetic dialogues from `seed` until
/// `n` prompts for `role` are available.
pub fn held_out_prompts(seed: u64, vocab: &Vocab, role: Role, n: usize) -> Result<Vec<Vec<TokenId>>, TrainError> {
    let mut size = n.max(1);
    loop {
        let corpus = generate_synthetic_corpus(seed, size);
        let prompts = turn_prompts(&corpus, vocab, role, n)?;
        if prompts.len() >= n {
            return Ok(prompts);
        }
        size *= 2;
    }
}

/// Greedy continuation of `prompt`, stopping after `<eot>`, after
/// `max_new` tokens, or at the model's window.
pub fn decode_greedy(
    model: &TinyLm,
    vocab: &Vocab,
    prompt: &[TokenId],
    max_new: usize,
) -> Result<Vec<TokenId>, ModelError> {
    let eot = vocab.marker(EOT);
    let mut tokens = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && tokens.len() < model.config().max_len {
        let next = model.greedy_next(&tokens)?;
        out.push(next);
        tokens.push(next);
        if next == eot {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub role: Role,
    pub n: usize,
    /// Turns whose first decoded token is an action the role may use.
    pub n_legal: usize,
    /// Turns that decode to well-formed protocol text ending in `<eot>`.
    pub n_parsed: usize,
    pub legal_rate: f64,
    pub parse_rate: f64,
    /// How often each first token was produced.
    pub first_tokens: BTreeMap<String, usize>,
}

pub fn audit_role(
    model: &TinyLm,
    vocab: &Vocab,
    role: Role,
    prompts: &[Vec<TokenId>],
) -> Result<AuditReport, ModelError> {
    let eot = vocab.marker(EOT);
    let mut n_legal = 0;
    let mut n_parsed = 0;
    let mut first_tokens = BTreeMap::new();
    for prompt in prompts {
        let out = decode_greedy(model, vocab, prompt, MAX_NEW_TOKENS)?;
        let Some(&first) = out.first() else { continue };
        *first_tokens.entry(vocab.token_str(first)).or_insert(0) += 1;
        if matches!(vocab.symbol(first), Some(Symbol::Action(a)) if a.is_legal_for(role)) {
            n_legal += 1;
        }
        let complete = out.last() == Some(&eot);
        if complete
            && vocab
                .decode_turn(&out)
                .is_some_and(|raw| parse_turn(&raw, role).is_ok())
        {
            n_parsed += 1;
        }
    }
    let n = prompts.len();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(AuditReport {
        role,
        n,
        n_legal,
        n_parsed,
        legal_rate: rate(n_legal),
        parse_rate: rate(n_parsed),
        first_tokens,
    })
}

/// Greedy sample turns from `model` at held-out prompts, rendered as
/// protocol text (or the raw token string when no action leads).
pub fn sample_turns(model: &TinyLm, vocab: &Vocab, role: Role, seed: u64, n: usize) -> Result<Vec<String>, TrainError> {
    let prompts = held_out_prompts(seed, vocab, role, n)?;
    let mut out = Vec::with_capacity(n);
    for p in &prompts {
        let tokens = decode_greedy(model, vocab, p, MAX_NEW_TOKENS)?;
        out.push(
            vocab
                .decode_turn(&tokens)
                .unwrap_or_else(|| tokens.iter().map(|&t| vocab.token_str(t)).collect::<Vec<_>>().join(" ")),
        );
    }
    Ok(out)
}
