//! Role prompts and persona preambles.
//!
//! The user side is rendered from a full [`Persona`]; the recommender side
//! only ever receives a [`PublicPersona`], which has no field for target
//! attributes or the ground truth, so nothing target-related can reach it.

use std::fmt::Write;

use crate::persona::{Persona, PublicPersona};
use crate::protocol::{ActionKind, Role, Turn};

/// The six action commands, as listed to both simulators.
pub const ACTION_LIST: &str = "<recommend>, <inquire>, <greeting>, <disclose-goal>, <feedback>, and <accept>";

/// Appended when a generated turn failed to parse.
pub const FORMAT_REMINDER: &str = "Your previous reply did not follow the required format. \
Reply with exactly one <action> block followed by one <response> block, for example: \
<action><feedback></action><response>...</response>";

fn legal_actions(role: Role) -> String {
    ActionKind::ALL
        .iter()
        .filter(|a| a.is_legal_for(role))
        .map(|a| format!("<{a}>"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn format_section(out: &mut String, role: Role) {
    out.push_str("## Response format\n");
    out.push_str(
        "Every turn starts with an <action> block holding exactly one command, \
followed by a <response> block with the words you say:\n",
    );
    out.push_str("<action><COMMAND></action><response>TEXT</response>\n");
    let _ = writeln!(out, "The commands are {ACTION_LIST}.");
    let _ = writeln!(out, "As the {role} you may use: {}.", legal_actions(role));
    out.push_str("Wrap any movie title you mention in <movie_title></movie_title>.\n");
    match role {
        Role::User => out.push_str("Use <accept> only when a recommendation satisfies what you are looking for.\n"),
        Role::Recommender => out.push_str("Recommend exactly one movie per <recommend> turn, with its release year.\n"),
    }
}

fn history_section(out: &mut String, history: &[Turn]) {
    out.push_str("## Conversation so far\n");
    if history.is_empty() {
        out.push_str("(no turns yet)\n");
    }
    for turn in history {
        let speaker = match turn.role {
            Role::User => "User",
            Role::Recommender => "Recommender",
        };
        let _ = writeln!(out, "{speaker}: {}", turn.canonical());
    }
}

fn watched_section(out: &mut String, history: &[crate::persona::HistoryMovie]) {
    for (i, movie) in history.iter().enumerate() {
        let _ = writeln!(out, "{}. {}: {}", i + 1, movie.title, movie.review);
    }
}

/// Persona preamble for the user simulator (its training-view context).
pub fn user_context(persona: &Persona) -> String {
    let mut out = String::new();
    out.push_str("## General preferences\n");
    out.push_str(persona.general_preferences.trim());
    out.push_str("\n\n## Movies you have watched\n");
    watched_section(&mut out, &persona.history);
    out.push_str("\n## What you are looking for\n");
    out.push_str(persona.target_attributes.trim());
    out.push('\n');
    out
}

/// Persona preamble for the recommender simulator.
pub fn rec_context(persona: &PublicPersona) -> String {
    let mut out = String::new();
    out.push_str("## About the user\n");
    out.push_str(persona.general_preferences.trim());
    out.push_str("\n\n## Movies the user has watched\n");
    watched_section(&mut out, &persona.history);
    out
}

/// Full prompt for the user simulator.
pub fn build_user_prompt(persona: &Persona, history: &[Turn]) -> String {
    let mut out =
        String::from("You are a person chatting with a movie recommender. Stay in character as the user.\n\n");
    out.push_str(&user_context(persona));
    out.push('\n');
    format_section(&mut out, Role::User);
    out.push('\n');
    history_section(&mut out, history);
    out.push('\n');
    if history.is_empty() {
        out.push_str("Open the conversation with <greeting> or <disclose-goal>.\n");
    } else {
        out.push_str("Write the next user turn.\n");
    }
    out
}

/// Full prompt for the recommender simulator.
pub fn build_rec_prompt(persona: &PublicPersona, history: &[Turn]) -> String {
    let mut out =
        String::from("You are a movie recommender chatting with a user. Learn what they want and suggest movies.\n\n");
    out.push_str(&rec_context(persona));
    out.push('\n');
    format_section(&mut out, Role::Recommender);
    out.push('\n');
    history_section(&mut out, history);
    out.push('\n');
    if history.is_empty() {
        out.push_str("Open the conversation with <greeting> or <inquire>.\n");
    } else {
        out.push_str("Write the next recommender turn.\n");
    }
    out
}
