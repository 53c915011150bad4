//! Deterministic test-double policies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, AgentError, AgentPolicy, Completion, PolicyDescriptor, RoleView, TurnContext};
use crate::metrics::titles::{titles_match, TitleMode};
use crate::protocol::{ActionKind, Role, Turn};

fn descriptor(name: String, kind: &str) -> PolicyDescriptor {
    PolicyDescriptor {
        name,
        kind: kind.into(),
        params: None,
    }
}

fn render(action: ActionKind, response: &str) -> String {
    format!("<action><{action}></action><response>{response}</response>")
}

/// Replays pre-authored raw turns. The n-th turn of its role in a dialogue
/// is `turns[n]`; a repair request gets the same text again.
pub struct ScriptedQueue {
    descriptor: PolicyDescriptor,
    role: Role,
    turns: Vec<String>,
}

impl ScriptedQueue {
    pub fn new(name: impl Into<String>, role: Role, turns: Vec<String>) -> Self {
        ScriptedQueue {
            descriptor: descriptor(name.into(), "queue"),
            role,
            turns,
        }
    }
}

impl AgentPolicy for ScriptedQueue {
    fn descriptor(&self) -> &PolicyDescriptor {
        &self.descriptor
    }

    fn complete(&self, ctx: &TurnContext, _rejected: Option<&str>) -> Result<Completion, AgentError> {
        if ctx.role() != self.role {
            return Err(AgentError::WrongRole {
                policy: self.descriptor.name.clone(),
                expected: self.role,
                got: ctx.role(),
            });
        }
        let index = ctx.own_turns();
        self.turns
            .get(index)
            .map(Completion::text)
            .ok_or_else(|| AgentError::ScriptExhausted {
                policy: self.descriptor.name.clone(),
                role: self.role,
                index,
            })
    }
}

/// When the rule-based user accepts a recommendation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcceptRule {
    Any,
    Never,
    /// Accept titles in this set (strict title match).
    Titles(Vec<String>),
}

impl AcceptRule {
    fn accepts(&self, title: &str) -> bool {
        match self {
            AcceptRule::Any => true,
            AcceptRule::Never => false,
            AcceptRule::Titles(set) => set.iter().any(|t| titles_match(t, title, TitleMode::Strict)),
        }
    }
}

/// Rule-table user: greets first, discloses its goal when asked, accepts
/// per [`AcceptRule`], and otherwise gives feedback.
pub struct RuleUser {
    descriptor: PolicyDescriptor,
    accept: AcceptRule,
}

impl RuleUser {
    pub fn new(name: impl Into<String>, accept: AcceptRule) -> Self {
        RuleUser {
            descriptor: descriptor(name.into(), "rule-user"),
            accept,
        }
    }

    fn respond(&self, persona_goal: &str, last: Option<&Turn>) -> String {
        let Some(last) = last else {
            return render(ActionKind::Greeting, "Hi! Could you help me find a movie tonight?");
        };
        match last.action {
            ActionKind::Recommend => {
                let title = last.title().unwrap_or_default();
                if self.accept.accepts(title) {
                    render(ActionKind::Accept, "That sounds perfect, I will watch it tonight.")
                } else {
                    render(
                        ActionKind::Feedback,
                        "Not quite what I am after. Could you suggest something else?",
                    )
                }
            }
            _ => render(
                ActionKind::DiscloseGoal,
                &format!("I am looking for {}.", persona_goal.trim().trim_end_matches('.')),
            ),
        }
    }
}

impl AgentPolicy for RuleUser {
    fn descriptor(&self) -> &PolicyDescriptor {
        &self.descriptor
    }

    fn complete(&self, ctx: &TurnContext, _rejected: Option<&str>) -> Result<Completion, AgentError> {
        let RoleView::User(persona) = ctx.view else {
            return Err(AgentError::WrongRole {
                policy: self.descriptor.name.clone(),
                expected: Role::User,
                got: ctx.role(),
            });
        };
        let last_rec = ctx.history.last().filter(|t| t.role == Role::Recommender);
        Ok(Completion::text(self.respond(&persona.target_attributes, last_rec)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecOrder {
    /// Candidates in list order, cycling.
    #[default]
    Sequential,
    /// Uniform draw among not-yet-recommended candidates, seeded per turn.
    Seeded,
}

/// Rule-based recommender over a fixed candidate list.
pub struct RuleRecommender {
    descriptor: PolicyDescriptor,
    candidates: Vec<String>,
    order: RecOrder,
    inquire_first: bool,
}

impl RuleRecommender {
    pub fn new(
        name: impl Into<String>,
        candidates: Vec<String>,
        order: RecOrder,
        inquire_first: bool,
    ) -> Result<Self, AgentError> {
        let name = name.into();
        if candidates.is_empty() {
            return Err(AgentError::Config(format!("{name}: empty candidate list")));
        }
        Ok(RuleRecommender {
            descriptor: descriptor(name, "rule-recommender"),
            candidates,
            order,
            inquire_first,
        })
    }

    fn pick(&self, ctx: &TurnContext) -> &str {
        let previous: Vec<&str> = ctx
            .history
            .iter()
            .filter(|t| t.role == Role::Recommender && t.is_recommend())
            .filter_map(Turn::title)
            .collect();
        match self.order {
            RecOrder::Sequential => &self.candidates[previous.len() % self.candidates.len()],
            RecOrder::Seeded => {
                let fresh: Vec<&String> = self
                    .candidates
                    .iter()
                    .filter(|c| !previous.iter().any(|p| titles_match(p, c, TitleMode::Strict)))
                    .collect();
                let pool: Vec<&String> = if fresh.is_empty() {
                    self.candidates.iter().collect()
                } else {
                    fresh
                };
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, ctx.dialogue_id, ctx.history.len()));
                pool.choose(&mut rng).expect("candidate pool is non-empty")
            }
        }
    }
}

impl AgentPolicy for RuleRecommender {
    fn descriptor(&self) -> &PolicyDescriptor {
        &self.descriptor
    }

    fn complete(&self, ctx: &TurnContext, _rejected: Option<&str>) -> Result<Completion, AgentError> {
        if ctx.role() != Role::Recommender {
            return Err(AgentError::WrongRole {
                policy: self.descriptor.name.clone(),
                expected: Role::Recommender,
                got: ctx.role(),
            });
        }
        if self.inquire_first && ctx.own_turns() == 0 {
            return Ok(Completion::text(render(
                ActionKind::Inquire,
                "Happy to help! What kind of movie are you in the mood for?",
            )));
        }
        let title = self.pick(ctx);
        Ok(Completion::text(render(
            ActionKind::Recommend,
            &format!("You might enjoy <movie_title>{title}</movie_title>."),
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::super::generate_turn;
    use super::super::tests::persona;
    use super::*;

    #[test]
    fn rule_user_flow() {
        let p = persona();
        let user = RuleUser::new("u", AcceptRule::Titles(vec!["Heat (1995)".into()]));
        let mut history = Vec::new();
        let next = |h: &[Turn]| {
            let ctx = TurnContext {
                view: RoleView::User(&p),
                history: h,
                dialogue_id: "d",
                seed: 1,
            };
            generate_turn(&user, &ctx).unwrap().turn
        };
        assert_eq!(next(&history).action, ActionKind::Greeting);
        history.push(Turn::plain(Role::Recommender, ActionKind::Inquire, "What do you like?").unwrap());
        let t = next(&history);
        assert_eq!(t.action, ActionKind::DiscloseGoal);
        assert!(t.response_text.contains("a tense crime thriller"));
        history.push(Turn::titled(Role::Recommender, ActionKind::Recommend, "", "Ronin (1998)", "").unwrap());
        assert_eq!(next(&history).action, ActionKind::Feedback);
        history.push(Turn::titled(Role::Recommender, ActionKind::Recommend, "", "heat (1995)", "").unwrap());
        assert_eq!(next(&history).action, ActionKind::Accept);
    }

    #[test]
    fn seeded_recommender_is_deterministic_and_avoids_repeats() {
        let p = persona().public();
        let cands: Vec<String> = ["A (2000)", "B (2001)", "C (2002)"].map(String::from).to_vec();
        let rec = RuleRecommender::new("r", cands, RecOrder::Seeded, false).unwrap();
        let mut history: Vec<Turn> = Vec::new();
        let mut seen = Vec::new();
        for _ in 0..3 {
            let ctx = TurnContext {
                view: RoleView::Recommender(&p),
                history: &history,
                dialogue_id: "d",
                seed: 42,
            };
            let a = generate_turn(&rec, &ctx).unwrap().turn;
            let b = generate_turn(&rec, &ctx).unwrap().turn;
            assert_eq!(a, b);
            seen.push(a.title().unwrap().to_string());
            history.push(a);
        }
        seen.sort();
        assert_eq!(seen, ["A (2000)", "B (2001)", "C (2002)"]);
    }
}
