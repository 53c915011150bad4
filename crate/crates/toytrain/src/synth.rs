//! Micro-grammar for synthetic training dialogues over a 20-item catalog.
//!
//! The user opens with a greeting or a stated goal, the recommender greets
//! or asks until the goal is known and then proposes items, mostly from the
//! wanted genre. The user accepts only the ground-truth item. Dialogues stop
//! at an accept or at [`TURN_CAP`] turns.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crsim_core::corpus::{CatalogEntry, SourceDialogue, SourceTurn};
use crsim_core::persona::{GroundTruth, HistoryMovie, PersonaSource, HISTORY_LEN};
use crsim_core::protocol::{ActionKind, Role, Turn};

use crate::vocab::Vocab;

pub const GENRES: [&str; 5] = ["action", "comedy", "drama", "horror", "scifi"];

const NAMES: [&str; 20] = [
    "Alpha", "Bravo", "Charlie", "Delta", "Echo", "Foxtrot", "Golf", "Hotel", "India", "Juliet", "Kilo", "Lima",
    "Mike", "November", "Oscar", "Papa", "Quebec", "Romeo", "Sierra", "Tango",
];

const WORDS: [&str; 28] = [
    "hi", "hello", "i", "want", "a", "movie", "looking", "for", "what", "do", "you", "like", "try", "might", "about",
    "no", "have", "seen", "it", "not", "that", "one", "great", "thanks", "perfect", "plot", "and", "more",
];

/// Maximum turns per synthetic dialogue, both roles counted.
pub const TURN_CAP: usize = 10;

/// Probability that a recommendation ignores the stated genre.
const OFF_GENRE: f64 = 0.15;
/// Probability that the recommender asks again instead of recommending.
const FOLLOW_UP: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyItem {
    pub entry: CatalogEntry,
    pub genre: usize,
}

/// Twenty items, four per genre, in genre order.
pub fn toy_items() -> Vec<ToyItem> {
    NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| ToyItem {
            entry: CatalogEntry {
                item_id: format!("toy-{:02}", i + 1),
                title: format!("{name} ({})", 1991 + i),
            },
            genre: i / 4,
        })
        .collect()
}

pub fn toy_catalog() -> Vec<CatalogEntry> {
    toy_items().into_iter().map(|t| t.entry).collect()
}

pub fn toy_vocab() -> Vocab {
    let words = WORDS.iter().chain(GENRES.iter()).map(|w| w.to_string()).collect();
    Vocab::new(toy_catalog(), words).expect("the toy vocabulary fits")
}

fn plain(role: Role, action: ActionKind, text: &str) -> SourceTurn {
    let turn = Turn::plain(role, action, text).expect("grammar emits valid turns");
    SourceTurn { role, text: turn.raw }
}

fn titled(role: Role, action: ActionKind, before: &str, title: &str) -> SourceTurn {
    let turn = Turn::titled(role, action, before, title, "").expect("grammar emits valid turns");
    SourceTurn { role, text: turn.raw }
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    items: &'a [ToyItem],
}

impl Builder<'_> {
    fn pick<'s>(&mut self, options: &[&'s str]) -> &'s str {
        options.choose(&mut self.rng).expect("non-empty options")
    }

    fn persona(&mut self, id: usize, genre: usize, gt: usize) -> PersonaSource {
        let other = (genre + self.rng.gen_range(1..GENRES.len())) % GENRES.len();
        let (first, second) = if self.rng.gen_bool(0.5) {
            (genre, other)
        } else {
            (other, genre)
        };
        let pool: Vec<usize> = (0..self.items.len()).filter(|&i| i != gt).collect();
        let history = pool
            .choose_multiple(&mut self.rng, HISTORY_LEN)
            .map(|&i| HistoryMovie {
                title: self.items[i].entry.title.clone(),
                review: self.pick(&["great plot", "i like it", "not great"]).to_string(),
            })
            .collect::<Vec<_>>();
        PersonaSource {
            user_id: format!("toy-user-{id:05}"),
            general_preferences: format!("i like {} and {}", GENRES[first], GENRES[second]),
            history,
            target_attributes: format!("a {} movie", GENRES[genre]),
        }
    }

    fn disclose(&mut self, genre: usize) -> SourceTurn {
        let g = GENRES[genre];
        let text = match self.rng.gen_range(0..3) {
            0 => format!("i want a {g} movie"),
            1 => format!("looking for a {g} movie"),
            _ => format!("i like {g}"),
        };
        plain(Role::User, ActionKind::DiscloseGoal, &text)
    }

    fn recommend(&mut self, item: usize) -> SourceTurn {
        let lead = self.pick(&["try ", "you might like ", "what about "]);
        titled(
            Role::Recommender,
            ActionKind::Recommend,
            lead,
            &self.items[item].entry.title,
        )
    }

    fn choose_item(&mut self, genre: usize, proposed: &[usize]) -> usize {
        let fresh = |i: &usize| !proposed.contains(i);
        let in_genre: Vec<usize> = (0..self.items.len())
            .filter(|&i| self.items[i].genre == genre)
            .filter(fresh)
            .collect();
        let off_genre: Vec<usize> = (0..self.items.len())
            .filter(|&i| self.items[i].genre != genre)
            .filter(fresh)
            .collect();
        let pool = if in_genre.is_empty() || self.rng.gen_bool(OFF_GENRE) {
            off_genre
        } else {
            in_genre
        };
        *pool.choose(&mut self.rng).expect("catalog outlasts the turn cap")
    }

    fn turns(&mut self, genre: usize, gt: usize) -> Vec<SourceTurn> {
        let mut turns = Vec::new();
        let mut disclosed = self.rng.gen_bool(0.5);
        if disclosed {
            turns.push(self.disclose(genre));
        } else {
            let text = self.pick(&["hi", "hello", "hi i want a movie"]);
            turns.push(plain(Role::User, ActionKind::Greeting, text));
        }
        let mut proposed: Vec<usize> = Vec::new();
        while turns.len() < TURN_CAP {
            let rec = if turns.len() == 1 && !disclosed {
                plain(
                    Role::Recommender,
                    ActionKind::Greeting,
                    self.pick(&["hi what do you like", "hello what movie do you want"]),
                )
            } else if !disclosed {
                plain(Role::Recommender, ActionKind::Inquire, "what movie do you like")
            } else if !proposed.is_empty() && self.rng.gen_bool(FOLLOW_UP) {
                plain(Role::Recommender, ActionKind::Inquire, "what do you like more")
            } else {
                let item = self.choose_item(genre, &proposed);
                proposed.push(item);
                self.recommend(item)
            };
            let recommended = rec.text.contains("<recommend>");
            turns.push(rec);
            if turns.len() >= TURN_CAP {
                break;
            }
            let user = if !recommended {
                disclosed = true;
                self.disclose(genre)
            } else {
                let last = *proposed.last().expect("just recommended");
                if last == gt {
                    let text = self.pick(&["great thanks", "perfect i like it", "thanks i want that one"]);
                    plain(Role::User, ActionKind::Accept, text)
                } else if self.items[last].genre != genre {
                    plain(
                        Role::User,
                        ActionKind::Feedback,
                        &format!("no i want a {} movie", GENRES[genre]),
                    )
                } else {
                    let text = self.pick(&["no i have seen it", "not that one", "no thanks"]);
                    plain(Role::User, ActionKind::Feedback, text)
                }
            };
            let accepted = user.text.contains("<accept>");
            turns.push(user);
            if accepted {
                break;
            }
        }
        turns
    }

    /// The shortest grammatical dialogue: goal, ground truth, accept.
    fn minimal(&mut self, genre: usize, gt: usize) -> Vec<SourceTurn> {
        vec![
            plain(
                Role::User,
                ActionKind::DiscloseGoal,
                &format!("i want a {} movie", GENRES[genre]),
            ),
            titled(
                Role::Recommender,
                ActionKind::Recommend,
                "try ",
                &self.items[gt].entry.title,
            ),
            plain(Role::User, ActionKind::Accept, "great thanks"),
        ]
    }
}

/// `n` synthetic dialogues, deterministic in `seed`. Dialogue 0 is always
/// the minimal three-turn exchange.
pub fn generate_synthetic_corpus(seed: u64, n: usize) -> Vec<SourceDialogue> {
    assert!(n >= 1, "corpus size must be at least 1");
    let items = toy_items();
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        items: &items,
    };
    (0..n)
        .map(|i| {
            let genre = b.rng.gen_range(0..GENRES.len());
            let gt = genre * 4 + b.rng.gen_range(0..4);
            let persona = b.persona(i, genre, gt);
            let turns = if i == 0 {
                b.minimal(genre, gt)
            } else {
                b.turns(genre, gt)
            };
            SourceDialogue {
                dialogue_id: format!("toy-{i:05}"),
                persona,
                ground_truth: GroundTruth {
                    item_id: items[gt].entry.item_id.clone(),
                    title: items[gt].entry.title.clone(),
                },
                turns,
            }
        })
        .collect()
}
