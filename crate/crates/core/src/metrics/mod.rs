//! Automatic metrics over dialogue records.

pub mod diversity;
pub mod embedding;
pub mod outcome;
pub mod recommend;
pub mod report;
pub mod similarity;
pub mod titles;
pub mod winratio;

use thiserror::Error;

pub use diversity::{dist_n, mean_words, tokenize, word_count, TOKENIZATION_VERSION};
pub use embedding::{CatalogError, EmbeddingCatalog, EmbeddingEntry};
pub use outcome::{aggregate_outcomes, classify_outcome, classify_turns, Outcome, OutcomeClass, OutcomeRates};
pub use recommend::{cosine, match_score, recall_at_1, resolve_title_to_item, MatchGranularity, Resolution};
pub use report::{evaluate, EvalOptions, MetricReport};
pub use similarity::{RemoteSimilarity, SimilarityError, SimilarityProvider, TokenOverlapF1};
pub use titles::{normalize_title, titles_match, TitleMode};
pub use winratio::{binomial_two_sided, win_ratio, CriterionResult, Judgment, Winner};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("dialogue has no recommend turns")]
    NoRecommendationTurns,
    #[error("empty batch")]
    EmptyBatch,
    #[error("evaluated turn is not a recommender `recommend` turn")]
    NotARecommendTurn,
    #[error("item `{0}` not in embedding catalog")]
    UnknownItem(String),
    #[error("cosine of a zero vector{}", .0.as_deref().map(|id| format!(" (item `{id}`)")).unwrap_or_default())]
    ZeroVector(Option<String>),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no recommendations to score")]
    EmptyRecommendations,
    #[error("criterion `{0}` has only ties")]
    AllTies(String),
    #[error("{0}")]
    Similarity(String),
}
