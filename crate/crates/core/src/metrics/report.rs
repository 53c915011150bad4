//! Batch evaluation over dialogue records.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::diversity::{dist_n, mean_words, TOKENIZATION_VERSION};
use super::embedding::EmbeddingCatalog;
use super::outcome::{aggregate_outcomes, classify_outcome, Outcome};
use super::recommend::{match_score_records, recall_at_1, AuditEntry, MatchGranularity};
use super::similarity::SimilarityProvider;
use super::titles::TitleMode;
use super::MetricError;
use crate::protocol::Role;
use crate::record::{DialogueRecord, RecordMode};

pub struct EvalOptions<'a> {
    pub title_mode: TitleMode,
    pub granularity: MatchGranularity,
    pub catalog: Option<&'a EmbeddingCatalog>,
    pub similarity: Option<&'a dyn SimilarityProvider>,
    /// Restrict text statistics to generated turns of one role.
    pub role: Option<Role>,
    /// Keep records that ended in an agent error.
    pub include_errors: bool,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        EvalOptions {
            title_mode: TitleMode::Strict,
            granularity: MatchGranularity::PerDialogue,
            catalog: None,
            similarity: None,
            role: None,
            include_errors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tokenization: String,
    pub title_mode: TitleMode,
    pub match_granularity: MatchGranularity,
    pub n_records: usize,
    pub n_error_records_excluded: usize,
    /// Records whose outcome could be classified.
    pub n_dialogues: usize,
    /// Multi-turn records with no recommend turn.
    pub n_unevaluable: usize,
    pub sr: Option<f64>,
    pub et: Option<f64>,
    pub fr: Option<f64>,
    pub n_sr: usize,
    pub n_et: usize,
    pub n_fr: usize,
    pub late_alternative_accepts: usize,
    /// Generated turns contributing to the text statistics.
    pub n_turns: usize,
    pub dist4: f64,
    pub mean_words: Option<f64>,
    pub recall_at_1: Option<f64>,
    pub n_recall_turns: usize,
    pub match_score: Option<f64>,
    pub n_match_dialogues: usize,
    pub n_match_excluded: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub match_audit: Vec<AuditEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_provider: Option<String>,
}

fn is_multi_turn(mode: RecordMode) -> bool {
    matches!(mode, RecordMode::Simulated | RecordMode::Replay | RecordMode::Chat)
}

pub fn evaluate(records: &[DialogueRecord], options: &EvalOptions) -> Result<MetricReport, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyBatch);
    }
    let kept: Vec<DialogueRecord> = records
        .iter()
        .filter(|r| options.include_errors || !r.is_error())
        .cloned()
        .collect();
    let n_error_records_excluded = records.len() - kept.len();

    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut n_unevaluable = 0;
    for r in kept.iter().filter(|r| is_multi_turn(r.mode)) {
        match classify_outcome(r, options.title_mode) {
            Ok(o) => outcomes.push(o),
            Err(MetricError::NoRecommendationTurns) => n_unevaluable += 1,
            Err(e) => return Err(e),
        }
    }
    let rates = aggregate_outcomes(&outcomes).ok();

    let texts: Vec<&str> = kept
        .iter()
        .flat_map(|r| {
            r.turns
                .iter()
                .filter(|t| t.meta.generated && options.role.is_none_or(|role| t.turn.role == role))
                .map(|t| t.turn.response_text.as_str())
        })
        .collect();

    let mut hits = 0usize;
    let mut n_recall_turns = 0usize;
    for r in kept.iter().filter(|r| r.mode == RecordMode::RecAtGroundTruth) {
        let Some(turn) = r.generated_turns(Role::Recommender).last() else {
            continue;
        };
        n_recall_turns += 1;
        match recall_at_1(turn, &r.ground_truth.title, options.title_mode) {
            Ok(hit) => hits += hit as usize,
            // A non-recommendation at the ground-truth position is a miss.
            Err(MetricError::NotARecommendTurn) => {}
            Err(e) => return Err(e),
        }
    }

    let matched = options
        .catalog
        .map(|c| match_score_records(&kept, c, options.title_mode, options.granularity))
        .transpose()?;

    let mut similarity = None;
    if let Some(provider) = options.similarity {
        let pairs: Vec<(&str, &str)> = kept
            .iter()
            .filter(|r| r.mode == RecordMode::UserSingleTurn)
            .filter_map(|r| {
                let generated = r.generated_turns(Role::User).last()?;
                Some((generated.response_text.as_str(), r.reference.as_deref()?))
            })
            .collect();
        if !pairs.is_empty() {
            let scores = provider
                .score_batch(&pairs)
                .map_err(|e| MetricError::Similarity(e.to_string()))?;
            similarity = Some(scores.iter().sum::<f64>() / scores.len() as f64);
        }
    }

    Ok(MetricReport {
        tokenization: TOKENIZATION_VERSION.to_string(),
        title_mode: options.title_mode,
        match_granularity: options.granularity,
        n_records: records.len(),
        n_error_records_excluded,
        n_dialogues: outcomes.len(),
        n_unevaluable,
        sr: rates.as_ref().map(|r| r.sr),
        et: rates.as_ref().map(|r| r.et),
        fr: rates.as_ref().map(|r| r.fr),
        n_sr: rates.as_ref().map_or(0, |r| r.n_sr),
        n_et: rates.as_ref().map_or(0, |r| r.n_et),
        n_fr: rates.as_ref().map_or(0, |r| r.n_fr),
        late_alternative_accepts: rates.as_ref().map_or(0, |r| r.late_alternative_accepts),
        n_turns: texts.len(),
        dist4: dist_n(&texts, 4),
        mean_words: mean_words(&texts),
        recall_at_1: (n_recall_turns > 0).then(|| hits as f64 / n_recall_turns as f64),
        n_recall_turns,
        match_score: matched.as_ref().and_then(|m| m.score),
        n_match_dialogues: matched.as_ref().map_or(0, |m| m.n_dialogues),
        n_match_excluded: matched.as_ref().map_or(0, |m| m.n_excluded),
        match_audit: matched.map(|m| m.audit).unwrap_or_default(),
        similarity,
        similarity_provider: similarity.and(options.similarity.map(|p| p.name().to_string())),
    })
}

/// Fixed four-decimal rendering used in tables.
pub fn format_rate(x: f64) -> String {
    format!("{x:.4}")
}

fn cell(x: Option<f64>) -> String {
    x.map(format_rate).unwrap_or_else(|| "-".into())
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows: [(&str, String); 11] = [
            ("SR", cell(self.sr)),
            ("ET", cell(self.et)),
            ("FR", cell(self.fr)),
            ("Dist-4", format_rate(self.dist4)),
            (
                "# Words",
                self.mean_words.map(|w| format!("{w:.2}")).unwrap_or_else(|| "-".into()),
            ),
            ("Recall@1", cell(self.recall_at_1)),
            ("Match Score", cell(self.match_score)),
            ("Similarity", cell(self.similarity)),
            ("dialogues", self.n_dialogues.to_string()),
            ("turns", self.n_turns.to_string()),
            ("records", self.n_records.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<12} {v:>10}");
        }
        let _ = writeln!(
            out,
            "tokenization {}, titles {}, errors excluded {}, unevaluable {}, match excluded {}",
            self.tokenization,
            serde_json::to_string(&self.title_mode)
                .unwrap_or_default()
                .trim_matches('"'),
            self.n_error_records_excluded,
            self.n_unevaluable,
            self.n_match_excluded,
        );
        out
    }
}
