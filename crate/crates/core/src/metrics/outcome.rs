//! Success / early-termination / failure classification of replayed or
//! simulated dialogues.

use serde::{Deserialize, Serialize};

use super::titles::{titles_match, TitleMode};
use super::MetricError;
use crate::protocol::Turn;
use crate::record::DialogueRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    /// The ground-truth item was accepted.
    #[serde(rename = "SR")]
    Success,
    /// Another item was accepted before the ground truth was ever proposed.
    #[serde(rename = "ET")]
    EarlyTermination,
    /// Nothing acceptable was accepted.
    #[serde(rename = "FR")]
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub class: OutcomeClass,
    /// A non-ground-truth item was accepted after the ground truth had been
    /// proposed and passed over. Counted as failure.
    pub late_alternative_accept: bool,
}

impl Outcome {
    fn of(class: OutcomeClass) -> Outcome {
        Outcome {
            class,
            late_alternative_accept: false,
        }
    }
}

/// Classifies a turn sequence against the ground-truth title.
///
/// Only the first user accept that follows a recommendation counts.
pub fn classify_turns<'a>(
    turns: impl IntoIterator<Item = &'a Turn>,
    ground_truth_title: &str,
    mode: TitleMode,
) -> Result<Outcome, MetricError> {
    let mut any_recommend = false;
    let mut gt_proposed = false;
    let mut last_title: Option<&str> = None;
    for turn in turns {
        if turn.is_recommend() {
            any_recommend = true;
            let title = turn.title().unwrap_or_default();
            if titles_match(title, ground_truth_title, mode) {
                gt_proposed = true;
            }
            last_title = Some(title);
        } else if turn.is_accept() {
            let Some(accepted) = last_title else { continue };
            return Ok(if titles_match(accepted, ground_truth_title, mode) {
                Outcome::of(OutcomeClass::Success)
            } else if !gt_proposed {
                Outcome::of(OutcomeClass::EarlyTermination)
            } else {
                Outcome {
                    class: OutcomeClass::Failure,
                    late_alternative_accept: true,
                }
            });
        }
    }
    if any_recommend {
        Ok(Outcome::of(OutcomeClass::Failure))
    } else {
        Err(MetricError::NoRecommendationTurns)
    }
}

pub fn classify_outcome(record: &DialogueRecord, mode: TitleMode) -> Result<Outcome, MetricError> {
    classify_turns(record.plain_turns(), &record.ground_truth.title, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRates {
    pub sr: f64,
    pub et: f64,
    pub fr: f64,
    pub n: usize,
    pub n_sr: usize,
    pub n_et: usize,
    pub n_fr: usize,
    pub late_alternative_accepts: usize,
}

pub fn aggregate_outcomes(outcomes: &[Outcome]) -> Result<OutcomeRates, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::EmptyBatch);
    }
    let count = |c| outcomes.iter().filter(|o| o.class == c).count();
    let (n_sr, n_et, n_fr) = (
        count(OutcomeClass::Success),
        count(OutcomeClass::EarlyTermination),
        count(OutcomeClass::Failure),
    );
    let n = outcomes.len();
    Ok(OutcomeRates {
        sr: n_sr as f64 / n as f64,
        et: n_et as f64 / n as f64,
        fr: n_fr as f64 / n as f64,
        n,
        n_sr,
        n_et,
        n_fr,
        late_alternative_accepts: outcomes.iter().filter(|o| o.late_alternative_accept).count(),
    })
}
