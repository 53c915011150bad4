//! Reference-similarity scoring for single-turn samples.
//!
//! The neural scorer lives outside this crate. [`RemoteSimilarity`] talks to
//! such a service; [`TokenOverlapF1`] is a deterministic local stand-in.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::diversity::tokenize;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("similarity service: {0}")]
    Transport(String),
    #[error("similarity service returned {got} scores for {expected} pairs")]
    CountMismatch { expected: usize, got: usize },
}

pub trait SimilarityProvider: Send + Sync {
    fn name(&self) -> &str;

    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, SimilarityError>;

    fn score(&self, candidate: &str, reference: &str) -> Result<f64, SimilarityError> {
        Ok(self.score_batch(&[(candidate, reference)])?[0])
    }
}

/// Token-level F1 between candidate and reference (multiset overlap).
/// Both empty scores 1, one empty scores 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlapF1;

impl TokenOverlapF1 {
    pub fn f1(candidate: &str, reference: &str) -> f64 {
        let c = tokenize(candidate);
        let r = tokenize(reference);
        if c.is_empty() && r.is_empty() {
            return 1.0;
        }
        if c.is_empty() || r.is_empty() {
            return 0.0;
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &r {
            *counts.entry(t).or_default() += 1;
        }
        let mut overlap = 0usize;
        for t in &c {
            if let Some(n) = counts.get_mut(t.as_str()) {
                if *n > 0 {
                    *n -= 1;
                    overlap += 1;
                }
            }
        }
        if overlap == 0 {
            return 0.0;
        }
        let p = overlap as f64 / c.len() as f64;
        let rc = overlap as f64 / r.len() as f64;
        2.0 * p * rc / (p + rc)
    }
}

impl SimilarityProvider for TokenOverlapF1 {
    fn name(&self) -> &str {
        "token-overlap-f1"
    }

    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, SimilarityError> {
        Ok(pairs.iter().map(|(c, r)| Self::f1(c, r)).collect())
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    candidates: Vec<&'a str>,
    references: Vec<&'a str>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Client for a scoring service: `POST url` with
/// `{"candidates": [...], "references": [...]}`, answered by `{"scores": [...]}`.
pub struct RemoteSimilarity {
    url: String,
    name: String,
    agent: ureq::Agent,
}

impl RemoteSimilarity {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let url = url.into();
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        RemoteSimilarity {
            name: format!("remote:{url}"),
            url,
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl SimilarityProvider for RemoteSimilarity {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, SimilarityError> {
        let req = ScoreRequest {
            candidates: pairs.iter().map(|p| p.0).collect(),
            references: pairs.iter().map(|p| p.1).collect(),
        };
        let resp: ScoreResponse = self
            .agent
            .post(&self.url)
            .send_json(&req)
            .and_then(|r| r.into_body().read_json())
            .map_err(|e| SimilarityError::Transport(e.to_string()))?;
        if resp.scores.len() != pairs.len() {
            return Err(SimilarityError::CountMismatch {
                expected: pairs.len(),
                got: resp.scores.len(),
            });
        }
        Ok(resp.scores)
    }
}
