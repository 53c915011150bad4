//! Recall@1, Match Score and title resolution.

use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingCatalog;
use super::titles::{titles_match, TitleMode};
use super::MetricError;
use crate::protocol::{Role, Turn};
use crate::record::DialogueRecord;

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector(None));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn vector<'a>(catalog: &'a EmbeddingCatalog, id: &str) -> Result<&'a [f64], MetricError> {
    let v = &catalog
        .get(id)
        .ok_or_else(|| MetricError::UnknownItem(id.to_string()))?
        .embedding;
    if v.iter().all(|x| *x == 0.0) {
        return Err(MetricError::ZeroVector(Some(id.to_string())));
    }
    Ok(v)
}

/// Mean cosine between each recommended item and the ground truth.
pub fn match_score<S: AsRef<str>>(
    recommended_ids: &[S],
    gt_id: &str,
    catalog: &EmbeddingCatalog,
) -> Result<f64, MetricError> {
    Ok(per_item_scores(recommended_ids, gt_id, catalog)?.iter().sum::<f64>() / recommended_ids.len() as f64)
}

fn per_item_scores<S: AsRef<str>>(
    recommended_ids: &[S],
    gt_id: &str,
    catalog: &EmbeddingCatalog,
) -> Result<Vec<f64>, MetricError> {
    if recommended_ids.is_empty() {
        return Err(MetricError::EmptyRecommendations);
    }
    let gt = vector(catalog, gt_id)?;
    recommended_ids
        .iter()
        .map(|id| cosine(vector(catalog, id.as_ref())?, gt))
        .collect()
}

/// 1 iff the turn recommends the ground-truth title.
pub fn recall_at_1(turn: &Turn, ground_truth_title: &str, mode: TitleMode) -> Result<u8, MetricError> {
    if turn.role != Role::Recommender || !turn.is_recommend() {
        return Err(MetricError::NotARecommendTurn);
    }
    Ok(titles_match(turn.title().unwrap_or_default(), ground_truth_title, mode) as u8)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    /// No catalog title matched.
    Miss,
    /// Several catalog entries matched; the first was used.
    Ambiguous,
    /// The ground-truth id is not in the embedding catalog.
    UnknownGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_id: Option<String>,
    pub title: String,
    pub kind: AuditKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub item_id: Option<String>,
    pub audit: Option<AuditEntry>,
}

pub fn resolve_title_to_item(title: &str, catalog: &EmbeddingCatalog, mode: TitleMode) -> Resolution {
    let hits = catalog.lookup_title(title, mode);
    let audit = |kind, candidates| {
        Some(AuditEntry {
            dialogue_id: None,
            title: title.to_string(),
            kind,
            candidates,
        })
    };
    match hits.as_slice() {
        [] => Resolution {
            item_id: None,
            audit: audit(AuditKind::Miss, Vec::new()),
        },
        [one] => Resolution {
            item_id: Some(one.item_id.clone()),
            audit: None,
        },
        [first, ..] => Resolution {
            item_id: Some(first.item_id.clone()),
            audit: audit(AuditKind::Ambiguous, hits.iter().map(|e| e.item_id.clone()).collect()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchGranularity {
    /// Mean over dialogues of each dialogue's mean turn score.
    #[default]
    PerDialogue,
    /// Mean over all scored turns.
    PerTurn,
}

impl std::str::FromStr for MatchGranularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-dialogue" => Ok(MatchGranularity::PerDialogue),
            "per-turn" => Ok(MatchGranularity::PerTurn),
            other => Err(format!("unknown granularity `{other}` (per-dialogue|per-turn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub score: Option<f64>,
    pub n_dialogues: usize,
    pub n_turns: usize,
    pub n_excluded: usize,
    pub audit: Vec<AuditEntry>,
}

/// Match Score over the generated `recommend` turns of each record.
///
/// A dialogue with any unresolvable title, or whose ground truth is missing
/// from the catalog, is excluded and audited. Records without generated
/// recommendations are skipped silently.
pub fn match_score_records(
    records: &[DialogueRecord],
    catalog: &EmbeddingCatalog,
    mode: TitleMode,
    granularity: MatchGranularity,
) -> Result<MatchSummary, MetricError> {
    let mut dialogue_means = Vec::new();
    let mut turn_scores = Vec::new();
    let mut audit = Vec::new();
    let mut n_excluded = 0;
    for record in records {
        let titles: Vec<&str> = record
            .generated_turns(Role::Recommender)
            .filter(|t| t.is_recommend())
            .filter_map(Turn::title)
            .collect();
        if titles.is_empty() {
            continue;
        }
        let gt_id = &record.ground_truth.item_id;
        if catalog.get(gt_id).is_none() {
            n_excluded += 1;
            audit.push(AuditEntry {
                dialogue_id: Some(record.dialogue_id.clone()),
                title: record.ground_truth.title.clone(),
                kind: AuditKind::UnknownGroundTruth,
                candidates: Vec::new(),
            });
            continue;
        }
        let mut ids = Vec::new();
        let mut missed = false;
        for title in titles {
            let r = resolve_title_to_item(title, catalog, mode);
            if let Some(mut entry) = r.audit {
                entry.dialogue_id = Some(record.dialogue_id.clone());
                audit.push(entry);
            }
            match r.item_id {
                Some(id) => ids.push(id),
                None => missed = true,
            }
        }
        if missed {
            n_excluded += 1;
            continue;
        }
        let scores = per_item_scores(&ids, gt_id, catalog)?;
        dialogue_means.push(scores.iter().sum::<f64>() / scores.len() as f64);
        turn_scores.extend(scores);
    }
    let pool = match granularity {
        MatchGranularity::PerDialogue => &dialogue_means,
        MatchGranularity::PerTurn => &turn_scores,
    };
    let score = (!pool.is_empty()).then(|| pool.iter().sum::<f64>() / pool.len() as f64);
    Ok(MatchSummary {
        score,
        n_dialogues: dialogue_means.len(),
        n_turns: turn_scores.len(),
        n_excluded,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::embedding::EmbeddingEntry;
    use crate::protocol::ActionKind;

    fn catalog() -> EmbeddingCatalog {
        let e = |id: &str, title: &str, v: &[f64]| EmbeddingEntry {
            item_id: id.into(),
            title: title.into(),
            embedding: v.to_vec(),
        };
        EmbeddingCatalog::new(
            2,
            vec![
                e("x", "X (2001)", &[1.0, 0.0]),
                e("y", "Y (2002)", &[0.0, 1.0]),
                e("d", "D (2003)", &[1.0, 1.0]),
                e("z", "Zero", &[0.0, 0.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn analytic_cosines() {
        let c = catalog();
        assert_eq!(match_score(&["x"], "x", &c).unwrap(), 1.0);
        assert_eq!(match_score(&["y"], "x", &c).unwrap(), 0.0);
        assert!((match_score(&["d"], "x", &c).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((match_score(&["x", "y"], "x", &c).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let c = catalog();
        assert_eq!(match_score(&["q"], "x", &c), Err(MetricError::UnknownItem("q".into())));
        assert_eq!(
            match_score(&["z"], "x", &c),
            Err(MetricError::ZeroVector(Some("z".into())))
        );
        let none: [&str; 0] = [];
        assert_eq!(match_score(&none, "x", &c), Err(MetricError::EmptyRecommendations));
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), Err(MetricError::DimensionMismatch(1, 2)));
    }

    #[test]
    fn recall() {
        let t = Turn::titled(
            Role::Recommender,
            ActionKind::Recommend,
            "",
            "good  will hunting (1997)",
            "",
        )
        .unwrap();
        assert_eq!(recall_at_1(&t, "Good Will Hunting (1997)", TitleMode::Strict), Ok(1));
        assert_eq!(recall_at_1(&t, "Good Will Hunting (1998)", TitleMode::Strict), Ok(0));
        assert_eq!(recall_at_1(&t, "Good Will Hunting (1998)", TitleMode::Lenient), Ok(1));
        let q = Turn::plain(Role::Recommender, ActionKind::Inquire, "Which genre?").unwrap();
        assert_eq!(
            recall_at_1(&q, "X", TitleMode::Strict),
            Err(MetricError::NotARecommendTurn)
        );
    }

    #[test]
    fn resolution() {
        let c = catalog();
        assert_eq!(
            resolve_title_to_item("x  (2001)", &c, TitleMode::Strict)
                .item_id
                .as_deref(),
            Some("x")
        );
        let miss = resolve_title_to_item("Imaginary Film", &c, TitleMode::Strict);
        assert_eq!(miss.item_id, None);
        assert_eq!(miss.audit.unwrap().kind, AuditKind::Miss);
        assert_eq!(resolve_title_to_item("X", &c, TitleMode::Strict).item_id, None);
        assert_eq!(
            resolve_title_to_item("X", &c, TitleMode::Lenient).item_id.as_deref(),
            Some("x")
        );
    }
}
