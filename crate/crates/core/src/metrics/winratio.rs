//! Pairwise preference aggregation with an exact two-sided binomial test.

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Significance threshold for the per-criterion marker.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

impl Winner {
    pub fn swapped(self) -> Winner {
        match self {
            Winner::A => Winner::B,
            Winner::B => Winner::A,
            Winner::Tie => Winner::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub criterion: String,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: String,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// Total judgments including ties.
    pub n: usize,
    /// `None` when every judgment was a tie.
    pub ratio: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

/// Two-sided exact binomial p-value for `k` successes in `n` trials at p = 1/2.
pub fn binomial_two_sided(k: usize, n: usize) -> f64 {
    assert!(k <= n, "k must not exceed n");
    if n == 0 {
        return 1.0;
    }
    let tail_start = k.max(n - k);
    // ln C(n, i) accumulated incrementally; terms summed in ascending order.
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut ln_c = 0.0;
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= tail_start {
            terms.push((ln_c - ln2n).exp());
        }
    }
    terms.sort_by(|a, b| a.total_cmp(b));
    (2.0 * terms.iter().sum::<f64>()).min(1.0)
}

/// Ratio and p-value for one criterion's non-tie counts.
pub fn win_ratio_counts(criterion: &str, wins_a: usize, wins_b: usize) -> Result<(f64, f64), MetricError> {
    let n = wins_a + wins_b;
    if n == 0 {
        return Err(MetricError::AllTies(criterion.to_string()));
    }
    Ok((wins_a as f64 / n as f64, binomial_two_sided(wins_a, n)))
}

/// Per-criterion results, in order of first appearance.
pub fn win_ratio(judgments: &[Judgment]) -> Vec<CriterionResult> {
    let mut order: Vec<&str> = Vec::new();
    for j in judgments {
        if !order.contains(&j.criterion.as_str()) {
            order.push(&j.criterion);
        }
    }
    order
        .into_iter()
        .map(|criterion| {
            let of = |w| {
                judgments
                    .iter()
                    .filter(|j| j.criterion == criterion && j.winner == w)
                    .count()
            };
            let (wins_a, wins_b, ties) = (of(Winner::A), of(Winner::B), of(Winner::Tie));
            let stats = win_ratio_counts(criterion, wins_a, wins_b).ok();
            CriterionResult {
                criterion: criterion.to_string(),
                wins_a,
                wins_b,
                ties,
                n: wins_a + wins_b + ties,
                ratio: stats.map(|s| s.0),
                p_value: stats.map(|s| s.1),
                significant: stats.is_some_and(|s| s.1 < ALPHA),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        assert_eq!(win_ratio_counts("c", 7, 3).unwrap().0, 0.7);
        assert!((binomial_two_sided(7, 10) - 0.34375).abs() < 1e-12);
        assert!((binomial_two_sided(10, 10) - 0.001953125).abs() < 1e-12);
        assert_eq!(binomial_two_sided(5, 10), 1.0);
        assert_eq!(win_ratio_counts("c", 0, 0), Err(MetricError::AllTies("c".into())));
    }

    #[test]
    fn aggregation() {
        let mut js = Vec::new();
        for (c, w, k) in [
            ("fluency", Winner::A, 10),
            ("fluency", Winner::Tie, 2),
            ("overall", Winner::Tie, 3),
        ] {
            for _ in 0..k {
                js.push(Judgment {
                    criterion: c.into(),
                    winner: w,
                });
            }
        }
        let r = win_ratio(&js);
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].n, r[0].ties, r[0].ratio), (12, 2, Some(1.0)));
        assert!(r[0].significant);
        assert_eq!((r[1].ratio, r[1].significant), (None, false));
    }
}
