use std::collections::HashSet;

use crsim_core::metrics::embedding::{EmbeddingCatalog, EmbeddingEntry};
use crsim_core::metrics::winratio::win_ratio_counts;
use crsim_core::metrics::{
    aggregate_outcomes, binomial_two_sided, classify_turns, dist_n, match_score, resolve_title_to_item, win_ratio,
    Judgment, Outcome, OutcomeClass, TitleMode, Winner,
};
use crsim_core::protocol::{ActionKind, Role, Turn};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GT: &str = "Heat (1995)";

/// Definitional oracle over rounds of (proposal is GT, user accepts).
fn oracle(rounds: &[(bool, bool)]) -> (OutcomeClass, bool) {
    match rounds.iter().position(|&(_, accept)| accept) {
        None => (OutcomeClass::Failure, false),
        Some(j) if rounds[j].0 => (OutcomeClass::Success, false),
        Some(j) if rounds[..j].iter().any(|r| r.0) => (OutcomeClass::Failure, true),
        Some(_) => (OutcomeClass::EarlyTermination, false),
    }
}

fn render(rounds: &[(bool, bool)]) -> Vec<Turn> {
    let mut turns = vec![Turn::plain(Role::User, ActionKind::Greeting, "Hi").unwrap()];
    for (i, &(gt, accept)) in rounds.iter().enumerate() {
        let other = format!("Other Film {i} (2000)");
        let title = if gt { GT } else { other.as_str() };
        turns.push(Turn::titled(Role::Recommender, ActionKind::Recommend, "How about ", title, "?").unwrap());
        let action = if accept {
            ActionKind::Accept
        } else {
            ActionKind::Feedback
        };
        turns.push(Turn::plain(Role::User, action, "ok").unwrap());
    }
    turns
}

#[test]
fn outcome_matches_exhaustive_oracle() {
    let mut cases = 0;
    for len in 1..=5u32 {
        for mask in 0..(1u32 << (2 * len)) {
            let rounds: Vec<(bool, bool)> = (0..len)
                .map(|i| (mask >> (2 * i) & 1 == 1, mask >> (2 * i + 1) & 1 == 1))
                .collect();
            let got = classify_turns(&render(&rounds), GT, TitleMode::Strict).unwrap();
            assert_eq!((got.class, got.late_alternative_accept), oracle(&rounds), "{rounds:?}");
            cases += 1;
        }
    }
    assert_eq!(cases, 4 + 16 + 64 + 256 + 1024);
}

#[test]
fn aggregate_matches_hand_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    let classes = [
        OutcomeClass::Success,
        OutcomeClass::EarlyTermination,
        OutcomeClass::Failure,
    ];
    let outcomes: Vec<Outcome> = (0..97)
        .map(|_| Outcome {
            class: classes[rng.gen_range(0..3)],
            late_alternative_accept: false,
        })
        .collect();
    let mut counts = [0usize; 3];
    for o in &outcomes {
        counts[classes.iter().position(|c| *c == o.class).unwrap()] += 1;
    }
    let r = aggregate_outcomes(&outcomes).unwrap();
    assert_eq!((r.n_sr, r.n_et, r.n_fr), (counts[0], counts[1], counts[2]));
    assert_eq!(r.sr, counts[0] as f64 / 97.0);
    assert!((r.sr + r.et + r.fr - 1.0).abs() < 1e-12);
}

/// Independent Dist-n: character filter by hand, n-grams keyed as joined strings.
fn dist_oracle(responses: &[String], n: usize) -> f64 {
    let mut seen = HashSet::new();
    let mut total = 0;
    for r in responses {
        let mut words = Vec::new();
        let mut cur = String::new();
        for ch in r.chars() {
            if ch.is_whitespace() {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            } else if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        if words.len() < n {
            continue;
        }
        for i in 0..=words.len() - n {
            total += 1;
            seen.insert(words[i..i + n].join("\u{1}"));
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

#[test]
fn dist4_matches_oracle_on_random_responses() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let vocab = [
        "the", "a", "Movie", "film,", "great!", "plot", "Actor's", "dark", "fun.", "slow", "épique", "42",
    ];
    let responses: Vec<String> = (0..200)
        .map(|_| {
            (0..rng.gen_range(0..14))
                .map(|_| vocab[rng.gen_range(0..vocab.len())])
                .collect::<Vec<_>>()
                .join(if rng.gen_bool(0.2) { "  " } else { " " })
        })
        .collect();
    for n in 1..=4 {
        assert!((dist_n(&responses, n) - dist_oracle(&responses, n)).abs() < 1e-12);
    }
}

fn catalog(vs: &[(&str, Vec<f64>)]) -> EmbeddingCatalog {
    EmbeddingCatalog::new(
        vs[0].1.len(),
        vs.iter()
            .map(|(id, v)| EmbeddingEntry {
                item_id: id.to_string(),
                title: format!("Title {id}"),
                embedding: v.clone(),
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn match_score_is_scale_invariant(
        a in proptest::collection::vec(-10.0f64..10.0, 4),
        b in proptest::collection::vec(-10.0f64..10.0, 4),
        s in 0.01f64..100.0,
        t in 0.01f64..100.0,
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        let base = match_score(&["a"], "b", &catalog(&[("a", a.clone()), ("b", b.clone())])).unwrap();
        let scaled = catalog(&[
            ("a", a.iter().map(|x| x * s).collect()),
            ("b", b.iter().map(|x| x * t).collect()),
        ]);
        let other = match_score(&["a"], "b", &scaled).unwrap();
        prop_assert!((base - other).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn win_ratio_is_label_symmetric(winners in proptest::collection::vec(0u8..3, 1..60)) {
        let to = |w: u8| [Winner::A, Winner::B, Winner::Tie][w as usize];
        let js: Vec<Judgment> = winners.iter().map(|&w| Judgment { criterion: "c".into(), winner: to(w) }).collect();
        let swapped: Vec<Judgment> =
            js.iter().map(|j| Judgment { criterion: j.criterion.clone(), winner: j.winner.swapped() }).collect();
        let (r, s) = (&win_ratio(&js)[0], &win_ratio(&swapped)[0]);
        prop_assert_eq!(r.p_value, s.p_value);
        match (r.ratio, s.ratio) {
            (Some(x), Some(y)) => prop_assert!((x + y - 1.0).abs() < 1e-12),
            (None, None) => {}
            _ => prop_assert!(false),
        }
    }
}

/// Exact p-value from integer binomial coefficients.
fn binomial_exact(k: u32, n: u32) -> f64 {
    let c = |n: u32, k: u32| (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128);
    let hi = k.max(n - k);
    let tail: u128 = (hi..=n).map(|i| c(n, i)).sum();
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

#[test]
fn binomial_matches_integer_oracle() {
    for n in 1..=60 {
        for k in 0..=n {
            let got = binomial_two_sided(k as usize, n as usize);
            let want = binomial_exact(k, n);
            assert!(
                (got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-15,
                "k={k} n={n}: {got} vs {want}"
            );
        }
    }
    assert!((win_ratio_counts("c", 7, 3).unwrap().1 - 0.34375).abs() < 1e-6);
    assert!((win_ratio_counts("c", 10, 0).unwrap().1 - 0.0019531).abs() < 1e-6);
    assert!((win_ratio_counts("c", 5, 5).unwrap().1 - 1.0).abs() < 1e-6);
}

#[test]
fn title_resolution_answer_key() {
    let titles = [
        ("gwh", "Good Will Hunting (1997)"),
        ("heat", "Heat (1995)"),
        ("heat86", "Heat (1986)"),
        ("ronin", "Ronin (1998)"),
        ("amelie", "Amélie (2001)"),
        ("se7en", "Se7en (1995)"),
        ("alien", "Alien (1979)"),
        ("aliens", "Aliens (1986)"),
        ("up", "Up (2009)"),
        ("her", "Her (2013)"),
    ];
    let c = EmbeddingCatalog::new(
        1,
        titles
            .iter()
            .map(|(id, t)| EmbeddingEntry {
                item_id: id.to_string(),
                title: t.to_string(),
                embedding: vec![1.0],
            })
            .collect(),
    )
    .unwrap();
    // (query, strict answer, lenient answer)
    let key: [(&str, Option<&str>, Option<&str>); 50] = [
        ("good will hunting (1997)", Some("gwh"), Some("gwh")),
        ("Good Will Hunting (1997)", Some("gwh"), Some("gwh")),
        ("GOOD WILL HUNTING (1997)", Some("gwh"), Some("gwh")),
        ("  Good   Will Hunting  (1997) ", Some("gwh"), Some("gwh")),
        ("Good Will Hunting", None, Some("gwh")),
        ("Good Will Hunting (1998)", None, Some("gwh")),
        ("Good Will Huntin (1997)", None, None),
        ("Heat (1995)", Some("heat"), Some("heat")),
        ("heat (1995)", Some("heat"), Some("heat")),
        ("Heat (1986)", Some("heat86"), Some("heat")),
        ("Heat", None, Some("heat")),
        ("Heat (2001)", None, Some("heat")),
        ("Ronin (1998)", Some("ronin"), Some("ronin")),
        ("ronin", None, Some("ronin")),
        ("RONIN  (1998)", Some("ronin"), Some("ronin")),
        ("Ronin 1998", None, None),
        ("Amélie (2001)", Some("amelie"), Some("amelie")),
        ("AMÉLIE (2001)", Some("amelie"), Some("amelie")),
        ("Amelie (2001)", None, None),
        ("Amélie", None, Some("amelie")),
        ("Se7en (1995)", Some("se7en"), Some("se7en")),
        ("se7en (1995)", Some("se7en"), Some("se7en")),
        ("Seven (1995)", None, None),
        ("Alien (1979)", Some("alien"), Some("alien")),
        ("Aliens (1986)", Some("aliens"), Some("aliens")),
        ("Alien (1986)", None, Some("alien")),
        ("aliens", None, Some("aliens")),
        ("Alien 3 (1992)", None, None),
        ("Up (2009)", Some("up"), Some("up")),
        ("up (2009)", Some("up"), Some("up")),
        ("Up", None, Some("up")),
        ("Upgrade (2018)", None, None),
        ("Her (2013)", Some("her"), Some("her")),
        ("her", None, Some("her")),
        ("Her\t(2013)", Some("her"), Some("her")),
        ("Imaginary Film (2020)", None, None),
        ("The Matrix (1999)", None, None),
        ("", None, None),
        ("(1997)", None, None),
        ("Good Will Hunting (1997) ", Some("gwh"), Some("gwh")),
        (" heat  (1995)", Some("heat"), Some("heat")),
        ("Ronin (1998) (1998)", None, None),
        ("Heat(1995)", None, Some("heat")),
        ("Alien (1979", None, None),
        ("Up (2009)!", None, None),
        ("her (2013)", Some("her"), Some("her")),
        ("HER (2014)", None, Some("her")),
        ("se7en", None, Some("se7en")),
        ("Aliens (1987)", None, Some("aliens")),
        ("Good Will Hunting (1997)\n", Some("gwh"), Some("gwh")),
    ];
    for (query, strict, lenient) in key {
        let s = resolve_title_to_item(query, &c, TitleMode::Strict);
        assert_eq!(s.item_id.as_deref(), strict, "strict {query:?}");
        assert_eq!(s.audit.is_some(), strict.is_none(), "strict audit {query:?}");
        let l = resolve_title_to_item(query, &c, TitleMode::Lenient);
        assert_eq!(l.item_id.as_deref(), lenient, "lenient {query:?}");
    }
}
