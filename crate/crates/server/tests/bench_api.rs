mod common;

use axum::http::StatusCode;
use serde_json::{json, Value};

use common::{harness, record, write_records, Harness};
use crsim_server::Criterion;

const CRITERIA: [&str; 6] = [
    "user control",
    "expertise",
    "specificity of preferences",
    "relevance",
    "conversational flow",
    "consistency",
];

async fn a_on_left(h: &Harness, session: &str) -> Vec<bool> {
    h.state
        .bench
        .session(session)
        .unwrap()
        .pairs
        .iter()
        .map(|p| p.a_on_left)
        .collect()
}

fn side_of_a(a_left: bool) -> &'static str {
    if a_left {
        "left"
    } else {
        "right"
    }
}

fn side_of_b(a_left: bool) -> &'static str {
    side_of_a(!a_left)
}

fn criterion<'a>(results: &'a Value, label: &str) -> &'a Value {
    results["criteria"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["label"] == label)
        .unwrap()
}

#[tokio::test]
async fn fifty_pairs_are_persona_matched_and_blinded() {
    let h = harness();
    let id = h.create_session(50, 7).await;
    let (status, summary) = h.get(&format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["n_pairs"], 50);
    assert_eq!(summary["next_pair"], 0);
    assert_eq!(summary["criteria"].as_array().unwrap().len(), 6);

    let session = h.state.bench.session(&id).unwrap();
    let mut lefts = 0;
    for (i, pair) in session.pairs.iter().enumerate() {
        assert_eq!(pair.dialogue_a.persona, pair.dialogue_b.persona);
        lefts += pair.a_on_left as usize;
        let (status, view) = h.get(&format!("/sessions/{id}/pairs/{i}")).await;
        assert_eq!(status, StatusCode::OK);
        let text = view.to_string();
        for secret in ["sysa", "sysb", "sys_a", "sys_b", "policy", "dialogue_id", "a_on_left"] {
            assert!(!text.contains(secret), "pair {i} leaks `{secret}`: {text}");
        }
        assert!(view.get("target_attributes").is_none() || view["persona"]["target_attributes"].is_string());
        // The shown sides are the stored assignment.
        let left_title = view["left"][1]["title"].as_str().unwrap();
        let a_title = "Heat (1995)";
        assert_eq!(left_title == a_title, pair.a_on_left);
    }
    // Side assignment is randomized, not constant.
    assert!(lefts > 10 && lefts < 40, "{lefts}");
}

#[tokio::test]
async fn same_seed_gives_the_same_pairing() {
    let h = harness();
    let s1 = h.state.bench.session(&h.create_session(20, 99).await).unwrap();
    let s2 = h.state.bench.session(&h.create_session(20, 99).await).unwrap();
    let s3 = h.state.bench.session(&h.create_session(20, 100).await).unwrap();
    assert_ne!(s1.session_id, s2.session_id);
    assert_eq!(s1.pairs, s2.pairs);
    assert_ne!(s1.pairs, s3.pairs);
}

#[tokio::test]
async fn session_creation_errors() {
    let h = harness();
    let body = |n: usize, a: &str| json!({"records_a": a, "records_b": "sys_b.jsonl", "n_pairs": n, "seed": 1, "judge_id": "j"});
    let (status, err) = h.post("/sessions", body(0, "sys_a.jsonl")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "InvalidPairCount");

    let (status, err) = h.post("/sessions", body(61, "sys_a.jsonl")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "InsufficientMatchedPairs");

    // Only personas present in both files count.
    let few: Vec<_> = (55..70).map(|i| record("sysc", i, "Heat (1995)")).collect();
    write_records(&h.state.config.records_dir, "few.jsonl", &few);
    let (status, err) = h.post("/sessions", body(6, "few.jsonl")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{err}");
    assert!(err["message"].as_str().unwrap().contains("only 5"), "{err}");
    let (status, _) = h.post("/sessions", body(5, "few.jsonl")).await;
    assert_eq!(status, StatusCode::CREATED);

    let (status, err) = h.post("/sessions", body(5, "../secret.jsonl")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");
    let (status, _) = h.post("/sessions", body(5, "missing.jsonl")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn judgment_validation() {
    let h = harness();
    let id = h.create_session(3, 1).await;
    let (status, ack) = h.judge(&id, 0, "relevance", "left").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack, json!({"seq": 0, "replaced": false}));

    let (status, err) = h.judge(&id, 0, "naturalness", "left").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "InvalidCriterion");

    let (status, err) = h.judge("s-nope", 0, "relevance", "left").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "UnknownSession");

    let (status, err) = h.judge(&id, 3, "relevance", "left").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "InvalidPairIndex");

    let (status, _) = h.judge(&id, 0, "relevance", "both").await;
    assert!(status.is_client_error());

    let (status, _) = h.get(&format!("/sessions/{id}/pairs/9")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = h.get("/sessions/s-nope/pairs/0").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn rejudging_replaces_with_an_audit_trail() {
    let h = harness();
    let id = h.create_session(2, 5).await;
    h.judge(&id, 1, "expertise", "left").await;
    let (_, ack) = h.judge(&id, 1, "Expertise", "tie").await;
    assert_eq!(ack, json!({"seq": 1, "replaced": true}));

    let (_, view) = h.get(&format!("/sessions/{id}/pairs/1")).await;
    assert_eq!(view["judgments"], json!({"expertise": "tie"}));

    let (_, audit) = h.get(&format!("/sessions/{id}/audit")).await;
    let audit = audit.as_array().unwrap();
    assert_eq!(audit.len(), 2);
    assert_eq!(audit[0]["choice"], "left");
    assert_eq!(audit[1]["choice"], "tie");
    assert_eq!(audit[1]["replaces"], 0);
    assert_eq!(audit[1]["judge_id"], "judge-1");

    let (_, results) = h.get(&format!("/results?session={id}")).await;
    assert_eq!(results["n_judgments"], 1);
    assert_eq!(criterion(&results, "expertise")["ties"], 1);
}

#[tokio::test]
async fn three_hundred_judgments_give_complete_coverage() {
    let h = harness();
    let id = h.create_session(50, 11).await;
    for pair in 0..50 {
        for (k, c) in CRITERIA.iter().enumerate() {
            let choice = ["left", "right", "tie"][(pair + k) % 3];
            let (status, _) = h.judge(&id, pair, c, choice).await;
            assert_eq!(status, StatusCode::OK);
        }
        if pair == 24 {
            let (_, summary) = h.get(&format!("/sessions/{id}")).await;
            assert_eq!(summary["next_pair"], 25);
        }
    }
    let (_, summary) = h.get(&format!("/sessions/{id}")).await;
    assert_eq!(summary["n_judgments"], 300);
    assert_eq!(summary["next_pair"], Value::Null);
    let (status, results) = h.get(&format!("/results?session={id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(results["n_judgments"], 300);
    assert_eq!(results["expected_judgments"], 300);
    assert_eq!(results["complete"], true);
    let total: u64 = results["criteria"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["n"].as_u64().unwrap())
        .sum();
    assert_eq!(total, 300);
}

#[tokio::test]
async fn seven_three_split_is_not_significant() {
    let h = harness();
    let id = h.create_session(10, 3).await;
    let sides = a_on_left(&h, &id).await;
    for (pair, &a_left) in sides.iter().enumerate() {
        let choice = if pair < 7 { side_of_a(a_left) } else { side_of_b(a_left) };
        h.judge(&id, pair, "relevance", choice).await;
    }
    let (_, results) = h.get(&format!("/results?session={id}")).await;
    let r = criterion(&results, "relevance");
    assert_eq!((r["wins_a"].as_u64(), r["wins_b"].as_u64()), (Some(7), Some(3)));
    assert!((r["ratio"].as_f64().unwrap() - 0.7).abs() < 1e-12);
    assert!((r["p_value"].as_f64().unwrap() - 0.34375).abs() < 1e-12, "{r}");
    assert_eq!(r["significant"], false);
    assert_eq!(results["system_a"], "sys_a.jsonl");
    assert!(results["test"].as_str().unwrap().contains("binomial"));
    assert_eq!(results["alpha"], 0.05);
    assert_eq!(results["complete"], false);
    // Unjudged criteria are reported, but undefined.
    assert_eq!(criterion(&results, "expertise")["ratio"], Value::Null);
}

#[tokio::test]
async fn ten_zero_is_significant_and_all_ties_is_undefined() {
    let h = harness();
    let id = h.create_session(10, 4).await;
    let sides = a_on_left(&h, &id).await;
    for (pair, &a_left) in sides.iter().enumerate() {
        h.judge(&id, pair, "consistency", side_of_a(a_left)).await;
        h.judge(&id, pair, "user control", "tie").await;
    }
    let (_, results) = h.get("/results").await;
    let r = criterion(&results, "consistency");
    assert_eq!(r["ratio"], 1.0);
    let p = r["p_value"].as_f64().unwrap();
    assert!((p - 2.0 / 1024.0).abs() < 1e-12, "{p}");
    assert_eq!(r["significant"], true);

    let t = criterion(&results, "user control");
    assert_eq!(t["ties"], 10);
    assert_eq!(t["ratio"], Value::Null);
    assert_eq!(t["p_value"], Value::Null);
    assert_eq!(t["significant"], false);
}

#[tokio::test]
async fn deblinding_matches_the_assignment_table() {
    let h = harness();
    let id = h.create_session(30, 21).await;
    // Always pick the left dialogue: A wins exactly where A sat on the left.
    for pair in 0..30 {
        h.judge(&id, pair, "conversational flow", "left").await;
    }
    let expected_a = a_on_left(&h, &id).await.iter().filter(|&&l| l).count() as u64;
    let (_, results) = h.get(&format!("/results?session={id}")).await;
    let r = criterion(&results, "conversational flow");
    assert_eq!(r["wins_a"].as_u64().unwrap(), expected_a);
    assert_eq!(r["wins_b"].as_u64().unwrap(), 30 - expected_a);
}

#[tokio::test]
async fn results_need_a_judgment() {
    let h = harness();
    let (status, err) = h.get("/results").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "NoJudgments");
    let id = h.create_session(2, 0).await;
    let (status, err) = h.get(&format!("/results?session={id}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "NoJudgments");
    let (status, _) = h.get("/results?session=s-missing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn results_aggregate_across_sessions() {
    let h = harness();
    let s1 = h.create_session(4, 1).await;
    let s2 = h.create_session(4, 2).await;
    for id in [&s1, &s2] {
        let sides = a_on_left(&h, id).await;
        for (pair, &a_left) in sides.iter().enumerate() {
            h.judge(id, pair, "expertise", side_of_a(a_left)).await;
        }
    }
    let (_, all) = h.get("/results").await;
    assert_eq!(all["sessions"].as_array().unwrap().len(), 2);
    assert_eq!(criterion(&all, "expertise")["wins_a"], 8);
}

#[tokio::test]
async fn judgments_survive_a_restart() {
    let h = harness();
    let id = h.create_session(5, 8).await;
    h.judge(&id, 0, "relevance", "left").await;
    h.judge(&id, 0, "relevance", "right").await;
    h.judge(&id, 4, "consistency", "tie").await;
    let (_, before) = h.get(&format!("/results?session={id}")).await;

    let restarted = common::from_config(h.state.config.clone(), h.tmp);
    let (_, audit) = restarted.get(&format!("/sessions/{id}/audit")).await;
    assert_eq!(audit.as_array().unwrap().len(), 3);
    let (_, after) = restarted.get(&format!("/results?session={id}")).await;
    assert_eq!(before, after);
    let (_, ack) = restarted.judge(&id, 0, "relevance", "tie").await;
    assert_eq!(ack, json!({"seq": 3, "replaced": true}));
    // No temp files are left behind next to the log.
    let dir = restarted.state.config.data_dir.join("sessions").join(&id);
    let names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().all(|n| !n.ends_with(".tmp")), "{names:?}");
}

#[tokio::test]
async fn concurrent_judgments_are_all_kept() {
    let h = std::sync::Arc::new(harness());
    let id = h.create_session(50, 2).await;
    let mut tasks = Vec::new();
    for pair in 0..50 {
        let h = h.clone();
        let id = id.clone();
        tasks.push(tokio::spawn(async move {
            for c in CRITERIA {
                assert_eq!(h.judge(&id, pair, c, "tie").await.0, StatusCode::OK);
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let (_, audit) = h.get(&format!("/sessions/{id}/audit")).await;
    let seqs: Vec<u64> = audit
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["seq"].as_u64().unwrap())
        .collect();
    assert_eq!(seqs, (0..300).collect::<Vec<_>>());
    let on_disk = std::fs::read_to_string(
        h.state
            .config
            .data_dir
            .join("sessions")
            .join(&id)
            .join("judgments.jsonl"),
    )
    .unwrap();
    assert_eq!(on_disk.lines().count(), 300);
}

#[tokio::test]
async fn listing_endpoints() {
    let h = harness();
    let (_, criteria) = h.get("/criteria").await;
    let labels: Vec<&str> = criteria
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, CRITERIA);
    assert_eq!(Criterion::ALL.len(), 6);
    let (_, records) = h.get("/records").await;
    assert_eq!(records, json!(["sys_a.jsonl", "sys_b.jsonl"]));
    h.create_session(1, 0).await;
    let (_, sessions) = h.get("/sessions").await;
    assert_eq!(sessions.as_array().unwrap().len(), 1);
    let (status, health) = h.get("/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
}

#[tokio::test]
async fn static_bundle_is_served_as_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let ui = tmp.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>bench</html>").unwrap();
    std::fs::write(ui.join("app.js"), "console.log(1)").unwrap();
    let config = crsim_server::ServerConfig {
        data_dir: tmp.path().join("data"),
        static_dir: Some(ui),
        ..Default::default()
    };
    let h = common::from_config(config, tmp);
    let (status, body) = h.get("/app.js").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "console.log(1)");
    let (status, body) = h.get("/judge/s-1").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "<html>bench</html>");
    let (status, _) = h.get("/health").await;
    assert_eq!(status, StatusCode::OK);
}
