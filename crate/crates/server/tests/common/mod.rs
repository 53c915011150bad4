#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use crsim_core::agents::PolicySpec;
use crsim_core::io::write_jsonl;
use crsim_core::persona::{GroundTruth, HistoryMovie, Persona};
use crsim_core::protocol::{ActionKind, Role, Turn};
use crsim_core::record::{
    DialogueOutcome, DialogueRecord, PolicyNames, RecordMode, RecordedTurn, Termination, TurnMeta,
};
use crsim_server::{router, AppState, ServerConfig};

pub fn persona(id: usize) -> Persona {
    let movie = |t: &str| HistoryMovie {
        title: t.into(),
        review: format!("{t} kept me watching"),
    };
    Persona {
        user_id: format!("u{id:03}"),
        general_preferences: "slow thrillers with patient pacing".into(),
        history: [movie("Heat (1995)"), movie("Ronin (1998)"), movie("Thief (1981)")],
        target_attributes: "a heist that goes wrong".into(),
    }
}

/// A short accepted dialogue. `tag` ends up in ids and policy names only.
pub fn record(tag: &str, persona_id: usize, title: &str) -> DialogueRecord {
    let gen = |turn: Turn, policy: &str| RecordedTurn {
        turn,
        meta: TurnMeta {
            policy: policy.into(),
            generated: true,
            ..TurnMeta::recorded()
        },
    };
    let user_policy = format!("{tag}-user-policy");
    let rec_policy = format!("{tag}-rec-policy");
    DialogueRecord {
        dialogue_id: format!("{tag}-dialogue-{persona_id:03}"),
        mode: RecordMode::Simulated,
        persona: persona(persona_id),
        ground_truth: GroundTruth {
            item_id: "m1".into(),
            title: "Heat (1995)".into(),
        },
        policies: PolicyNames {
            user: user_policy.clone(),
            recommender: rec_policy.clone(),
        },
        turns: vec![
            gen(
                Turn::plain(Role::User, ActionKind::Greeting, "Hi there").unwrap(),
                &user_policy,
            ),
            gen(
                Turn::titled(Role::Recommender, ActionKind::Recommend, "Try ", title, ".").unwrap(),
                &rec_policy,
            ),
            gen(
                Turn::plain(Role::User, ActionKind::Accept, "Sounds good").unwrap(),
                &user_policy,
            ),
        ],
        outcome: DialogueOutcome {
            accepted_title: Some(title.into()),
            terminated_by: Termination::Accept,
            error: None,
        },
        seed: 1,
        reference: None,
    }
}

pub fn write_records(dir: &Path, name: &str, records: &[DialogueRecord]) {
    write_jsonl(&dir.join(name), None, records).unwrap();
}

pub struct Harness {
    pub state: Arc<AppState>,
    pub app: Router,
    pub tmp: tempfile::TempDir,
}

pub fn rule_recommenders() -> BTreeMap<String, PolicySpec> {
    let spec: PolicySpec = serde_json::from_value(serde_json::json!({
        "kind": "rule-recommender",
        "candidates": ["Heat (1995)", "Ronin (1998)", "Drive (2011)"],
    }))
    .unwrap();
    BTreeMap::from([("rule".to_string(), spec)])
}

/// Server over a temp data dir with two 60-record files, `sys_a.jsonl` and
/// `sys_b.jsonl`, covering personas 0..60.
pub fn harness() -> Harness {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("records");
    std::fs::create_dir_all(&records).unwrap();
    let a: Vec<_> = (0..60).map(|i| record("sysa", i, "Heat (1995)")).collect();
    let b: Vec<_> = (0..60).rev().map(|i| record("sysb", i, "Drive (2011)")).collect();
    write_records(&records, "sys_a.jsonl", &a);
    write_records(&records, "sys_b.jsonl", &b);
    let config = ServerConfig {
        data_dir: tmp.path().join("data"),
        records_dir: records,
        recommenders: rule_recommenders(),
        ..ServerConfig::default()
    };
    from_config(config, tmp)
}

pub fn from_config(config: ServerConfig, tmp: tempfile::TempDir) -> Harness {
    let state = Arc::new(AppState::new(config).unwrap());
    let app = router(state.clone());
    Harness { state, app, tmp }
}

impl Harness {
    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }

    pub async fn create_session(&self, n_pairs: usize, seed: u64) -> String {
        let (status, body) = self
            .post(
                "/sessions",
                serde_json::json!({
                    "records_a": "sys_a.jsonl",
                    "records_b": "sys_b.jsonl",
                    "n_pairs": n_pairs,
                    "seed": seed,
                    "judge_id": "judge-1",
                }),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }

    pub async fn judge(&self, session: &str, pair: usize, criterion: &str, choice: &str) -> (StatusCode, Value) {
        self.post(
            "/judgments",
            serde_json::json!({
                "session_id": session,
                "pair_index": pair,
                "criterion": criterion,
                "choice": choice,
            }),
        )
        .await
    }
}
