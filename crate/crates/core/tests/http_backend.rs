use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use crsim_core::agents::{
    generate_turn, AgentError, AgentPolicy, CompletionEndpointConfig, HttpPolicy, RoleView, TraceReplayPolicy,
    TurnContext,
};
use crsim_core::persona::{HistoryMovie, Persona};
use crsim_core::protocol::{ActionKind, Role};

/// Serves canned `(status, body)` replies in order, one per connection, and
/// records each request body.
fn stub(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(String::from_utf8(buf).unwrap());
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn completion(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 5}
    })
    .to_string()
}

fn persona() -> Persona {
    let m = |t: &str| HistoryMovie {
        title: t.into(),
        review: "Solid.".into(),
    };
    Persona {
        user_id: "u".into(),
        general_preferences: "Thrillers.".into(),
        history: [m("Heat (1995)"), m("Ronin (1998)"), m("Drive (2011)")],
        target_attributes: "a heist film".into(),
    }
}

fn config(url: &str) -> CompletionEndpointConfig {
    CompletionEndpointConfig {
        backoff_base_ms: 5,
        timeout_ms: 5_000,
        ..CompletionEndpointConfig::new(url, "stub-model")
    }
}

const GREETING: &str = "<action><greeting></action><response>Hello there!</response>";

#[test]
fn retries_a_503_then_succeeds() {
    let (url, seen) = stub(vec![(503, "{}".into()), (200, completion(GREETING))]);
    let policy = HttpPolicy::new(config(&url)).unwrap();
    let p = persona();
    let ctx = TurnContext {
        view: RoleView::User(&p),
        history: &[],
        dialogue_id: "d",
        seed: 0,
    };
    let t = generate_turn(&policy, &ctx).unwrap();
    assert_eq!(t.turn.action, ActionKind::Greeting);
    assert_eq!(t.meta.retry_count, 1);
    assert!(t.meta.latency_ms.is_some());
    assert_eq!(t.meta.usage.unwrap().completion_tokens, 5);
    let bodies = seen.lock().unwrap();
    let req: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
    assert_eq!(req["model"], "stub-model");
    assert_eq!(req["temperature"], 0.7);
    assert_eq!(req["max_tokens"], 256);
}

#[test]
fn exhausted_retries_are_backend_unavailable() {
    let (url, _) = stub(vec![(500, "{}".into()), (502, "{}".into()), (503, "{}".into())]);
    let policy = HttpPolicy::new(CompletionEndpointConfig {
        max_retries: 2,
        ..config(&url)
    })
    .unwrap();
    let p = persona();
    let ctx = TurnContext {
        view: RoleView::User(&p),
        history: &[],
        dialogue_id: "d",
        seed: 0,
    };
    match generate_turn(&policy, &ctx) {
        Err(AgentError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = stub(vec![(400, "{\"error\":\"bad\"}".into()), (200, completion(GREETING))]);
    let policy = HttpPolicy::new(config(&url)).unwrap();
    let p = persona();
    let ctx = TurnContext {
        view: RoleView::User(&p),
        history: &[],
        dialogue_id: "d",
        seed: 0,
    };
    assert!(matches!(
        generate_turn(&policy, &ctx),
        Err(AgentError::BackendUnavailable { attempts: 1, .. })
    ));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn format_violation_reprompts_once() {
    let bad = "<action><purchase></action><response>buy it</response>";
    let (url, seen) = stub(vec![(200, completion(bad)), (200, completion(GREETING))]);
    let policy = HttpPolicy::new(config(&url)).unwrap();
    let p = persona();
    let ctx = TurnContext {
        view: RoleView::User(&p),
        history: &[],
        dialogue_id: "d",
        seed: 0,
    };
    let t = generate_turn(&policy, &ctx).unwrap();
    assert!(t.meta.reprompted);
    let second: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[1]).unwrap();
    let messages = second["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 3);
    assert_eq!(messages[1]["content"], bad);

    let (url, _) = stub(vec![(200, completion(bad)), (200, completion(bad))]);
    let policy = HttpPolicy::new(config(&url)).unwrap();
    assert!(matches!(
        generate_turn(&policy, &ctx),
        Err(AgentError::PersistentFormatViolation { .. })
    ));
}

#[test]
fn trace_replays_offline() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let (url, _) = stub(vec![(200, completion(GREETING))]);
    let live = HttpPolicy::new(CompletionEndpointConfig {
        trace_path: Some(trace.clone()),
        ..config(&url)
    })
    .unwrap();
    let p = persona();
    let ctx = TurnContext {
        view: RoleView::User(&p),
        history: &[],
        dialogue_id: "d",
        seed: 0,
    };
    let a = generate_turn(&live, &ctx).unwrap();
    drop(live);
    let replay = TraceReplayPolicy::load("replay", &trace).unwrap();
    assert_eq!(replay.len(), 1);
    let b = generate_turn(&replay, &ctx).unwrap();
    assert_eq!(a.turn, b.turn);
    assert_eq!(b.meta.latency_ms, None);

    let rec = persona().public();
    let other = TurnContext {
        view: RoleView::Recommender(&rec),
        history: &[],
        dialogue_id: "d",
        seed: 0,
    };
    assert!(matches!(
        replay.complete(&other, None),
        Err(AgentError::TraceMiss { .. })
    ));
    assert_eq!(other.role(), Role::Recommender);
}

#[test]
fn missing_token_variable_is_a_config_error() {
    let c = CompletionEndpointConfig {
        api_key_env: Some("CRSIM_TEST_TOKEN_THAT_IS_NOT_SET".into()),
        ..config("http://127.0.0.1:9")
    };
    assert!(matches!(HttpPolicy::new(c), Err(AgentError::Config(_))));
}
