mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::*;
use tsrule::llm::{
    append_transcript, read_transcript, AgentRole, AuthStyle, BackendKind, ChatBackend, Gateway, HttpBackend,
    HttpConfig, MockScript, RenderedPrompt, RetryPolicy,
};
use tsrule::Error;

struct Canned {
    status: u16,
    headers: &'static str,
    body: String,
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 7},
    })
    .to_string()
}

#[derive(Debug)]
struct Seen {
    head: String,
    body: String,
}

/// Serves one canned response per connection, in order.
fn serve(responses: Vec<Canned>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for canned in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let _ = tx.send(Seen { head, body: String::from_utf8(body).unwrap() });
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n{}\r\n{}",
                canned.status,
                canned.body.len(),
                canned.headers,
                canned.body
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, rx)
}

fn backend(url: String, attempts: u32) -> HttpBackend {
    HttpBackend::new(HttpConfig {
        endpoint: url,
        model: "test-model".into(),
        api_key: Some("secret".into()),
        auth: AuthStyle::Bearer,
        request_timeout: Duration::from_secs(5),
        retry: RetryPolicy {
            max_attempts: attempts,
            base_delay: Duration::from_millis(10),
            max_delay: Duration::from_millis(1500),
        },
    })
}

fn prompt() -> RenderedPrompt {
    RenderedPrompt { system: "sys".into(), user: "usr".into() }
}

fn failure(status: u16) -> Canned {
    Canned { status, headers: "", body: "{\"error\": \"busy\"}".into() }
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let (url, seen) = serve(vec![failure(429), failure(429), Canned { status: 200, headers: "", body: ok_body("hello") }]);
    let gateway = Gateway::new(Arc::new(backend(url, 5)));
    let exchange = gateway.complete(AgentRole::Detection, &prompt()).unwrap();
    assert_eq!(exchange.response, "hello");
    assert_eq!((exchange.input_tokens, exchange.output_tokens), (11, 7));
    assert_eq!(exchange.backend, BackendKind::Http);
    assert_eq!(exchange.temperature, 1.0);
    let requests: Vec<Seen> = seen.try_iter().collect();
    assert_eq!(requests.len(), 3);
    let body: serde_json::Value = serde_json::from_str(&requests[0].body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["content"], "sys");
    assert_eq!(body["messages"][1]["role"], "user");
    assert!(requests[0].head.to_ascii_lowercase().contains("authorization: bearer secret"));
}

#[test]
fn gives_up_after_five_server_errors() {
    let (url, seen) = serve((0..6).map(|_| failure(500)).collect());
    let err = backend(url, 5).send(&tsrule::llm::ChatRequest {
        role: AgentRole::Review,
        system: String::new(),
        user: "u".into(),
        temperature: 0.0,
        max_tokens: 8,
    });
    assert!(matches!(err, Err(Error::Gateway(_))));
    thread::sleep(Duration::from_millis(50));
    assert_eq!(seen.try_iter().count(), 5);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![failure(400), failure(400)]);
    let gateway = Gateway::new(Arc::new(backend(url, 5)));
    let err = gateway.complete(AgentRole::Repair, &prompt()).unwrap_err();
    assert_eq!(err.kind(), tsrule::ErrorKind::Gateway);
    thread::sleep(Duration::from_millis(50));
    assert_eq!(seen.try_iter().count(), 1);
}

#[test]
fn honours_retry_after() {
    let (url, _seen) = serve(vec![
        Canned { status: 503, headers: "Retry-After: 1\r\n", body: String::new() },
        Canned { status: 200, headers: "", body: ok_body("late") },
    ]);
    let started = Instant::now();
    let reply = backend(url, 3).send(&tsrule::llm::ChatRequest {
        role: AgentRole::Detection,
        system: String::new(),
        user: "u".into(),
        temperature: 1.0,
        max_tokens: 8,
    });
    assert_eq!(reply.unwrap().text, "late");
    assert!(started.elapsed() >= Duration::from_millis(950));
}

#[test]
fn mock_replays_and_is_strict() {
    let script = MockScript::new()
        .push(AgentRole::Detection, reply("a"))
        .push(AgentRole::Detection, reply("b"))
        .push(AgentRole::Review, "r");
    let (mock, gateway) = mock_gateway(script);
    assert_eq!(gateway.backend_kind(), BackendKind::Mock);
    assert_eq!(gateway.complete(AgentRole::Detection, &prompt()).unwrap().response, reply("a"));
    assert!(matches!(gateway.finish(), Err(Error::MockUnconsumed { .. })));
    assert!(matches!(gateway.complete(AgentRole::Repair, &prompt()), Err(Error::MockUnderrun { role: AgentRole::Repair, index: 0 })));
    gateway.complete(AgentRole::Detection, &prompt()).unwrap();
    gateway.complete(AgentRole::Review, &prompt()).unwrap();
    assert_eq!(mock.calls(AgentRole::Detection), 2);
    gateway.finish().unwrap();
    assert!(matches!(gateway.complete(AgentRole::Detection, &prompt()), Err(Error::MockUnderrun { index: 2, .. })));
}

#[test]
fn mock_script_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("script.json");
    let script = script_from(vec![reply("x")], vec!["r".into()], vec![]);
    script.save(&path).unwrap();
    assert_eq!(MockScript::load(&path).unwrap(), script);
}

#[test]
fn transcripts_append_as_json_lines() {
    let (_, gateway) = mock_gateway(MockScript::new().push(AgentRole::Detection, "one").push(AgentRole::Detection, "two"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let a = gateway.complete(AgentRole::Detection, &prompt()).unwrap();
    append_transcript(&path, std::slice::from_ref(&a)).unwrap();
    let b = gateway.complete(AgentRole::Detection, &prompt()).unwrap();
    append_transcript(&path, std::slice::from_ref(&b)).unwrap();
    assert_eq!(read_transcript(&path).unwrap(), [a, b]);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
}
