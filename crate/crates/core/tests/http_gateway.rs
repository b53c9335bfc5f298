use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use gatos_core::gateway::{ChatRequest, Gateway, GatewayError, HttpBackend, ModelBackend, RetryPolicy};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves canned `(status, body)` replies in order, one per connection,
/// and records what each request looked like.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut length = 0;
            let mut auth = None;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                let header = header.trim_end();
                if header.is_empty() {
                    break;
                }
                let (name, value) = header.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&raw).unwrap_or(serde_json::Value::Null),
            });
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn fast_retry(attempts: u32) -> RetryPolicy {
    RetryPolicy {
        attempts,
        base_delay: Duration::from_millis(1),
    }
}

fn chat_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn chat_round_trip() {
    let (url, seen) = serve(vec![(200, chat_body("My summary:\n1. ok"))]);
    let backend = HttpBackend::new(url, Some("secret".into())).unwrap();
    let req = ChatRequest::new("small-model", "Summarize this", 0.0);
    assert_eq!(backend.chat(&req).unwrap(), "My summary:\n1. ok");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer secret"));
    assert_eq!(seen[0].body["model"], "small-model");
    assert_eq!(seen[0].body["temperature"], 0.0);
    assert_eq!(seen[0].body["messages"][0]["content"], "Summarize this");
}

#[test]
fn embeddings_follow_index_order() {
    let body = serde_json::json!({"data": [
        {"index": 1, "embedding": [0.0, 1.0]},
        {"index": 0, "embedding": [1.0, 0.0]}
    ]})
    .to_string();
    let (url, seen) = serve(vec![(200, body)]);
    let backend = HttpBackend::new(url, None).unwrap();
    let out = backend.embed("embedder", &["a".into(), "b".into()]).unwrap();
    assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["input"], serde_json::json!(["a", "b"]));
    assert!(seen[0].auth.is_none());
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = serve(vec![(503, "{}".into()), (500, "{}".into()), (200, chat_body("fine"))]);
    let backend = HttpBackend::new(url, None).unwrap().with_retry(fast_retry(3));
    assert_eq!(backend.chat(&ChatRequest::new("m", "p", 0.0)).unwrap(), "fine");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, "{\"error\":\"bad model\"}".into()), (200, chat_body("unused"))]);
    let backend = HttpBackend::new(url, None).unwrap().with_retry(fast_retry(3));
    let err = backend.chat(&ChatRequest::new("m", "p", 0.0)).unwrap_err();
    assert!(matches!(err, GatewayError::Protocol(ref m) if m.contains("400")), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_reports_attempts() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::new(format!("http://127.0.0.1:{port}/v1"), None)
        .unwrap()
        .with_retry(fast_retry(2));
    match backend.chat(&ChatRequest::new("m", "p", 0.0)) {
        Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected transport error, got {other:?}"),
    }
}

#[test]
fn recording_over_http_then_replaying_offline() {
    let (url, _) = serve(vec![(200, chat_body("recorded answer"))]);
    let gateway = Gateway::recording(Arc::new(HttpBackend::new(url, None).unwrap()), Default::default());
    let req = ChatRequest::new("m", "question", 0.0);
    assert_eq!(gateway.chat(&req).unwrap(), "recorded answer");
    let replay = Gateway::replay(gateway.transcript_snapshot());
    assert_eq!(replay.chat(&req).unwrap(), "recorded answer");
    assert!(matches!(
        replay.chat(&ChatRequest::new("m", "other", 0.0)),
        Err(GatewayError::MissingTranscript(_))
    ));
}
