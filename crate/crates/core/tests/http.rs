use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use claimdecomp::llm::{CachedClient, CompletionClient, GenerationParams, HttpClient, HttpConfig, LlmError};
use claimdecomp::validate::{nli_entails, HttpNliClient, ValidateError};

/// Serves the scripted (status, body) replies in order, one per connection,
/// and records request bodies.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(String::from_utf8(buf).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn config(url: &str) -> HttpConfig {
    let mut c = HttpConfig::new(url);
    c.initial_backoff = Duration::from_millis(5);
    c.max_retries = 2;
    c.timeout = Duration::from_secs(5);
    c
}

fn ok(text: &str) -> (u16, String) {
    (200, serde_json::json!({"choices": [{"text": text, "finish_reason": "stop"}]}).to_string())
}

#[test]
fn wire_format_and_retry() {
    let (url, seen) = serve(vec![(503, "busy".into()), ok("- A.")]);
    let client = HttpClient::new(config(&url)).unwrap();
    let params = GenerationParams::decomposition("demo-model");
    let r = client.complete(&params.request("Say it".into())).unwrap();
    assert_eq!(r.text, "- A.");
    assert_eq!(client.calls(), 2);
    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[1]).unwrap();
    assert_eq!(
        body,
        serde_json::json!({"model": "demo-model", "prompt": "Say it", "max_tokens": 512, "temperature": 0.7})
    );
}

#[test]
fn retries_exhaust() {
    let (url, _) = serve(vec![(500, "x".into()), (502, "x".into()), (429, "x".into())]);
    let client = HttpClient::new(config(&url)).unwrap();
    let err = client
        .complete(&GenerationParams::validation("m").request("p".into()))
        .unwrap_err();
    assert!(matches!(err, LlmError::Exhausted { attempts: 3, .. }), "{err:?}");
}

#[test]
fn context_length_and_client_errors_are_not_retried() {
    let (url, _) = serve(vec![
        (400, r#"{"error":{"code":"context_length_exceeded"}}"#.into()),
        (401, "denied".into()),
    ]);
    let client = HttpClient::new(config(&url)).unwrap();
    let req = GenerationParams::validation("m").request("p".into());
    assert!(matches!(client.complete(&req), Err(LlmError::ContextLength)));
    assert!(matches!(client.complete(&req), Err(LlmError::Http { status: 401, .. })));
    assert_eq!(client.calls(), 2);
}

#[test]
fn warm_cache_makes_no_requests() {
    let (url, _) = serve(vec![ok("True")]);
    let dir = tempfile::tempdir().unwrap();
    let req = GenerationParams::validation("m").request("Claim".into());
    let cold = CachedClient::new(HttpClient::new(config(&url)).unwrap(), dir.path()).unwrap();
    assert_eq!(cold.complete(&req).unwrap().text, "True");
    assert_eq!(cold.inner().calls(), 1);

    // The server is gone; a warm cache must not need it.
    let warm = CachedClient::new(HttpClient::new(config(&url)).unwrap(), dir.path()).unwrap();
    assert_eq!(warm.complete(&req).unwrap().text, "True");
    assert_eq!(warm.inner().calls(), 0);
    assert_eq!(warm.hits(), 1);
}

#[test]
fn nli_service() {
    let (url, seen) = serve(vec![
        (200, r#"{"entailment":0.9,"neutral":0.05,"contradiction":0.05}"#.into()),
        (200, r#"{"entailment":0.3,"neutral":0.4,"contradiction":0.3}"#.into()),
        (200, r#"{"entailment":0.6,"neutral":0.6,"contradiction":0.3}"#.into()),
        (500, "oops".into()),
    ]);
    let nli = HttpNliClient::new(&url, Duration::from_secs(5)).unwrap();
    assert!(nli_entails(&nli, "He sang loudly.", "He sang.").unwrap());
    assert!(!nli_entails(&nli, "p", "h").unwrap());
    assert!(matches!(nli_entails(&nli, "p", "h"), Err(ValidateError::InvalidVerdict(_))));
    assert!(matches!(nli_entails(&nli, "p", "h"), Err(ValidateError::Nli(_))));
    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(body, serde_json::json!({"premise": "He sang loudly.", "hypothesis": "He sang."}));
}
