//! Live transport against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use cryptoscope::gateway::{
    Gateway, HttpProvider, ManualClock, ModelProfile, ProviderKind, ReplayProvider, ReqwestTransport, ResponseStatus,
    TranscriptStore,
};
use cryptoscope::model::{DetectionSetting, Language, SourceUnit};
use cryptoscope::prompt::{PromptBundle, PromptForge};
use serde_json::Value;

struct Seen {
    authorization: Option<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap_or((line, ""));
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                authorization: auth,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (url, seen, handle)
}

fn chat_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn bundle() -> PromptBundle {
    let unit = SourceUnit::new("A.java", Language::Java, "import javax.crypto.Cipher;\nclass A {}\n");
    PromptForge::default()
        .build_detection_prompt(&unit, &DetectionSetting::task_aware())
        .unwrap()
}

fn profile(url: &str, key_env: &str) -> ModelProfile {
    let mut p = ModelProfile::new(ProviderKind::RemoteChatEndpoint, "test-model", 16_000);
    p.endpoint_url = url.to_string();
    p.api_key_env = Some(key_env.to_string());
    p.temperature = Some(0.0);
    p.max_retries = 2;
    p.request_timeout = Duration::from_secs(5);
    p
}

#[test]
fn retries_rate_limited_request_then_records() {
    let (url, seen, server) = serve(vec![
        (429, "{\"error\":\"slow down\"}".into()),
        (503, "{}".into()),
        (200, chat_body("[]")),
    ]);
    std::env::set_var("CRYPTOSCOPE_TEST_KEY_A", "sk-test");
    let clock = Arc::new(ManualClock::new());
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(TranscriptStore::open(&dir.path().join("t.jsonl")).unwrap());
    let gateway = Gateway::new(HttpProvider::new(ReqwestTransport::new()).with_clock(clock.clone()))
        .recording_to(store.clone());
    let p = profile(&url, "CRYPTOSCOPE_TEST_KEY_A");
    let b = bundle();
    let r = gateway.complete(&b, &p, 0).unwrap();
    server.join().unwrap();

    assert_eq!(r.status, ResponseStatus::Ok);
    assert_eq!(r.text, "[]");
    // two retries with exponential backoff from the default 500 ms base
    assert_eq!(clock.sleeps(), [Duration::from_millis(500), Duration::from_millis(1000)]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|s| s.authorization.as_deref() == Some("Bearer sk-test")));
    let body = &seen[0].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    assert!(body["messages"][1]["content"].as_str().unwrap().contains("javax.crypto.Cipher"));

    // the recorded answer now replays without the network
    assert_eq!(store.variant_count(&r.prompt_hash, "test-model"), 1);
    let replay = Gateway::new(ReplayProvider::new(store));
    let again = replay.complete(&b, &p, 0).unwrap();
    assert_eq!(again.text, "[]");
}

#[test]
fn fatal_status_is_a_transport_error_without_retry() {
    let (url, seen, server) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let clock = Arc::new(ManualClock::new());
    let gateway = Gateway::new(HttpProvider::new(ReqwestTransport::new()).with_clock(clock.clone()));
    let r = gateway.complete(&bundle(), &profile(&url, "CRYPTOSCOPE_TEST_KEY_UNSET"), 0).unwrap();
    server.join().unwrap();
    assert_eq!(r.status, ResponseStatus::TransportError);
    assert!(r.text.is_empty());
    assert!(clock.sleeps().is_empty());
    assert_eq!(seen.lock().unwrap()[0].authorization, None);
}

#[test]
fn exhausted_retries_give_up() {
    let (url, seen, server) = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
    let clock = Arc::new(ManualClock::new());
    let gateway = Gateway::new(HttpProvider::new(ReqwestTransport::new()).with_clock(clock.clone()));
    let r = gateway.complete(&bundle(), &profile(&url, "CRYPTOSCOPE_TEST_KEY_UNSET"), 0).unwrap();
    server.join().unwrap();
    assert_eq!(r.status, ResponseStatus::TransportError);
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert_eq!(clock.sleeps().len(), 2);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut p = profile(&format!("http://127.0.0.1:{port}/x"), "CRYPTOSCOPE_TEST_KEY_UNSET");
    p.max_retries = 0;
    let gateway = Gateway::new(HttpProvider::new(ReqwestTransport::new()));
    let r = gateway.complete(&bundle(), &p, 0).unwrap();
    assert_eq!(r.status, ResponseStatus::TransportError);
}

#[test]
fn refusal_text_is_classified() {
    let (url, _, server) = serve(vec![(200, chat_body("I'm sorry, but I can't assist with that."))]);
    let gateway = Gateway::new(HttpProvider::new(ReqwestTransport::new()));
    let r = gateway.complete(&bundle(), &profile(&url, "CRYPTOSCOPE_TEST_KEY_UNSET"), 0).unwrap();
    server.join().unwrap();
    assert_eq!(r.status, ResponseStatus::Refusal);
}
