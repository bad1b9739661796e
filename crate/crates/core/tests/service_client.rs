use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use sentinel_core::embedprov::{
    export_fixtures, EmbedResponse, FileProvider, HealthResponse, Provider, SentimentResponse, ServiceConfig,
    ServiceProvider, TextsRequest, EMBEDDING_DIM, MAX_BATCH,
};
use sentinel_core::Error;

#[derive(Clone, Copy)]
enum Fault {
    Status(u16),
    WrongTag,
    WrongCount,
}

#[derive(Default)]
struct State {
    faults: VecDeque<Fault>,
    batches: Vec<(String, usize)>,
}

struct Mock {
    url: String,
    state: Arc<Mutex<State>>,
    requests: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl Drop for Mock {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
    }
}

fn vector_for(text: &str) -> Vec<f64> {
    let seed = text.bytes().fold(17u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    (0..EMBEDDING_DIM).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64) / 1000.0 - 0.5).collect()
}

fn triple_for(text: &str) -> [f64; 3] {
    let p = (text.len() % 10) as f64 / 20.0;
    [p, 0.5, 0.5 - p]
}

fn json_response(code: u16, body: String) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    tiny_http::Response::from_string(body)
        .with_status_code(code)
        .with_header("Content-Type: application/json".parse::<tiny_http::Header>().unwrap())
}

fn mock(tag: &'static str, faults: &[Fault]) -> Mock {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let state = Arc::new(Mutex::new(State { faults: faults.iter().copied().collect(), ..State::default() }));
    let requests = Arc::new(AtomicUsize::new(0));
    let handle = {
        let (server, state, requests) = (Arc::clone(&server), Arc::clone(&state), Arc::clone(&requests));
        std::thread::spawn(move || {
            for mut req in server.incoming_requests() {
                requests.fetch_add(1, Ordering::SeqCst);
                let path = req.url().to_string();
                let fault = if path == "/healthz" { None } else { state.lock().unwrap().faults.pop_front() };
                if let Some(Fault::Status(code)) = fault {
                    req.respond(json_response(code, "{\"error\":\"injected\"}".into())).unwrap();
                    continue;
                }
                let reply_tag = if matches!(fault, Some(Fault::WrongTag)) { "other-model" } else { tag };
                let body = match path.as_str() {
                    "/healthz" => {
                        serde_json::to_string(&HealthResponse { status: "ok".into(), model_tag: tag.into() }).unwrap()
                    }
                    "/embed" | "/sentiment" => {
                        let mut raw = String::new();
                        req.as_reader().read_to_string(&mut raw).unwrap();
                        let texts = serde_json::from_str::<TextsRequest>(&raw).unwrap().texts;
                        state.lock().unwrap().batches.push((path.clone(), texts.len()));
                        let n = if matches!(fault, Some(Fault::WrongCount)) { texts.len() + 1 } else { texts.len() };
                        let texts: Vec<&str> = texts.iter().map(String::as_str).cycle().take(n).collect();
                        if path == "/embed" {
                            serde_json::to_string(&EmbedResponse {
                                model_tag: reply_tag.into(),
                                vectors: texts.iter().map(|t| vector_for(t)).collect(),
                            })
                        } else {
                            serde_json::to_string(&SentimentResponse {
                                model_tag: reply_tag.into(),
                                triples: texts.iter().map(|t| triple_for(t)).collect(),
                            })
                        }
                        .unwrap()
                    }
                    _ => {
                        req.respond(json_response(404, "{}".into())).unwrap();
                        continue;
                    }
                };
                req.respond(json_response(200, body)).unwrap();
            }
        })
    };
    Mock { url, state, requests, server, handle: Some(handle) }
}

fn config(url: &str) -> ServiceConfig {
    let mut c = ServiceConfig::new(url);
    c.backoff = Duration::from_millis(1);
    c.timeout = Duration::from_secs(5);
    c
}

#[test]
fn connect_pins_model_tag() {
    let m = mock("svc-v1", &[]);
    let p = ServiceProvider::connect(config(&m.url)).unwrap();
    assert_eq!(p.model_tag(), "svc-v1");
}

#[test]
fn embeddings_are_cached_by_content() {
    let m = mock("svc-v1", &[]);
    let p = ServiceProvider::connect(config(&m.url)).unwrap();
    let a = p.embedding("Queues at the station").unwrap();
    let after_first = m.requests.load(Ordering::SeqCst);
    let b = p.embedding("Queues at the station").unwrap();
    assert_eq!(m.requests.load(Ordering::SeqCst), after_first);
    assert_eq!(a.vector, b.vector);
    assert_eq!(a.model_tag, "svc-v1");
    let s = p.sentiment("Queues at the station").unwrap();
    assert!((s.to_array().iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn prefetch_batches_and_deduplicates() {
    let m = mock("svc-v1", &[]);
    let p = ServiceProvider::connect(config(&m.url)).unwrap();
    let texts: Vec<String> = (0..150).map(|i| format!("report number {}", i % 140)).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    p.prefetch(&refs).unwrap();
    let batches = m.state.lock().unwrap().batches.clone();
    let embed: Vec<usize> = batches.iter().filter(|(p, _)| p == "/embed").map(|b| b.1).collect();
    let sent: Vec<usize> = batches.iter().filter(|(p, _)| p == "/sentiment").map(|b| b.1).collect();
    assert_eq!(embed, vec![MAX_BATCH, MAX_BATCH, 140 - 2 * MAX_BATCH]);
    assert_eq!(sent, embed);
    let before = m.requests.load(Ordering::SeqCst);
    for t in &refs {
        p.embedding(t).unwrap();
        p.sentiment(t).unwrap();
    }
    assert_eq!(m.requests.load(Ordering::SeqCst), before);
}

#[test]
fn transient_server_errors_are_retried() {
    let m = mock("svc-v1", &[Fault::Status(503), Fault::Status(500)]);
    let p = ServiceProvider::connect(config(&m.url)).unwrap();
    let e = p.embedding("retry me").unwrap();
    assert_eq!(e.vector, vector_for(&sentinel_core::textprep::preprocess_minimal("retry me")));
    assert_eq!(m.requests.load(Ordering::SeqCst), 4);
}

#[test]
fn persistent_failures_exhaust_retries() {
    let m = mock("svc-v1", &[Fault::Status(503); 10]);
    let p = ServiceProvider::connect(config(&m.url)).unwrap();
    match p.embedding("never") {
        Err(Error::Transport { retries, .. }) => assert_eq!(retries, 3),
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(m.requests.load(Ordering::SeqCst), 1 + 4);
}

#[test]
fn client_errors_are_not_retried() {
    let m = mock("svc-v1", &[Fault::Status(400)]);
    let p = ServiceProvider::connect(config(&m.url)).unwrap();
    match p.embedding("bad") {
        Err(Error::Transport { retries, message }) => {
            assert_eq!(retries, 0);
            assert!(message.contains("400"), "{message}");
        }
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(m.requests.load(Ordering::SeqCst), 2);
}

#[test]
fn model_tag_change_is_rejected() {
    let m = mock("svc-v1", &[Fault::WrongTag]);
    let p = ServiceProvider::connect(config(&m.url)).unwrap();
    match p.embedding("drift") {
        Err(Error::ModelTagMismatch { expected, found }) => {
            assert_eq!(expected, "svc-v1");
            assert_eq!(found, "other-model");
        }
        other => panic!("expected tag mismatch, got {other:?}"),
    }
}

#[test]
fn wrong_batch_length_is_rejected() {
    let m = mock("svc-v1", &[Fault::WrongCount]);
    let p = ServiceProvider::connect(config(&m.url)).unwrap();
    assert!(p.prefetch(&["one", "two"]).is_err());
}

#[test]
fn unreachable_service_fails_to_connect() {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    drop(server);
    let err = ServiceProvider::connect(config(&url)).err().expect("connect should fail");
    assert_eq!(err.category(), sentinel_core::ErrorCategory::Provider);
}

#[test]
fn exported_fixtures_replay_offline() {
    let m = mock("svc-v1", &[]);
    let p = ServiceProvider::connect(config(&m.url)).unwrap();
    let texts = ["Ballot boxes arrived late", "Peaceful voting in Kisumu", "Ballot boxes arrived late"];
    let records = export_fixtures(&p, &texts).unwrap();
    assert_eq!(records.len(), 2);
    let file = FileProvider::from_records(records).unwrap();
    assert_eq!(file.model_tag(), "svc-v1");
    for t in texts {
        assert_eq!(file.embedding(t).unwrap().vector, p.embedding(t).unwrap().vector);
        assert_eq!(file.sentiment(t).unwrap(), p.sentiment(t).unwrap());
    }
}
