//! The HTTP scoring client against an in-process mock of the `/score`
//! service.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use common::FakeLm;
use prosign_core::corpus::{parse_manifest, CorpusLayout};
use prosign_core::lm::{dump_cache, FileBackend, HttpBackend, ScoreBackend, ServiceConfig};
use prosign_core::surprisal::{score_requests, surprisal_table, ContextSpec};
use prosign_core::Error;
use serde_json::Value;

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

/// A `/score` endpoint on a random local port. Every request body is
/// recorded; the handler sees the 0-based hit number and the parsed body.
struct MockService {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Value>>>,
    server: Arc<tiny_http::Server>,
    worker: Option<thread::JoinHandle<()>>,
}

impl MockService {
    fn start(handler: Box<Handler>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (s, h, b) = (server.clone(), hits.clone(), bodies.clone());
        let worker = thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let json: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                let n = h.fetch_add(1, Ordering::SeqCst);
                b.lock().unwrap().push(json.clone());
                let (status, out) = if req.url() == "/score" {
                    handler(n, &json)
                } else {
                    (404, String::new())
                };
                let _ = req.respond(tiny_http::Response::from_string(out).with_status_code(status));
            }
        });
        MockService {
            url,
            hits,
            bodies,
            server,
            worker: Some(worker),
        }
    }

    /// Scores with [`FakeLm`], like a well-behaved service.
    fn honest() -> Self {
        Self::start(Box::new(|_, body| (200, fake_response(body))))
    }

    fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for MockService {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn fake_response(body: &Value) -> String {
    let model = body["model_id"].as_str().unwrap();
    let text = body["text"].as_str().unwrap();
    let ccl = body["context_char_len"].as_u64().unwrap_or(0) as usize;
    serde_json::to_string(&FakeLm::new(model).score_text(text, ccl)).unwrap()
}

fn config(url: &str) -> ServiceConfig {
    let mut c = ServiceConfig::new(url);
    c.backoff_base = Duration::from_millis(5);
    c.timeout = Duration::from_secs(10);
    c
}

const META: &str = "C1-1|First line here.|First line here.\n\
                    C1-2|Second line, with more words.|Second line, with more words.\n\
                    C1-3|The third line repeats words.|The third line repeats words.\n\
                    C2-1|Another chapter starts.|Another chapter starts.\n";

fn requests(model: &str, contexts: &[usize]) -> Vec<prosign_core::lm::ScoreRequest> {
    let m = parse_manifest(META, "meta", &CorpusLayout::default()).unwrap();
    let specs: Vec<_> = contexts.iter().map(|&k| ContextSpec::new(k).unwrap()).collect();
    score_requests(&m, &specs, model, " ").unwrap()
}

#[test]
fn http_results_match_the_producer_and_the_file_backend() {
    let svc = MockService::honest();
    let http = HttpBackend::new(config(&svc.url)).unwrap();
    let reqs = requests("gpt2", &[0, 2]);
    let via_http = http.score_all(&reqs).unwrap();
    let direct = FakeLm::new("gpt2").score_all(&reqs).unwrap();
    assert_eq!(via_http, direct);
    assert_eq!(svc.hits(), reqs.len());

    // The same records served from a file give the same surprisal table.
    let m = parse_manifest(META, "meta", &CorpusLayout::default()).unwrap();
    let specs = [ContextSpec::new(0).unwrap(), ContextSpec::new(2).unwrap()];
    let file = FileBackend::new(via_http);
    let a = surprisal_table(&m, &http, &specs, "gpt2", " ").unwrap();
    let b = surprisal_table(&m, &file, &specs, "gpt2", " ").unwrap();
    assert_eq!(a, b);
}

#[test]
fn request_body_carries_model_text_and_context_length() {
    let svc = MockService::honest();
    let http = HttpBackend::new(config(&svc.url)).unwrap();
    let reqs = requests("gpt2", &[1]);
    http.score(&reqs[1]).unwrap();
    let body = svc.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model_id"], "gpt2");
    assert_eq!(body["text"], "First line here. Second line, with more words.");
    assert_eq!(body["context_char_len"], 16);
}

#[test]
fn cache_serves_repeats_without_network_and_is_content_addressed() {
    let dir = tempfile::tempdir().unwrap();
    let svc = MockService::honest();
    let mut cfg = config(&svc.url);
    cfg.cache_dir = Some(dir.path().to_path_buf());
    let reqs = requests("gpt2", &[0, 1]);

    let first = HttpBackend::new(cfg.clone()).unwrap().score_all(&reqs).unwrap();
    let after_first = svc.hits();
    // Chapter-initial segments have the same text at every context size,
    // so they share one cache entry.
    let distinct: std::collections::BTreeSet<String> = reqs.iter().map(|r| r.text()).collect();
    assert_eq!(after_first, distinct.len());
    assert!(distinct.len() < reqs.len());

    // A fresh client over the same cache makes no calls and returns
    // identical records.
    let second = HttpBackend::new(cfg.clone()).unwrap().score_all(&reqs).unwrap();
    assert_eq!(first, second);
    assert_eq!(svc.hits(), after_first);

    // The cache survives the service going away.
    drop(svc);
    let third = HttpBackend::new(cfg).unwrap().score_all(&reqs).unwrap();
    assert_eq!(first, third);
    assert_eq!(dump_cache(dir.path()).unwrap().len(), distinct.len());
}

#[test]
fn tokens_with_a_gap_are_a_protocol_error() {
    let svc = MockService::start(Box::new(|_, body| {
        let mut v: Value = serde_json::from_str(&fake_response(body)).unwrap();
        let tokens = v["tokens"].as_array_mut().unwrap();
        tokens.remove(1);
        (200, v.to_string())
    }));
    let http = HttpBackend::new(config(&svc.url)).unwrap();
    let err = http.score(&requests("gpt2", &[0])[0]).unwrap_err();
    match err {
        Error::Protocol(m) => assert!(m.contains("gap"), "{m}"),
        other => panic!("expected a protocol error, got {other:?}"),
    }
}

#[test]
fn wrong_model_and_foreign_text_are_rejected() {
    let svc = MockService::start(Box::new(|_, body| {
        let text = body["text"].as_str().unwrap();
        (
            200,
            serde_json::to_string(&FakeLm::new("other").score_text(text, 0)).unwrap(),
        )
    }));
    let http = HttpBackend::new(config(&svc.url)).unwrap();
    assert!(matches!(
        http.score(&requests("gpt2", &[0])[0]),
        Err(Error::Protocol(_))
    ));

    let svc = MockService::start(Box::new(|_, body| {
        let model = body["model_id"].as_str().unwrap();
        (
            200,
            serde_json::to_string(&FakeLm::new(model).score_text("Unrelated text.", 0)).unwrap(),
        )
    }));
    let http = HttpBackend::new(config(&svc.url)).unwrap();
    assert!(matches!(
        http.score(&requests("gpt2", &[0])[0]),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn long_context_is_trimmed_from_the_left_only() {
    let svc = MockService::honest();
    let mut cfg = config(&svc.url);
    cfg.max_context_bytes = Some(20);
    let http = HttpBackend::new(cfg).unwrap();
    let reqs = requests("gpt2", &[2]);
    let third = &reqs[2];
    assert_eq!(third.context, "First line here. Second line, with more words.");
    let rec = http.score(third).unwrap();
    let sent = svc.bodies.lock().unwrap()[0]["text"].as_str().unwrap().to_string();
    assert!(sent.ends_with(&third.target), "target must never be trimmed");
    let ctx_len = rec.context_char_len;
    assert!(ctx_len <= 20, "context kept {ctx_len} bytes");
    assert_eq!(&rec.text[..ctx_len], "with more words.");
    assert_eq!(rec.target_offset(&third.target), Some(ctx_len + 1));
}

#[test]
fn transient_failures_are_retried_then_reported() {
    // Two 503s, then success.
    let svc = MockService::start(Box::new(|n, body| {
        if n < 2 {
            (503, "busy".into())
        } else {
            (200, fake_response(body))
        }
    }));
    let http = HttpBackend::new(config(&svc.url)).unwrap();
    let req = &requests("gpt2", &[0])[0];
    assert_eq!(
        http.score(req).unwrap().tokens.len(),
        FakeLm::new("gpt2").score(req).unwrap().tokens.len()
    );
    assert_eq!(svc.hits(), 3);

    // Permanent server errors exhaust the retry budget.
    let svc = MockService::start(Box::new(|_, _| (500, "down".into())));
    let mut cfg = config(&svc.url);
    cfg.max_retries = 2;
    let err = HttpBackend::new(cfg).unwrap().score(req).unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err:?}");
    assert_eq!(svc.hits(), 3);

    // Client errors are not retried.
    let svc = MockService::start(Box::new(|_, _| (400, "bad".into())));
    let err = HttpBackend::new(config(&svc.url)).unwrap().score(req).unwrap_err();
    assert!(matches!(err, Error::Transport(_)));
    assert_eq!(svc.hits(), 1);
}

#[test]
fn concurrent_requests_keep_request_order() {
    let svc = MockService::start(Box::new(|n, body| {
        // Later hits answer faster, so completion order differs from
        // request order.
        thread::sleep(Duration::from_millis(30u64.saturating_sub(3 * n as u64)));
        (200, fake_response(body))
    }));
    let mut cfg = config(&svc.url);
    cfg.max_in_flight = 4;
    let reqs = requests("gpt2", &[0, 1, 2, 3]);
    let got = HttpBackend::new(cfg).unwrap().score_all(&reqs).unwrap();
    for (r, g) in reqs.iter().zip(&got) {
        assert_eq!(g.segment_id.as_deref(), Some(r.segment_id.as_str()));
        assert_eq!(g.context_sentences, r.context_sentences);
        assert_eq!(g.text, r.text());
    }
}
