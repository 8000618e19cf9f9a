//! Contract tests for the remote provider against an in-process HTTP stub.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};
use sgdmc::provider::{hierarchy_pdf, DigitDistribution, DigitProvider, RemoteConfig, RemoteMode, RemoteProvider};
use sgdmc::{Error, Precision};

struct Request {
    method: String,
    path: String,
    content_type: String,
    body: Value,
}

type Handler = dyn Fn(&Value) -> (u16, String) + Send + Sync;

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<Request>>>,
}

impl Stub {
    fn start(handler: impl Fn(&Value) -> (u16, String) + Send + Sync + 'static) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/logits", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                serve(stream, &*handler, &log);
            }
        });
        Stub { url, requests }
    }

    fn provider(&self) -> RemoteProvider {
        let mut cfg = RemoteConfig::new(self.url.clone());
        cfg.timeout_secs = 10;
        RemoteProvider::new(cfg).unwrap()
    }

    fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Request>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_owned();
    let path = parts.next().unwrap_or("").to_owned();
    let mut length = 0;
    let mut content_type = String::new();
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
            "content-type" => content_type = value.trim().to_owned(),
            _ => {}
        }
    }
    let mut raw = vec![0; length];
    reader.read_exact(&mut raw).unwrap();
    let body: Value = serde_json::from_slice(&raw).unwrap_or(Value::Null);
    let (status, reply) = handler(&body);
    log.lock().unwrap().push(Request { method, path, content_type, body });
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )
    .unwrap();
    stream.flush().unwrap();
}

fn ok(logits: &[f64]) -> (u16, String) {
    (200, json!({ "logits": logits }).to_string())
}

fn softmax(logits: &[f64], t: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| ((l - m) / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

const LOGITS: [f64; 10] = [0.1, -1.0, 0.5, 2.0, 0.0, 0.3, -0.7, 3.5, 1.2, -2.0];

#[test]
fn digit_mode_round_trip() {
    let stub = Stub::start(|_| ok(&LOGITS));
    let got = stub.provider().next_digit_probs("15,27,3").unwrap();
    let want = softmax(&LOGITS, 1.0);
    for d in 0..10 {
        assert!((got.probs()[d] - want[d]).abs() < 1e-12);
    }
    let reqs = stub.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/logits");
    assert!(reqs[0].content_type.starts_with("application/json"));
    assert_eq!(reqs[0].body, json!({ "context": "15,27,3" }));
}

#[test]
fn temperature_scales_logits() {
    let stub = Stub::start(|_| ok(&LOGITS));
    let mut cfg = RemoteConfig::new(stub.url.clone());
    cfg.temperature = 2.5;
    let got = RemoteProvider::new(cfg).unwrap().next_digit_probs("42,").unwrap();
    let want = softmax(&LOGITS, 2.5);
    for d in 0..10 {
        assert!((got.probs()[d] - want[d]).abs() < 1e-12);
    }
}

#[test]
fn token_id_mode_picks_configured_ids() {
    let vocab: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    let served = vocab.clone();
    let stub = Stub::start(move |_| ok(&served));
    let ids = [50, 3, 61, 17, 8, 44, 29, 0, 33, 12];
    let mut cfg = RemoteConfig::new(stub.url.clone());
    cfg.mode = RemoteMode::TokenIds { token_ids: ids };
    let got = RemoteProvider::new(cfg).unwrap().next_digit_probs("5").unwrap();
    let picked: Vec<f64> = ids.iter().map(|&i| vocab[i]).collect();
    let want = softmax(&picked, 1.0);
    for d in 0..10 {
        assert!((got.probs()[d] - want[d]).abs() < 1e-12);
    }
}

#[test]
fn token_id_outside_vocabulary_is_unavailable() {
    let stub = Stub::start(|_| ok(&[0.0; 20]));
    let mut cfg = RemoteConfig::new(stub.url.clone());
    cfg.mode = RemoteMode::TokenIds { token_ids: [0, 1, 2, 3, 4, 5, 6, 7, 8, 25] };
    let err = RemoteProvider::new(cfg).unwrap().next_digit_probs("1").unwrap_err();
    assert!(matches!(err, Error::RemoteUnavailable(_)), "{err}");
}

#[test]
fn non_200_is_unavailable() {
    for status in [404, 500, 503] {
        let stub = Stub::start(move |_| (status, "{\"detail\":\"down\"}".into()));
        let err = stub.provider().next_digit_probs("15,").unwrap_err();
        assert!(matches!(err, Error::RemoteUnavailable(_)), "{status}: {err}");
        assert_eq!(err.kind(), "RemoteUnavailable");
    }
}

#[test]
fn malformed_responses_are_unavailable() {
    let bodies = ["not json", "{\"scores\": [1, 2]}", "{\"logits\": [1, 2, 3]}"];
    for body in bodies {
        let stub = Stub::start(move |_| (200, body.to_owned()));
        let err = stub.provider().next_digit_probs("15,").unwrap_err();
        assert!(matches!(err, Error::RemoteUnavailable(_)), "{body}: {err}");
    }
}

#[test]
fn bad_context_is_rejected_before_sending() {
    let stub = Stub::start(|_| ok(&LOGITS));
    let err = stub.provider().next_digit_probs("15,2a").unwrap_err();
    assert!(matches!(err, Error::MalformedContext(_)));
    assert_eq!(stub.count(), 0);
}

/// Logits that depend on the context, so every hierarchy level sees a
/// different answer.
fn context_logits(context: &str) -> [f64; 10] {
    let h = context.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut out = [0.0; 10];
    for (d, o) in out.iter_mut().enumerate() {
        *o = (((h >> (d * 3)) & 0x3f) as f64) / 10.0;
    }
    out
}

struct Local;

impl DigitProvider for Local {
    fn next_digit_probs(&self, context: &str) -> sgdmc::Result<DigitDistribution> {
        DigitDistribution::softmax(&context_logits(context), 1.0)
    }
}

#[test]
fn hierarchy_over_the_wire_matches_in_process() {
    let stub = Stub::start(|body| ok(&context_logits(body["context"].as_str().unwrap())));
    let remote = stub.provider();
    let k = Precision::new(2).unwrap();
    for (i, budget) in [1usize, 3, 10].into_iter().enumerate() {
        let before = stub.count();
        let a = hierarchy_pdf(&remote, "15,16,18,", k, budget).unwrap();
        let b = hierarchy_pdf(&Local, "15,16,18,", k, budget).unwrap();
        assert_eq!(a.query_count, b.query_count, "budget {budget}");
        assert_eq!(stub.count() - before, a.query_count, "budget {budget}");
        for (x, y) in a.dist.probs().iter().zip(b.dist.probs()) {
            assert!((x - y).abs() < 1e-12, "case {i}");
        }
    }
}
