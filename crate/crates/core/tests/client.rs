use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;
use vlmshape_core::io::{fetch_embeddings, ClientConfig, FetchItem};
use vlmshape_core::{Error, Kind};

/// Answers one connection per scripted `(status, body)` pair, in order,
/// and records every request body.
struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<String>>>,
    handle: thread::JoinHandle<()>,
}

fn stub(script: Vec<(u16, &'static str)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&requests);
    let handle = thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            assert!(request_line.starts_with("POST /embed "), "{request_line}");
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut req = vec![0; len];
            reader.read_exact(&mut req).unwrap();
            seen.lock().unwrap().push(String::from_utf8(req).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Stub { url, requests, handle }
}

fn fast() -> ClientConfig {
    ClientConfig {
        initial_backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
        ..ClientConfig::default()
    }
}

fn items() -> Vec<FetchItem> {
    vec![FetchItem::text("t", "close the lid"), FetchItem::image("i", vec![0xff, 0x00])]
}

const GOOD: &str = r#"{"dim":3,"vectors":[{"id":"i","values":[0.1,-2.5,3e-3]},{"id":"t","values":[1,0,0.25]}]}"#;

#[test]
fn assembles_fixture_in_request_order() {
    let s = stub(vec![(200, GOOD)]);
    let ds = fetch_embeddings(&s.url, &items(), &fast()).unwrap();
    s.handle.join().unwrap();
    assert_eq!(ds.dim(), 3);
    let ids: Vec<&str> = ds.entries().iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["t", "i"]);
    assert_eq!(ds.entries()[0].kind, Kind::Text);
    assert_eq!(ds.entries()[0].values, vec![1.0f32, 0.0, 0.25]);
    assert_eq!(ds.entries()[1].values, vec![0.1f32, -2.5, 3e-3]);
    let req: Value = serde_json::from_str(&s.requests.lock().unwrap()[0]).unwrap();
    assert_eq!(req["items"][0], serde_json::json!({"id": "t", "kind": "text", "text": "close the lid"}));
    assert_eq!(req["items"][1]["image_b64"], "/wA=");
}

#[test]
fn retries_transient_failures() {
    let s = stub(vec![(503, "busy"), (429, "slow down"), (200, GOOD)]);
    let ds = fetch_embeddings(&s.url, &items(), &fast()).unwrap();
    s.handle.join().unwrap();
    assert_eq!(ds.len(), 2);
    let reqs = s.requests.lock().unwrap();
    assert_eq!(reqs.len(), 3);
    assert!(reqs.iter().all(|r| r == &reqs[0]));
}

#[test]
fn gives_up_after_the_attempt_budget() {
    let s = stub(vec![(500, "a"), (500, "b"), (500, "c")]);
    let err = fetch_embeddings(&s.url, &items(), &fast()).unwrap_err();
    s.handle.join().unwrap();
    assert!(matches!(err, Error::Network(_)), "{err}");
    assert_eq!(s.requests.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let s = stub(vec![(400, "bad request")]);
    let err = fetch_embeddings(&s.url, &items(), &fast()).unwrap_err();
    s.handle.join().unwrap();
    assert!(matches!(err, Error::BadResponse(_)), "{err}");
}

#[test]
fn never_pads_or_truncates() {
    let short = r#"{"dim":3,"vectors":[{"id":"i","values":[0.1,-2.5]},{"id":"t","values":[1,0,0.25]}]}"#;
    let s = stub(vec![(200, short)]);
    let err = fetch_embeddings(&s.url, &items(), &fast()).unwrap_err();
    s.handle.join().unwrap();
    assert!(matches!(err, Error::DimMismatch { left: 3, right: 2 }), "{err}");

    let missing = r#"{"dim":3,"vectors":[{"id":"t","values":[1,0,0.25]}]}"#;
    let s = stub(vec![(200, missing)]);
    let err = fetch_embeddings(&s.url, &items(), &fast()).unwrap_err();
    s.handle.join().unwrap();
    assert!(matches!(err, Error::MissingId(ref id) if id == "i"), "{err}");
}

#[test]
fn response_size_is_capped() {
    let s = stub(vec![(200, GOOD)]);
    let cfg = ClientConfig {
        max_response_bytes: 16,
        ..fast()
    };
    let err = fetch_embeddings(&s.url, &items(), &cfg).unwrap_err();
    s.handle.join().unwrap();
    assert!(matches!(err, Error::BadResponse(_)), "{err}");
}

#[test]
fn request_size_is_capped_before_sending() {
    let cfg = ClientConfig {
        max_request_bytes: 10,
        ..fast()
    };
    let err = fetch_embeddings("http://127.0.0.1:1", &items(), &cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}
