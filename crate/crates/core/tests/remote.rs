use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use leakaudit::scorer::reference::ClosureScorer;
use leakaudit::scorer::{serve, Capability, RemoteConfig, RemoteScorer, ScorerHandle, ToyConfig, ToyScorer};
use leakaudit::Error;

const LINES: [&str; 4] = [
    "Mr. John Doe is a yo patient with gout",
    "Mrs. Ann Lee is a yo patient with acute kidney failure",
    "pt resting comfortably , vitals stable",
    "John Doe was admitted with gout .",
];

fn toy() -> ScorerHandle {
    ScorerHandle::new(ToyScorer::train(LINES, ToyConfig::default()).unwrap())
}

fn remote(url: String) -> RemoteScorer {
    RemoteScorer::connect(RemoteConfig {
        endpoint: url,
        timeout_ms: 2000,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn loopback_matches_local() {
    let local = toy();
    let bridge = serve(local.clone(), "127.0.0.1:0", 2).unwrap();
    let rem = ScorerHandle::new(remote(bridge.url()));
    assert_eq!(rem.model_tag(), local.model_tag());
    assert_eq!(rem.info().capabilities, local.info().capabilities);

    for (prefix, suffix, cand) in [
        ("[CLS] Mr. John Doe is a yo patient with", "[SEP]", "gout"),
        ("[CLS] Mrs. Ann Lee is a yo patient with", "[SEP]", "acute kidney failure"),
        ("[CLS]", "[SEP]", "never seen words"),
    ] {
        let a = local.score_raw(prefix, suffix, cand).unwrap();
        let b = rem.score_raw(prefix, suffix, cand).unwrap();
        assert_eq!(a.piece_count, b.piece_count);
        for (x, y) in a.per_piece_nll.iter().zip(&b.per_piece_nll) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    let seq: Vec<String> = "[CLS] john [MASK] was admitted [SEP]".split(' ').map(String::from).collect();
    let a = local.conditional(&seq, 2).unwrap();
    let b = rem.conditional(&seq, 2).unwrap();
    for (tok, p) in a.tokens.iter().zip(&a.probs) {
        assert!((b.prob_of(tok) - p).abs() < 1e-6);
    }
    assert!((b.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let ea = local.embed_text("John Doe gout").unwrap();
    let eb = rem.embed_text("John Doe gout").unwrap();
    assert!(ea.iter().zip(&eb).all(|(x, y)| (x - y).abs() < 1e-6));
    let ta = local.embed_tokens("John Doe").unwrap();
    let tb = rem.embed_tokens("John Doe").unwrap();
    assert_eq!(ta.len(), tb.len());
}

#[test]
fn concurrent_requests() {
    let local = toy();
    let bridge = serve(local.clone(), "127.0.0.1:0", 4).unwrap();
    let rem = ScorerHandle::new(remote(bridge.url()));
    let expected = local.score_raw("[CLS]", "[SEP]", "gout").unwrap().nll_sum;
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let r = rem.clone();
            thread::spawn(move || r.score_raw("[CLS]", "[SEP]", "gout").unwrap().nll_sum)
        })
        .collect();
    for h in handles {
        assert!((h.join().unwrap() - expected).abs() < 1e-9);
    }
}

#[test]
fn missing_capability_is_reported() {
    let span_only = ScorerHandle::new(ClosureScorer::new("span").with_span(|_, _, _| 0.5));
    let bridge = serve(span_only, "127.0.0.1:0", 1).unwrap();
    let rem = ScorerHandle::new(remote(bridge.url()));
    assert!(rem.has(Capability::SpanScoring));
    assert!(matches!(
        rem.embed_text("x"),
        Err(Error::MissingCapability(Capability::TextEmbedding))
    ));
    let seq = vec!["[CLS]".to_string(), "[MASK]".into(), "[SEP]".into()];
    assert!(matches!(
        rem.conditional(&seq, 1),
        Err(Error::MissingCapability(Capability::ConditionalDistribution))
    ));
}

fn raw_request(addr: &str, request: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut out = String::new();
    let _ = s.read_to_string(&mut out);
    out
}

fn post(addr: &str, path: &str, body: &str) -> String {
    raw_request(
        addr,
        &format!(
            "POST {path} HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        ),
    )
}

#[test]
fn server_status_codes() {
    let bridge = serve(toy(), "127.0.0.1:0", 1).unwrap();
    let addr = bridge.addr().to_string();
    let ok = raw_request(&addr, "GET /v1/info HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    assert!(ok.starts_with("HTTP/1.1 200"), "{ok}");
    assert!(ok.contains("\"version\":\"v1\""));

    let bad = post(&addr, "/v1/score_span", "{not json");
    assert!(bad.starts_with("HTTP/1.1 400"), "{bad}");
    assert!(bad.contains("\"error\""));

    let missing_field = post(&addr, "/v1/score_span", r#"{"prefix":"[CLS]"}"#);
    assert!(missing_field.starts_with("HTTP/1.1 400"));

    let bad_position = post(&addr, "/v1/conditional", r#"{"tokens":["[CLS]","[SEP]"],"position":9}"#);
    assert!(bad_position.starts_with("HTTP/1.1 400"), "{bad_position}");

    let unknown = raw_request(&addr, "GET /v2/info HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    assert!(unknown.starts_with("HTTP/1.1 404"), "{unknown}");

    let good = post(
        &addr,
        "/v1/score_span",
        r#"{"prefix":"[CLS]","suffix":"[SEP]","candidate":"gout"}"#,
    );
    assert!(good.starts_with("HTTP/1.1 200"));
    assert!(good.contains("per_piece_nll"));
}

#[test]
fn unresponsive_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hold = thread::spawn(move || {
        // accept and never answer
        let conns: Vec<_> = listener.incoming().take(1).collect();
        thread::sleep(Duration::from_secs(3));
        drop(conns);
    });
    let start = Instant::now();
    let r = RemoteScorer::connect(RemoteConfig {
        endpoint: format!("http://{addr}"),
        timeout_ms: 300,
        retries: 0,
        ..Default::default()
    });
    assert!(matches!(r, Err(Error::ScorerUnavailable(_))), "{r:?}");
    assert!(start.elapsed() < Duration::from_secs(3));
    hold.join().unwrap();
}

#[test]
fn refused_connection_is_unavailable() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let r = RemoteScorer::connect(RemoteConfig {
        endpoint: format!("http://127.0.0.1:{port}"),
        timeout_ms: 500,
        retries: 1,
        ..Default::default()
    });
    let err = r.unwrap_err();
    assert!(matches!(err, Error::ScorerUnavailable(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn wrong_version_rejected() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut buf = [0u8; 1024];
        let _ = s.read(&mut buf);
        let body = r#"{"version":"v0","capabilities":[],"vocab_size":1,"model_tag":"old"}"#;
        let _ = write!(
            s,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
    });
    let r = RemoteScorer::connect(RemoteConfig {
        endpoint: format!("http://{addr}"),
        retries: 0,
        ..Default::default()
    });
    assert!(matches!(r, Err(Error::Protocol(_))), "{r:?}");
    server.join().unwrap();
}
