mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use narrative_core::backend::{
    server, Backend, BackendError, EmbedRequest, GenRequest, HttpBackend, HttpConfig, MockBackend, ScoreRequest,
};

use common::FlakyBackend;

fn client(url: String, retries: u32) -> HttpBackend {
    let mut cfg = HttpConfig::new(url, "mock");
    cfg.max_retries = retries;
    cfg.initial_backoff = Duration::from_millis(1);
    cfg.max_backoff = Duration::from_millis(4);
    cfg.timeout = Duration::from_secs(10);
    HttpBackend::new(cfg)
}

fn score_req() -> ScoreRequest {
    ScoreRequest {
        prompt: "Tweet: crypto is a scam\nStance:".into(),
        continuations: vec!["for".into(), "against".into()],
    }
}

#[test]
fn served_mock_matches_in_process_mock() {
    let local = MockBackend::new(5);
    let handle = server::serve(Arc::new(MockBackend::new(5)), "127.0.0.1:0", 2).unwrap();
    let remote = client(handle.url(), 0);

    let gen: Vec<GenRequest> = ["Topic: Crypto\nNarrative:", "Topic: Abortion\nNarrative:", "x"]
        .iter()
        .map(|p| GenRequest::new(*p, 12))
        .collect();
    let got: Vec<_> = remote.generate_batch(&gen).into_iter().map(Result::unwrap).collect();
    let want: Vec<_> = gen.iter().map(|r| local.generate(r).unwrap()).collect();
    assert_eq!(got, want);

    assert_eq!(remote.score(&score_req()).unwrap(), local.score(&score_req()).unwrap());

    for req in [
        EmbedRequest::sequence(vec!["a b".into(), "c".into()]),
        EmbedRequest::token(vec!["a b".into(), "".into()]),
    ] {
        assert_eq!(remote.embed(&req).unwrap(), local.embed(&req).unwrap());
    }
    handle.shutdown();
}

#[test]
fn transport_failures_are_retried() {
    let flaky = Arc::new(FlakyBackend::new(MockBackend::new(1), 2, || {
        BackendError::Transport("overloaded".into())
    }));
    let handle = server::serve(flaky.clone(), "127.0.0.1:0", 1).unwrap();
    let remote = client(handle.url(), 4);
    assert_eq!(remote.score(&score_req()).unwrap(), MockBackend::new(1).score(&score_req()).unwrap());
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let flaky = Arc::new(FlakyBackend::new(MockBackend::new(1), 100, || {
        BackendError::Transport("down".into())
    }));
    let handle = server::serve(flaky.clone(), "127.0.0.1:0", 1).unwrap();
    let e = client(handle.url(), 2).score(&score_req()).unwrap_err();
    assert!(e.is_retryable(), "{e}");
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let flaky = Arc::new(FlakyBackend::new(MockBackend::new(1), 100, || BackendError::Remote {
        status: 422,
        message: "prompt too long".into(),
    }));
    let handle = server::serve(flaky.clone(), "127.0.0.1:0", 1).unwrap();
    let e = client(handle.url(), 4).score(&score_req()).unwrap_err();
    assert!(matches!(&e, BackendError::Remote { status: 422, message } if message.contains("prompt too long")), "{e}");
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn invalid_requests_fail_before_sending() {
    let remote = client("http://127.0.0.1:9".into(), 0);
    let e = remote
        .score(&ScoreRequest {
            prompt: "p".into(),
            continuations: vec![],
        })
        .unwrap_err();
    assert!(matches!(e, BackendError::InvalidRequest(_)), "{e}");
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let e = client(url, 1).score(&score_req()).unwrap_err();
    assert!(matches!(e, BackendError::Transport(_)), "{e}");
}

/// Answer every request with the same body.
fn canned(body: &'static str) -> (String, std::thread::JoinHandle<()>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let t = std::thread::spawn(move || {
        if let Ok(Some(req)) = server.recv_timeout(Duration::from_secs(10)) {
            let _ = req.respond(tiny_http::Response::from_string(body));
        }
    });
    (url, t)
}

#[test]
fn malformed_responses_are_protocol_errors() {
    for body in [
        r#"{"id": 1, "logprobs": [-1.0]}"#,
        r#"{"id": 999, "logprobs": [-1.0, -2.0]}"#,
        r#"not json"#,
    ] {
        let (url, t) = canned(body);
        let e = client(url, 3).score(&score_req()).unwrap_err();
        assert!(matches!(e, BackendError::Protocol(_)), "{body}: {e}");
        t.join().unwrap();
    }
}
