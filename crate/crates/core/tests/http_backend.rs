mod common;
#[path = "common/stub.rs"]
mod stub;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use electosim_core::backend::{
    BackendError, BackendPolicy, ChatBackend, ChatRequest, FakeClock, HttpBackend, SystemClock, UreqTransport,
};
use electosim_core::pipeline::{run_pipeline, PipelineError, PipelineOptions};
use electosim_core::PipelineVersion;
use stub::{StubReply, StubServer};

fn policy() -> BackendPolicy {
    BackendPolicy { timeout: Duration::from_secs(5), ..BackendPolicy::default() }
}

fn backend(server: &StubServer, policy: BackendPolicy, clock: FakeClock) -> HttpBackend<UreqTransport, FakeClock> {
    let transport = UreqTransport::new(&server.url, Some("sk-test".into()), policy.timeout);
    HttpBackend::with_transport(transport, policy, clock)
}

#[test]
fn posts_openai_shaped_json_with_bearer_auth() {
    let server = StubServer::start(vec![], StubReply::ok("Republican"));
    let b = backend(&server, policy(), FakeClock::new());
    let mut req = ChatRequest::new("gpt-4o", "Who will you vote for?");
    req.system_text = Some("Answer briefly.".into());
    let resp = b.complete(&req).unwrap();
    assert_eq!(resp.text, "Republican");
    assert_eq!(resp.attempt_count, 1);
    assert_eq!(resp.usage.total_tokens, 11);

    let got = &server.received()[0];
    assert_eq!(got.header("authorization"), Some("Bearer sk-test"));
    let v: serde_json::Value = serde_json::from_str(&got.body).unwrap();
    assert_eq!(v["model"], "gpt-4o");
    assert_eq!(v["temperature"], 0.0);
    assert_eq!(v["max_tokens"], 256);
    assert_eq!(v["messages"][0]["role"], "system");
    assert_eq!(v["messages"][1]["content"], "Who will you vote for?");
}

#[test]
fn rate_limited_reply_is_retried_after_backoff() {
    let server = StubServer::start(vec![StubReply::status(429)], StubReply::ok("Democratic"));
    let clock = FakeClock::new();
    let b = backend(&server, policy(), clock.clone());
    let resp = b.complete(&ChatRequest::new("m", "q")).unwrap();
    assert_eq!(resp.text, "Democratic");
    assert_eq!(resp.attempt_count, 2);
    assert_eq!(server.received().len(), 2);
    assert_eq!(clock.sleeps(), vec![Duration::from_millis(500)]);
}

#[test]
fn retry_after_header_extends_the_wait() {
    let server = StubServer::start(vec![StubReply::status(429).retry_after(3)], StubReply::ok("Democratic"));
    let clock = FakeClock::new();
    let b = backend(&server, policy(), clock.clone());
    b.complete(&ChatRequest::new("m", "q")).unwrap();
    assert_eq!(clock.sleeps(), vec![Duration::from_secs(3)]);
}

#[test]
fn server_errors_back_off_geometrically() {
    let script = vec![StubReply::status(500), StubReply::status(502), StubReply::status(503)];
    let server = StubServer::start(script, StubReply::ok("Democratic"));
    let clock = FakeClock::new();
    let b = backend(&server, policy(), clock.clone());
    let resp = b.complete(&ChatRequest::new("m", "q")).unwrap();
    assert_eq!(resp.attempt_count, 4);
    assert_eq!(clock.sleeps(), vec![Duration::from_millis(500), Duration::from_secs(1), Duration::from_secs(2)]);
}

#[test]
fn retries_exhaust() {
    let server = StubServer::start(vec![], StubReply::status(503));
    let clock = FakeClock::new();
    let b = backend(&server, BackendPolicy { max_retries: 2, ..policy() }, clock.clone());
    let err = b.complete(&ChatRequest::new("m", "q")).unwrap_err();
    assert!(matches!(err, BackendError::Exhausted { attempts: 3, .. }), "{err:?}");
    assert_eq!(server.received().len(), 3);
}

#[test]
fn unauthorized_aborts_without_retry() {
    for status in [401, 403] {
        let server = StubServer::start(vec![], StubReply::status(status));
        let clock = FakeClock::new();
        let b = backend(&server, policy(), clock.clone());
        let err = b.complete(&ChatRequest::new("m", "q")).unwrap_err();
        assert_eq!(err, BackendError::Auth { status });
        assert_eq!(server.received().len(), 1);
        assert!(clock.sleeps().is_empty());
    }
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(vec![], StubReply::status(400));
    let b = backend(&server, policy(), FakeClock::new());
    assert!(matches!(b.complete(&ChatRequest::new("m", "q")), Err(BackendError::Http { status: 400, .. })));
    assert_eq!(server.received().len(), 1);
}

#[test]
fn malformed_success_body() {
    let server = StubServer::start(vec![], StubReply::raw(200, "{\"choices\":[]}"));
    let b = backend(&server, policy(), FakeClock::new());
    assert!(matches!(b.complete(&ChatRequest::new("m", "q")), Err(BackendError::Malformed(_))));
}

#[test]
fn timeouts_are_retried_then_exhausted() {
    let server = StubServer::start(vec![], StubReply::ok("late").delayed(Duration::from_millis(800)));
    let p = BackendPolicy { timeout: Duration::from_millis(150), max_retries: 1, ..BackendPolicy::default() };
    let b = backend(&server, p, FakeClock::new());
    match b.complete(&ChatRequest::new("m", "q")) {
        Err(BackendError::Exhausted { attempts: 2, last }) => assert!(last.contains("timeout"), "{last}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn sliding_window_never_exceeds_limit() {
    let clock = FakeClock::new();
    let server = StubServer::start_with_clock(vec![], StubReply::ok("Democratic"), Some(clock.clone()));
    let limit = 10;
    let b = backend(&server, BackendPolicy { requests_per_minute: limit, ..policy() }, clock.clone());
    for _ in 0..35 {
        b.complete(&ChatRequest::new("m", "q")).unwrap();
        clock.advance(Duration::from_millis(700));
    }
    let times: Vec<Duration> = server.received().iter().map(|r| r.at.unwrap()).collect();
    assert_eq!(times.len(), 35);
    for (i, start) in times.iter().enumerate() {
        let in_window = times[i..].iter().filter(|t| **t - *start < Duration::from_secs(60)).count();
        assert!(in_window <= limit, "{in_window} requests within 60 s of {start:?}");
    }
    // The limiter had to wait: 35 requests at 10/min span at least three windows.
    assert!(*times.last().unwrap() >= Duration::from_secs(180));
}

#[test]
fn in_flight_never_exceeds_max_concurrency() {
    let server = StubServer::start(vec![], StubReply::ok("Democratic").delayed(Duration::from_millis(60)));
    let p = BackendPolicy { max_concurrency: 3, requests_per_minute: 10_000, ..policy() };
    let transport = UreqTransport::new(&server.url, None, p.timeout);
    let b = Arc::new(HttpBackend::with_transport(transport, p, SystemClock::default()));
    let handles: Vec<_> = (0..12)
        .map(|_| {
            let b = b.clone();
            thread::spawn(move || b.complete(&ChatRequest::new("m", "q")).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(server.received().len(), 12);
    assert!(server.peak_in_flight() <= 3, "peak {}", server.peak_in_flight());
    assert!(server.peak_in_flight() >= 2, "requests never overlapped");
}

#[test]
fn pipeline_run_aborts_on_auth_failure() {
    let server = StubServer::start(vec![], StubReply::status(401));
    let b = backend(&server, policy(), FakeClock::new());
    let personas: Vec<_> = (0..5).map(|i| common::teacher(&format!("p{i}"))).collect();
    let opts = PipelineOptions { workers: 1, ..PipelineOptions::default() };
    let err = run_pipeline(&personas, PipelineVersion::V1, &common::context_2020(), &b, &opts, None).unwrap_err();
    assert!(matches!(err, PipelineError::Backend(BackendError::Auth { status: 401 })));
    assert_eq!(server.received().len(), 1);
}

#[test]
fn pipeline_over_http() {
    let server = StubServer::start(vec![StubReply::ok("Unsure"), StubReply::ok("Moderate")], StubReply::ok("Republican"));
    let b = backend(&server, policy(), FakeClock::new());
    let personas = vec![common::teacher("p0")];
    let opts = PipelineOptions { workers: 1, ..PipelineOptions::default() };
    let recs = run_pipeline(&personas, PipelineVersion::V3, &common::context_2020(), &b, &opts, None).unwrap();
    assert_eq!(recs[0].step1_attempts, 2);
    assert_eq!(recs[0].inferred_ideology, Some(electosim_core::IdeologyLabel::Moderate));
    assert_eq!(recs[0].vote, Some(electosim_core::VoteChoice::Republican));
    let bodies = server.received();
    let reask: serde_json::Value = serde_json::from_str(&bodies[1].body).unwrap();
    assert!(reask["messages"][0]["content"].as_str().unwrap().ends_with("Please answer with exactly one of the listed options."));
}
