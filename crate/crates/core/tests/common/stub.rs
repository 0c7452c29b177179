#![allow(dead_code)]

//! Minimal HTTP/1.1 server answering chat-completion posts from a script.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use electosim_core::backend::{Clock, FakeClock};

#[derive(Debug, Clone)]
pub struct StubReply {
    pub status: u16,
    pub body: String,
    pub retry_after: Option<u64>,
    pub delay: Duration,
}

impl StubReply {
    pub fn ok(text: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 1, "total_tokens": 11}
        });
        Self { status: 200, body: body.to_string(), retry_after: None, delay: Duration::ZERO }
    }

    pub fn status(status: u16) -> Self {
        Self { status, body: format!("{{\"error\":\"status {status}\"}}"), retry_after: None, delay: Duration::ZERO }
    }

    pub fn raw(status: u16, body: &str) -> Self {
        Self { status, body: body.to_string(), retry_after: None, delay: Duration::ZERO }
    }

    pub fn retry_after(mut self, secs: u64) -> Self {
        self.retry_after = Some(secs);
        self
    }

    pub fn delayed(mut self, d: Duration) -> Self {
        self.delay = d;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Received {
    pub headers: Vec<(String, String)>,
    pub body: String,
    /// Fake-clock time at arrival, when the server was given a clock.
    pub at: Option<Duration>,
}

impl Received {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

struct Shared {
    script: Mutex<Vec<StubReply>>,
    fallback: StubReply,
    received: Mutex<Vec<Received>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    clock: Option<FakeClock>,
}

pub struct StubServer {
    pub url: String,
    shared: Arc<Shared>,
}

impl StubServer {
    /// Replies with `script` in order, then with `fallback` forever.
    pub fn start(script: Vec<StubReply>, fallback: StubReply) -> Self {
        Self::start_with_clock(script, fallback, None)
    }

    pub fn start_with_clock(script: Vec<StubReply>, fallback: StubReply, clock: Option<FakeClock>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let mut script = script;
        script.reverse();
        let shared = Arc::new(Shared {
            script: Mutex::new(script),
            fallback,
            received: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            clock,
        });
        let s = shared.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let s = s.clone();
                thread::spawn(move || handle(stream, &s));
            }
        });
        Self { url, shared }
    }

    pub fn received(&self) -> Vec<Received> {
        self.shared.received.lock().unwrap().clone()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak.load(Ordering::SeqCst)
    }
}

fn handle(stream: TcpStream, s: &Shared) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut headers = Vec::new();
    let mut len = 0usize;
    loop {
        line.clear();
        reader.read_line(&mut line).unwrap();
        let t = line.trim_end();
        if t.is_empty() {
            break;
        }
        if let Some((k, v)) = t.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();

    let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    s.peak.fetch_max(now, Ordering::SeqCst);
    let at = s.clock.as_ref().map(|c| c.now());
    s.received.lock().unwrap().push(Received { headers, body: String::from_utf8(body).unwrap(), at });
    let reply = s.script.lock().unwrap().pop().unwrap_or_else(|| s.fallback.clone());
    thread::sleep(reply.delay);
    s.in_flight.fetch_sub(1, Ordering::SeqCst);

    let mut out = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    if let Some(secs) = reply.retry_after {
        out.push_str(&format!("Retry-After: {secs}\r\n"));
    }
    out.push_str("\r\n");
    out.push_str(&reply.body);
    let mut stream = stream;
    let _ = stream.write_all(out.as_bytes());
    let _ = stream.flush();
}
