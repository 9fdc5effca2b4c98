//! HTTP backend behavior against a local canned-response server:
//! retry on 5xx and connection failures, no retry on 4xx, timeout handling,
//! and a bounded attempt count.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use pvir::backend::{
    Backend, BackendError, GenerateRequest, GenerationParams, HttpBackend, HttpBackendConfig,
};

fn request() -> GenerateRequest {
    GenerateRequest {
        model_id: "m".into(),
        prompt_text: "describe the clip".into(),
        media: vec![],
        params: GenerationParams::default(),
    }
}

fn fast_config(base_url: String) -> HttpBackendConfig {
    let mut cfg = HttpBackendConfig::new(base_url);
    cfg.timeout = Duration::from_millis(500);
    cfg.initial_backoff = Duration::from_millis(5);
    cfg
}

/// Serves one canned HTTP response per accepted connection, in order,
/// counting connections. A `None` entry accepts and stalls without replying.
fn spawn_server(responses: Vec<Option<String>>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let hits_inner = Arc::clone(&hits);
    std::thread::spawn(move || {
        for response in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            hits_inner.fetch_add(1, Ordering::SeqCst);
            // Handle each connection on its own thread so a stalled
            // response does not block the next accept.
            std::thread::spawn(move || handle_connection(stream, response));
        }
    });
    (format!("http://{addr}"), hits)
}

fn handle_connection(mut stream: std::net::TcpStream, response: Option<String>) {
    // Drain the request: headers, then the declared body length.
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let body_len = loop {
        let Ok(n) = stream.read(&mut chunk) else { break 0 };
        if n == 0 {
            break 0;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            let head = String::from_utf8_lossy(&buf[..pos]);
            let len = head
                .lines()
                .find_map(|l| {
                    l.to_ascii_lowercase().strip_prefix("content-length:").map(str::to_string)
                })
                .and_then(|v| v.trim().parse::<usize>().ok())
                .unwrap_or(0);
            let have = buf.len() - pos - 4;
            break len.saturating_sub(have);
        }
    };
    let mut remaining = body_len;
    while remaining > 0 {
        let Ok(n) = stream.read(&mut chunk) else { break };
        if n == 0 {
            break;
        }
        remaining = remaining.saturating_sub(n);
    }
    match response {
        Some(text) => {
            let _ = stream.write_all(text.as_bytes());
        }
        None => {
            // Hold the connection open past the client timeout.
            std::thread::sleep(Duration::from_millis(1500));
        }
    }
}

fn http_response(status: &str, body: &str) -> String {
    format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
}

fn ok_body(text: &str) -> String {
    http_response(
        "200 OK",
        &format!("{{\"text\":\"{text}\",\"finish_reason\":\"stop\",\"latency_ms\":12}}"),
    )
}

#[test]
fn recovers_after_transient_server_errors() {
    let (url, hits) = spawn_server(vec![
        Some(http_response("500 Internal Server Error", "{}")),
        Some(http_response("503 Service Unavailable", "{}")),
        Some(ok_body("all good")),
    ]);
    let backend = HttpBackend::new(fast_config(url));
    let resp = backend.generate(&request()).unwrap();
    assert_eq!(resp.text, "all good");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_bounded_attempts() {
    let (url, hits) = spawn_server(vec![
        Some(http_response("500 Internal Server Error", "{}")),
        Some(http_response("500 Internal Server Error", "{}")),
        Some(http_response("500 Internal Server Error", "{}")),
        Some(ok_body("too late")),
    ]);
    let backend = HttpBackend::new(fast_config(url));
    let err = backend.generate(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Protocol { .. }), "got {err}");
    assert_eq!(hits.load(Ordering::SeqCst), 3, "must stop at max_attempts");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits) = spawn_server(vec![
        Some(http_response("404 Not Found", "{}")),
        Some(ok_body("unreachable")),
    ]);
    let backend = HttpBackend::new(fast_config(url));
    let err = backend.generate(&request()).unwrap_err();
    match err {
        BackendError::Protocol { reason, .. } => assert!(reason.contains("404"), "{reason}"),
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn timeout_then_success() {
    let (url, hits) = spawn_server(vec![None, Some(ok_body("eventually"))]);
    let backend = HttpBackend::new(fast_config(url));
    let resp = backend.generate(&request()).unwrap();
    assert_eq!(resp.text, "eventually");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn connection_refused_is_transient_and_bounded() {
    // Bind then immediately drop so the port is very likely closed.
    let addr = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap()
    };
    let backend = HttpBackend::new(fast_config(format!("http://{addr}")));
    let err = backend.generate(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Protocol { .. } | BackendError::Timeout { .. }));
}

#[test]
fn malformed_success_body_is_a_protocol_error() {
    let (url, _) = spawn_server(vec![Some(http_response("200 OK", "not json"))]);
    let backend = HttpBackend::new(fast_config(url));
    let err = backend.generate(&request()).unwrap_err();
    match err {
        BackendError::Protocol { reason, .. } => {
            assert!(reason.contains("malformed"), "{reason}")
        }
        other => panic!("unexpected error {other}"),
    }
}
