//! Local completion-server stub with fault injection.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

#[derive(Debug, Default)]
pub struct StubStats {
    pub requests: AtomicUsize,
    pub faults: AtomicUsize,
}

pub struct Stub {
    pub url: String,
    pub stats: Arc<StubStats>,
}

/// Top-4 listing for probe requests: A, B and C plus one non-label token, so
/// label D is absent and must take the floor.
pub const PROBE_LISTING: [(&str, f64); 4] = [("A", 0.5), ("B", 0.3), ("C", 0.1), (" the", 0.05)];

/// Starts the stub. The first `fail_first` requests get HTTP 500.
///
/// Routes: `/v1/completions` answers probes and two-step generations;
/// `/bad/v1/completions` answers without log-probabilities.
pub fn start(fail_first: usize) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let stats = Arc::new(StubStats::default());
    let st = Arc::clone(&stats);
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(conn) = conn else { continue };
            let n = st.requests.fetch_add(1, Ordering::SeqCst);
            let fault = n < fail_first;
            if fault {
                st.faults.fetch_add(1, Ordering::SeqCst);
            }
            let _ = serve(conn, fault);
        }
    });
    Stub { url, stats }
}

fn serve(mut conn: TcpStream, fault: bool) -> std::io::Result<()> {
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("/")
        .to_string();
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    let (status, reply) = if fault {
        ("500 Internal Server Error", json!({"error": "injected"}))
    } else {
        let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        ("200 OK", respond(&path, &req))
    };
    let text = reply.to_string();
    write!(
        conn,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    )?;
    conn.flush()
}

fn respond(path: &str, req: &Value) -> Value {
    if path.starts_with("/bad") {
        return json!({"choices": [{"text": "A"}]});
    }
    let prompt = req["prompt"].as_str().unwrap_or("");
    if req["max_tokens"] == 1 {
        let top: serde_json::Map<String, Value> = PROBE_LISTING
            .iter()
            .map(|(t, p)| (t.to_string(), json!(p.ln())))
            .collect();
        return json!({"choices": [{"text": "A", "logprobs": {"top_logprobs": [top]}}]});
    }
    let (tokens, finish) = if prompt.contains("Water is wet.") {
        (vec!["So,", " the", " answer", " is", " (B)."], "stop")
    } else {
        (vec!["Water", " is", " wet.", " ", "Extra"], "length")
    };
    json!({"choices": [{
        "text": tokens.concat(),
        "finish_reason": finish,
        "logprobs": {"tokens": tokens}
    }]})
}
