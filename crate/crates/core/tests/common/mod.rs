#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

/// A canned HTTP response: status and body.
pub type Responder = dyn Fn(&serde_json::Value) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server that answers each connection with `respond` and
/// records every request body it receives.
pub struct StubServer {
    pub url: String,
    pub bodies: Arc<Mutex<Vec<serde_json::Value>>>,
    pub auth_headers: Arc<Mutex<Vec<Option<String>>>>,
    _handle: JoinHandle<()>,
}

impl StubServer {
    pub fn start(respond: Box<Responder>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let auth_headers = Arc::new(Mutex::new(Vec::new()));
        let (b, a) = (bodies.clone(), auth_headers.clone());
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                serve(stream, &*respond, &b, &a);
            }
        });
        Self {
            url,
            bodies,
            auth_headers,
            _handle: handle,
        }
    }

    pub fn requests(&self) -> usize {
        self.bodies.lock().unwrap().len()
    }
}

fn serve(
    stream: TcpStream,
    respond: &Responder,
    bodies: &Mutex<Vec<serde_json::Value>>,
    auth: &Mutex<Vec<Option<String>>>,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
    let (status, payload) = respond(&json);
    bodies.lock().unwrap().push(json);
    auth.lock().unwrap().push(authorization);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.flush();
}

/// Chat-completion response body carrying `content` as the first choice.
pub fn completion_body(content: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

/// Replies like a cooperative model: answers, notes once after feedback, then finishes.
pub fn cooperative_model(body: &serde_json::Value) -> (u16, String) {
    let last = body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default();
    let reply = if last.contains("Your answer is") {
        "NOTE[stub, letter]: count positions from the first letter."
    } else if last.starts_with("Experience noted") {
        "ANSWER[done]"
    } else {
        "ANSWER[abc]"
    };
    (200, completion_body(reply))
}
