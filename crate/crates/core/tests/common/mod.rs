#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

/// What the mock server does with the k-th request (0-based).
pub enum Reply {
    Json(u16, String),
    /// Hold the connection open without answering.
    Sleep(Duration),
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub body: String,
    pub authorization: Option<String>,
}

pub struct MockServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
}

impl MockServer {
    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

type Script = dyn Fn(usize, &str) -> Reply + Send + Sync;

/// Minimal HTTP/1.1 server answering each request from `script`, one thread
/// per connection.
pub fn serve(script: impl Fn(usize, &str) -> Reply + Send + Sync + 'static) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/evaluate", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&requests);
    let script: Arc<Script> = Arc::new(script);
    thread::spawn(move || {
        for (k, stream) in listener.incoming().enumerate() {
            let Ok(stream) = stream else { continue };
            let (log, script) = (Arc::clone(&log), Arc::clone(&script));
            thread::spawn(move || handle(k, stream, &log, &*script));
        }
    });
    MockServer { url, requests }
}

fn handle(k: usize, mut stream: TcpStream, log: &Mutex<Vec<Recorded>>, script: &Script) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap_or(0);
        }
        if lower.starts_with("authorization:") {
            authorization = Some(line["authorization:".len()..].trim().to_string());
        }
    }
    let mut body = vec![0u8; len];
    let _ = reader.read_exact(&mut body);
    let body = String::from_utf8_lossy(&body).to_string();
    log.lock().unwrap().push(Recorded {
        body: body.clone(),
        authorization,
    });
    match script(k, &body) {
        Reply::Json(status, text) => {
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
        Reply::Sleep(d) => thread::sleep(d),
    }
}

pub fn ok(score: f64) -> Reply {
    Reply::Json(200, format!("{{\"score\": {score}, \"n_instances\": 100}}"))
}
