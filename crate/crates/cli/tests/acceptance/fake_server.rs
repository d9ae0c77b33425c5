//! A local chat-completion endpoint answering from a table of canned
//! replies keyed by the prompt text, and counting every connection.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

const DOCUMENT_END: &str = "--- DOCUMENT END ---\n\n";

pub struct FakeServer {
    pub url: String,
    connections: Arc<AtomicUsize>,
}

impl FakeServer {
    /// `replies` maps a rendered prompt to the reply text.
    pub fn start(replies: HashMap<String, String>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind local port");
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let connections = Arc::new(AtomicUsize::new(0));
        let counter = connections.clone();
        let replies = Arc::new(replies);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                counter.fetch_add(1, Ordering::SeqCst);
                let replies = replies.clone();
                thread::spawn(move || serve(stream, &replies));
            }
        });
        FakeServer { url, connections }
    }

    pub fn connections(&self) -> usize {
        self.connections.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, replies: &HashMap<String, String>) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut out = stream;
    loop {
        let mut content_length = 0usize;
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        loop {
            let mut header = String::new();
            if reader.read_line(&mut header).unwrap_or(0) == 0 {
                return;
            }
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((name, value)) = header.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; content_length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let (status, payload) = answer(&body, replies);
        let payload = payload.to_string();
        let response = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
            payload.len()
        );
        if out
            .write_all(response.as_bytes())
            .and_then(|_| out.flush())
            .is_err()
        {
            return;
        }
    }
}

fn answer(body: &[u8], replies: &HashMap<String, String>) -> (&'static str, Value) {
    let Ok(request) = serde_json::from_slice::<Value>(body) else {
        return ("400 Bad Request", json!({"error": "body is not JSON"}));
    };
    let user = request
        .pointer("/messages/1/content")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let prompt = user
        .split_once(DOCUMENT_END)
        .map(|(_, p)| p)
        .unwrap_or_default();
    match replies.get(prompt) {
        Some(reply) => (
            "200 OK",
            json!({"choices": [{"message": {"role": "assistant", "content": reply}, "finish_reason": "stop"}]}),
        ),
        None => ("404 Not Found", json!({"error": "no canned reply"})),
    }
}
