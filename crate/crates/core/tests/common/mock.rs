//! Scripted chat-completions endpoint on a local socket.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use papertrace::backend::remote::{RemoteBackend, RemoteConfig, RetryPolicy};

#[derive(Clone)]
pub struct Scripted {
    pub status: u16,
    pub body: String,
}

impl Scripted {
    pub fn status(status: u16) -> Self {
        Self { status, body: format!("{{\"error\": \"status {status}\"}}") }
    }

    /// A successful completion whose message content is `content`.
    pub fn reply(content: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 5},
        });
        Self { status: 200, body: body.to_string() }
    }
}

pub struct MockServer {
    pub url: String,
    requests: Arc<Mutex<Vec<serde_json::Value>>>,
}

impl MockServer {
    /// Serves `script` in order; the last entry repeats forever.
    pub fn start(script: Vec<Scripted>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        std::thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { continue };
                stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((name, value)) = line.split_once(':') {
                        if name.eq_ignore_ascii_case("content-length") {
                            length = value.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).ok();
                seen.lock().unwrap().push(serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null));
                let reply = &script[i.min(script.len() - 1)];
                let response = format!(
                    "HTTP/1.1 {} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    reply.status,
                    reply.body.len(),
                    reply.body
                );
                stream.write_all(response.as_bytes()).ok();
                stream.flush().ok();
            }
        });
        Self { url, requests }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<serde_json::Value> {
        self.requests.lock().unwrap().clone()
    }

    /// A remote backend pointed at this server with millisecond backoff.
    pub fn backend(&self) -> RemoteBackend {
        let config = RemoteConfig {
            base_url: self.url.clone(),
            model_id: "mock-model".into(),
            parallelism: 1,
            retry: RetryPolicy { base_delay_ms: 2, max_delay_ms: 20, ..RetryPolicy::default() },
            timeout_secs: 10,
            ..RemoteConfig::default()
        };
        RemoteBackend::with_credential(config, "test-key".into())
    }
}
