//! Local HTTP server speaking the provider wire format, for tests.
//!
//! Embeddings are derived from SHA-256 of the input string unless a custom
//! embedder is installed. Captions come from an explicit table, falling
//! back to a short deterministic phrase.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub type Embedder = Arc<dyn Fn(&str, &str) -> Vec<f64> + Send + Sync>;

#[derive(Clone, Debug, PartialEq)]
pub enum MockCaption {
    Text(String),
    Refuse,
}

#[derive(Clone)]
pub struct MockConfig {
    pub dim: usize,
    /// The first `fail_first` requests get `fail_status`.
    pub fail_first: usize,
    pub fail_status: u16,
    /// Keyed by the wire input (base64 image).
    pub captions: HashMap<String, MockCaption>,
    /// `(model, input) -> vector`; overrides the hash embedding.
    pub embedder: Option<Embedder>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            fail_first: 0,
            fail_status: 503,
            captions: HashMap::new(),
            embedder: None,
        }
    }
}

/// Deterministic pseudo-embedding of `input`, values in [-1, 1].
pub fn hash_embedding(model: &str, input: &str, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let d = Sha256::new()
                .chain_update(model.as_bytes())
                .chain_update([0])
                .chain_update(input.as_bytes())
                .chain_update((i as u64).to_le_bytes())
                .finalize();
            let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
            (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

const WORDS: [&str; 12] = [
    "house", "tree", "cat", "boat", "face", "flower", "car", "bird", "sun", "robot", "fish", "mountain",
];

fn default_caption(input: &str) -> String {
    let d = Sha256::digest(input.as_bytes());
    if d[2] % 10 == 0 {
        return "hard to interpret".into();
    }
    format!("a {} next to a {}", WORDS[d[0] as usize % WORDS.len()], WORDS[d[1] as usize % WORDS.len()])
}

pub struct MockServer {
    addr: String,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(config: MockConfig) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?.to_string();
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let config = Arc::new(config);
        let handle = {
            let (requests, stop) = (requests.clone(), stop.clone());
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let (requests, config) = (requests.clone(), config.clone());
                    std::thread::spawn(move || {
                        let _ = serve(stream, &config, &requests);
                    });
                }
            })
        };
        Ok(Self {
            addr,
            requests,
            stop,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(&self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, config: &MockConfig, requests: &AtomicUsize) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut len = 0usize;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.is_empty() {
        return Ok(());
    }
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    let n = requests.fetch_add(1, Ordering::SeqCst);

    let (status, reply) = if n < config.fail_first {
        (config.fail_status, json!({"error": "unavailable"}))
    } else {
        match serde_json::from_slice::<Value>(&body) {
            Ok(req) => (200, respond(&req, config)),
            Err(e) => (400, json!({"error": e.to_string()})),
        }
    };
    let text = reply.to_string();
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    )?;
    out.flush()
}

fn respond(req: &Value, config: &MockConfig) -> Value {
    let model = req["model"].as_str().unwrap_or("");
    let inputs: Vec<&str> = req["input"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    let captioning = req.get("prompt").is_some();
    let data: Vec<Value> = inputs
        .iter()
        .map(|input| {
            if captioning {
                match config.captions.get(*input) {
                    Some(MockCaption::Refuse) => json!({"refusal": "cannot help with that"}),
                    Some(MockCaption::Text(t)) => json!({"text": t}),
                    None => json!({"text": default_caption(input)}),
                }
            } else {
                let v = match &config.embedder {
                    Some(f) => f(model, input),
                    None => hash_embedding(model, input, config.dim),
                };
                json!({"embedding": v})
            }
        })
        .collect();
    json!({"data": data})
}
