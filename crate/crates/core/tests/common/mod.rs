#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use ramp_core::corpus::{AttributeExample, AttributeValue, ExamplePool};
use ramp_core::embedding::EmbeddingVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LANGS: [&str; 8] = ["ar", "de", "es", "fr", "hi", "it", "ja", "ru"];

pub fn example(id: &str, lang: &str, attribute: AttributeValue, source: &str) -> AttributeExample {
    AttributeExample {
        id: id.into(),
        source_text: source.into(),
        target_text: format!("{source} [{lang}] mk{}", attribute.as_str()),
        source_lang: "en".into(),
        target_lang: lang.into(),
        attribute,
        markers: vec![format!("mk{}", attribute.as_str())],
        opposite_markers: vec![format!("mk{}", attribute.opposite().as_str())],
    }
}

/// Random formality pool over `langs` with unique sources.
pub fn random_pool(rng: &mut ChaCha8Rng, size: usize, langs: &[&str]) -> ExamplePool {
    let examples = (0..size)
        .map(|i| {
            let lang = langs[rng.gen_range(0..langs.len())];
            let attr = if rng.gen_bool(0.5) { AttributeValue::Formal } else { AttributeValue::Informal };
            example(&format!("x{i}"), lang, attr, &format!("source sentence {i}"))
        })
        .collect();
    ExamplePool::from_examples(examples).unwrap()
}

/// Random unit vectors. Components are drawn from a small integer grid so
/// exact similarity ties occur regularly.
pub fn random_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize, coarse: bool) -> Vec<EmbeddingVector> {
    (0..n).map(|_| random_vector(rng, dim, coarse)).collect()
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize, coarse: bool) -> EmbeddingVector {
    loop {
        let v: Vec<f32> = (0..dim)
            .map(|_| if coarse { rng.gen_range(-1i32..=1) as f32 } else { rng.gen_range(-1.0f32..1.0) })
            .collect();
        if let Ok(v) = EmbeddingVector::normalized(v) {
            return v;
        }
    }
}

pub struct Request {
    pub path: String,
    pub body: String,
}

type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering each request via `handler`.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Request>>>,
    pub hits: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&Request) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let (reqs, count) = (requests.clone(), hits.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let handler = handler.clone();
                let reqs = reqs.clone();
                let count = count.clone();
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
                    let mut len = 0usize;
                    loop {
                        let mut h = String::new();
                        reader.read_line(&mut h).unwrap();
                        if h == "\r\n" || h.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = h.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    let req = Request { path, body: String::from_utf8(body).unwrap() };
                    count.fetch_add(1, Ordering::SeqCst);
                    let (status, resp) = handler(&req);
                    reqs.lock().unwrap().push(req);
                    let msg = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{resp}",
                        resp.len()
                    );
                    let _ = stream.write_all(msg.as_bytes());
                });
            }
        });
        MockServer { url, requests, hits }
    }
}
