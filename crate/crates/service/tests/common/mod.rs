#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use hs_assist::corpus::temporal_split;
use hs_assist::encoder::{calibrate_temperature, train, EncoderConfig};
use hs_assist::eval::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec};
use hs_assist_service::{router, AppState, Snapshot};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

pub fn small_snapshot() -> (Snapshot, SyntheticCorpus) {
    let spec = SyntheticSpec {
        n_train: 300,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec).unwrap();
    let (tr, va, _) = temporal_split(&corpus.cases, spec.n_val, spec.n_test).unwrap();
    let config = EncoderConfig {
        dim: 16,
        epochs: 15,
        seed: 1,
        ..Default::default()
    };
    let model = train(&tr, &va, &config).unwrap();
    let (model, _) = calibrate_temperature(&model, &va).unwrap();
    (Snapshot::new(model, corpus.manual.clone(), corpus.kb.clone()), corpus)
}

/// Serves `state` on an ephemeral local port.
pub async fn spawn(state: Arc<AppState>) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(state, None)).await.unwrap();
    });
    addr
}

pub struct Reply {
    pub status: u16,
    pub headers: String,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or(serde_json::Value::Null)
    }

    pub fn error_code(&self) -> String {
        self.json()["error"]["code"].as_str().unwrap_or("").to_owned()
    }
}

/// Minimal HTTP/1.1 exchange over a fresh connection.
pub async fn request(addr: SocketAddr, method: &str, path: &str, body: Option<&str>, extra: &[(&str, &str)]) -> Reply {
    let mut stream = TcpStream::connect(addr).await.unwrap();
    let mut head = format!("{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n");
    for (k, v) in extra {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    let body = body.unwrap_or("");
    if !body.is_empty() || method == "POST" {
        head.push_str(&format!(
            "Content-Type: application/json\r\nContent-Length: {}\r\n",
            body.len()
        ));
    }
    head.push_str("\r\n");
    stream.write_all(head.as_bytes()).await.unwrap();
    stream.write_all(body.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8(raw).unwrap();
    let (headers, body) = text.split_once("\r\n\r\n").unwrap();
    let status = headers.split(' ').nth(1).unwrap().parse().unwrap();
    let body = if headers.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        dechunk(body)
    } else {
        body.to_owned()
    };
    Reply {
        status,
        headers: headers.to_owned(),
        body,
    }
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(size.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

pub async fn post(addr: SocketAddr, path: &str, body: &str) -> Reply {
    request(addr, "POST", path, Some(body), &[]).await
}

pub async fn get(addr: SocketAddr, path: &str) -> Reply {
    request(addr, "GET", path, None, &[]).await
}

/// Report JSON with the generation timestamp removed.
pub fn report_without_timestamp(reply: &Reply) -> serde_json::Value {
    let mut report = reply.json()["report"].clone();
    if let Some(obj) = report.as_object_mut() {
        obj.remove("generated_at");
    }
    report
}
