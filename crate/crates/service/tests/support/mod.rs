//! Shared by the HTTP tests: a scratch workspace with fixtures and a script,
//! a live server on an ephemeral port, and small multipart and SSE codecs.
#![allow(dead_code)]

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use mmreact_core::experts::fixture_key;
use mmreact_core::llm::{LlmBackend, LlmError, LlmInput, ScriptedBackend};
use mmreact_core::{Config, Engine};
use mmreact_service::store::Store;
use mmreact_service::{router, AppState};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

pub fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

pub struct Workspace {
    pub dir: TempDir,
    pub data: PathBuf,
    pub fixtures: PathBuf,
}

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let fixtures = dir.path().join("fixtures");
        fs::create_dir_all(&data).unwrap();
        fs::create_dir_all(&fixtures).unwrap();
        let data = fs::canonicalize(data).unwrap();
        Self { dir, data, fixtures }
    }

    /// Where the server will keep these bytes.
    pub fn stored_path(&self, bytes: &[u8], name: &str) -> String {
        let ext = Path::new(name).extension().unwrap().to_str().unwrap().to_ascii_lowercase();
        let file = format!("{}.{ext}", hex::encode(Sha256::digest(bytes)));
        self.data.join("media").join(file).to_string_lossy().into_owned()
    }

    /// Read a shipped media file and make its fixtures answer for the stored
    /// copy. Returns the bytes and the path the server will store them at.
    pub fn media(&self, name: &str) -> (Vec<u8>, String) {
        let bytes = fs::read(assets().join("scenarios/media").join(name)).unwrap();
        let stored = self.stored_path(&bytes, name);
        let from = assets().join("fixtures").join(fixture_key(name));
        let to = self.fixtures.join(fixture_key(&stored));
        fs::create_dir_all(&to).unwrap();
        for entry in fs::read_dir(from).unwrap() {
            let entry = entry.unwrap();
            fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
        }
        (bytes, stored)
    }

    fn config(&self, script: &str) -> Config {
        fs::write(self.dir.path().join("test.script"), script).unwrap();
        let toml = format!(
            "[llm]\nbackend = \"scripted\"\nscript = \"test.script\"\n\n[experts]\nfixtures = \"fixtures\"\n\n[storage]\ndata_dir = \"{}\"\n",
            self.data.display()
        );
        let path = self.dir.path().join("mmreact.toml");
        fs::write(&path, &toml).unwrap();
        Config::parse(&toml, &path).unwrap()
    }

    pub fn engine(&self, script: &str) -> Engine {
        self.config(script).engine().unwrap()
    }

    /// Same script, but every model call takes `delay`.
    pub fn slow_engine(&self, script: &str, delay: Duration) -> Engine {
        let config = self.config(script);
        let inner = ScriptedBackend::from_file(config.llm.script.as_ref().unwrap()).unwrap();
        config.engine_with_backend(Arc::new(Slow { inner, delay })).unwrap()
    }
}

struct Slow {
    inner: ScriptedBackend,
    delay: Duration,
}

impl LlmBackend for Slow {
    fn complete(&self, input: &LlmInput) -> Result<String, LlmError> {
        std::thread::sleep(self.delay);
        self.inner.complete(input)
    }
}

pub struct Server {
    pub base: String,
    pub http: reqwest::Client,
    token: Option<String>,
    task: tokio::task::JoinHandle<()>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub async fn serve(engine: Engine, data: &Path, token: Option<&str>) -> Server {
    let store = Store::open(data).unwrap();
    let app = AppState::open(engine, store, Default::default(), token.map(String::from)).unwrap();
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0)))
        .await
        .unwrap();
    let addr = listener.local_addr().unwrap();
    let task = tokio::spawn(async move {
        axum::serve(listener, router(app)).await.unwrap();
    });
    Server {
        base: format!("http://{addr}/v1"),
        http: reqwest::Client::new(),
        token: token.map(String::from),
        task,
    }
}

impl Server {
    pub fn get(&self, path: &str) -> reqwest::RequestBuilder {
        self.auth(self.http.get(format!("{}{path}", self.base)))
    }

    pub fn post(&self, path: &str) -> reqwest::RequestBuilder {
        self.auth(self.http.post(format!("{}{path}", self.base)))
    }

    fn auth(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    pub async fn create(&self) -> String {
        let resp = self.post("/sessions").send().await.unwrap();
        assert_eq!(resp.status(), 201);
        let body: serde_json::Value = resp.json().await.unwrap();
        body["session_id"].as_str().unwrap().to_string()
    }

    pub fn message(&self, session: &str, text: &str, files: &[(&str, &[u8])]) -> reqwest::RequestBuilder {
        let (content_type, body) = multipart(text, files);
        self.post(&format!("/sessions/{session}/messages"))
            .header("content-type", content_type)
            .body(body)
    }

    /// Post a message and return the turn summary.
    pub async fn say(&self, session: &str, text: &str, files: &[(&str, &[u8])]) -> serde_json::Value {
        let resp = self.message(session, text, files).send().await.unwrap();
        assert_eq!(resp.status(), 200, "{}", resp.text().await.unwrap());
        resp.json().await.unwrap()
    }

    pub async fn trace(&self, session: &str, turn: u64) -> String {
        let resp = self
            .get(&format!("/sessions/{session}/trace?turn={turn}"))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        resp.text().await.unwrap()
    }

    pub async fn session(&self, session: &str) -> String {
        let resp = self.get(&format!("/sessions/{session}")).send().await.unwrap();
        assert_eq!(resp.status(), 200);
        resp.text().await.unwrap()
    }

    pub async fn busy(&self, session: &str) -> bool {
        let view: serde_json::Value = serde_json::from_str(&self.session(session).await).unwrap();
        view["busy"].as_bool().unwrap()
    }
}

const BOUNDARY: &str = "mmreact-test-boundary-7f3a";

pub fn multipart(text: &str, files: &[(&str, &[u8])]) -> (String, Vec<u8>) {
    let mut body = Vec::new();
    body.extend_from_slice(
        format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"text\"\r\n\r\n{text}\r\n").as_bytes(),
    );
    for (name, bytes) in files {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{name}\"\r\nContent-Type: application/octet-stream\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Frame {
    pub event: Option<String>,
    pub id: Option<String>,
    pub data: Option<String>,
    pub comment: Option<String>,
}

pub fn parse_frame(block: &str) -> Frame {
    let mut frame = Frame::default();
    for line in block.lines() {
        let (field, value) = line.split_once(':').unwrap_or((line, ""));
        let value = value.strip_prefix(' ').unwrap_or(value).to_string();
        match field {
            "" => frame.comment = Some(value),
            "event" => frame.event = Some(value),
            "id" => frame.id = Some(value),
            "data" => {
                frame.data = Some(match frame.data.take() {
                    Some(prev) => format!("{prev}\n{value}"),
                    None => value,
                })
            }
            _ => {}
        }
    }
    frame
}

/// An open event stream read frame by frame.
pub struct Sse {
    resp: reqwest::Response,
    buf: String,
}

impl Sse {
    pub async fn open(server: &Server, session: &str) -> Self {
        let resp = server
            .get(&format!("/sessions/{session}/events"))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        Self { resp, buf: String::new() }
    }

    /// Next frame, or None once the server closes the stream.
    pub async fn next(&mut self) -> Option<Frame> {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                return Some(parse_frame(block.trim_end()));
            }
            let chunk = tokio::time::timeout(Duration::from_secs(30), self.resp.chunk())
                .await
                .expect("event stream stalled")
                .unwrap()?;
            self.buf.push_str(std::str::from_utf8(&chunk).unwrap());
        }
    }

    /// Every remaining frame that carries data.
    pub async fn collect(mut self) -> Vec<Frame> {
        let mut frames = Vec::new();
        while let Some(f) = self.next().await {
            if f.data.is_some() {
                frames.push(f);
            }
        }
        frames
    }
}

/// The ndjson body `/trace` would serve for these frames.
pub fn frames_as_trace(frames: &[Frame]) -> String {
    frames
        .iter()
        .map(|f| format!("{}\n", f.data.as_deref().unwrap()))
        .collect()
}
