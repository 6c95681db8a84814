use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmError, LlmInput};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteChatConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: f32,
    pub stop: Vec<String>,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl RemoteChatConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            temperature: 0.0,
            stop: Vec::new(),
            max_retries: 2,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

pub struct RemoteChatBackend {
    config: RemoteChatConfig,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteChatBackend")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

enum Attempt {
    Done(String),
    Retry(LlmError),
    Fail(LlmError),
}

impl RemoteChatBackend {
    pub fn new(config: RemoteChatConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn request_body(&self, input: &LlmInput) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages: input
                .segments()
                .iter()
                .map(|s| ChatMessage {
                    role: s.role.as_str().to_string(),
                    content: s.text.clone(),
                })
                .collect(),
            temperature: self.config.temperature,
            stop: self.config.stop.clone(),
        }
    }

    fn attempt(&self, url: &str, body: &ChatRequest) -> Attempt {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = match request.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string())),
        };
        let status = response.status();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string())),
        };
        if !status.is_success() {
            let err = LlmError::Status {
                status: status.as_u16(),
                body: text.chars().take(300).collect(),
            };
            return if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            };
        }
        match serde_json::from_str::<ChatResponse>(&text) {
            Ok(parsed) => match parsed.choices.into_iter().next() {
                Some(choice) => Attempt::Done(choice.message.content),
                None => Attempt::Fail(LlmError::BadResponse("no choices in response".into())),
            },
            Err(e) => Attempt::Fail(LlmError::BadResponse(e.to_string())),
        }
    }
}

impl LlmBackend for RemoteChatBackend {
    fn complete(&self, input: &LlmInput) -> Result<String, LlmError> {
        if input.dialogue().is_empty() {
            return Err(LlmError::EmptyInput);
        }
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = self.request_body(input);
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&url, &body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(err) => return Err(err),
                Attempt::Retry(err) if attempt >= self.config.max_retries => return Err(err),
                Attempt::Retry(err) => {
                    tracing::warn!(attempt, error = %err, "retrying model call");
                    thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::SegmentRole;
    use crate::testutil::{body_of, dead_port, CannedServer};

    fn ok_body(content: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn config(url: &str) -> RemoteChatConfig {
        let mut c = RemoteChatConfig::new(url, "gpt-3.5-turbo");
        c.initial_backoff = Duration::from_millis(5);
        c.timeout = Duration::from_secs(5);
        c
    }

    fn input() -> LlmInput {
        let mut i = LlmInput::new("prefix");
        i.push(SegmentRole::User, "hello");
        i
    }

    #[test]
    fn sends_chat_document() {
        let server = CannedServer::start("/chat/completions", vec![("200 OK", ok_body("hi there"))]);
        let base = server.url.trim_end_matches("/chat/completions").to_string();
        let mut cfg = config(&base);
        cfg.api_key = Some("k".into());
        cfg.stop = vec!["\nObservation from".into()];
        let backend = RemoteChatBackend::new(cfg).unwrap();
        assert_eq!(backend.complete(&input()).unwrap(), "hi there");
        let requests = server.requests();
        let doc: ChatRequest = serde_json::from_str(body_of(&requests[0])).unwrap();
        assert_eq!(doc.model, "gpt-3.5-turbo");
        assert_eq!(doc.temperature, 0.0);
        assert_eq!(doc.messages[0].role, "system");
        assert_eq!(doc.messages[1].content, "hello");
        assert_eq!(doc.stop, vec!["\nObservation from".to_string()]);
        assert!(requests[0].to_ascii_lowercase().contains("authorization: bearer k"));
    }

    #[test]
    fn retries_transient_status_then_succeeds() {
        let server = CannedServer::start(
            "/chat/completions",
            vec![
                ("503 Service Unavailable", "busy".into()),
                ("429 Too Many Requests", "slow down".into()),
                ("200 OK", ok_body("finally")),
            ],
        );
        let base = server.url.trim_end_matches("/chat/completions").to_string();
        let backend = RemoteChatBackend::new(config(&base)).unwrap();
        assert_eq!(backend.complete(&input()).unwrap(), "finally");
        assert_eq!(server.requests().len(), 3);
    }

    #[test]
    fn gives_up_after_two_retries() {
        let server = CannedServer::start(
            "/chat/completions",
            vec![
                ("500 Internal Server Error", "a".into()),
                ("500 Internal Server Error", "b".into()),
                ("500 Internal Server Error", "c".into()),
            ],
        );
        let base = server.url.trim_end_matches("/chat/completions").to_string();
        let backend = RemoteChatBackend::new(config(&base)).unwrap();
        assert_eq!(
            backend.complete(&input()).unwrap_err(),
            LlmError::Status {
                status: 500,
                body: "c".into()
            }
        );
        assert_eq!(server.requests().len(), 3);
    }

    #[test]
    fn client_error_is_not_retried() {
        let server = CannedServer::start("/chat/completions", vec![("401 Unauthorized", "bad key".into())]);
        let base = server.url.trim_end_matches("/chat/completions").to_string();
        let backend = RemoteChatBackend::new(config(&base)).unwrap();
        assert!(matches!(
            backend.complete(&input()),
            Err(LlmError::Status { status: 401, .. })
        ));
        assert_eq!(server.requests().len(), 1);
    }

    #[test]
    fn unreachable_is_transport_error() {
        let backend = RemoteChatBackend::new(config(&format!("http://127.0.0.1:{}", dead_port()))).unwrap();
        assert!(matches!(backend.complete(&input()), Err(LlmError::Transport(_))));
    }
}
