use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ExpertCall, ExpertError, ExpertExecutor, ExpertOutput, RawExpertOutput};

/// Request body sent to a remote expert endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteExpertRequest {
    pub expert: String,
    pub path_or_url: Option<String>,
    pub query: Option<String>,
}

/// Generic HTTP expert: one POST per invocation, the response body is a
/// [`RawExpertOutput`] document.
pub struct RemoteExpert {
    endpoint: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteExpert {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteExpert")
            .field("endpoint", &self.endpoint)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl RemoteExpert {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Result<Self, ExpertError> {
        let endpoint = endpoint.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ExpertError::failure(&endpoint, e))?;
        Ok(Self { endpoint, token, client })
    }
}

impl ExpertExecutor for RemoteExpert {
    fn execute(&self, call: &ExpertCall<'_>) -> Result<ExpertOutput, ExpertError> {
        let body = RemoteExpertRequest {
            expert: call.expert.to_string(),
            path_or_url: call.path.map(String::from),
            query: call.query.map(String::from),
        };
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .map_err(|e| ExpertError::failure(call.expert, format!("transport error: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ExpertError::failure(call.expert, format!("transport error: {e}")))?;
        if !status.is_success() {
            let excerpt: String = text.chars().take(200).collect();
            return Err(ExpertError::failure(
                call.expert,
                format!("HTTP {}: {excerpt}", status.as_u16()),
            ));
        }
        let raw: RawExpertOutput = serde_json::from_str(&text)
            .map_err(|e| ExpertError::failure(call.expert, format!("bad response body: {e}")))?;
        Ok(raw.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{body_of, dead_port, CannedServer};

    fn call<'a>(expert: &'a str, path: Option<&'a str>) -> ExpertCall<'a> {
        ExpertCall {
            expert,
            path,
            query: None,
        }
    }

    #[test]
    fn posts_request_document_with_bearer_token() {
        let server = CannedServer::start(
            "/expert",
            vec![("200 OK", r#"{"kind":"ocr_lines","payload":["TOTAL 12.05"]}"#.into())],
        );
        let expert = RemoteExpert::new(&server.url, Some("sekrit".into()), Duration::from_secs(5)).unwrap();
        let out = expert.execute(&call("ocr", Some("/tmp/r1.png"))).unwrap();
        assert_eq!(out.raw, RawExpertOutput::OcrLines(vec!["TOTAL 12.05".into()]));
        let requests = server.requests();
        assert!(requests[0].starts_with("POST /expert "));
        assert!(requests[0].to_ascii_lowercase().contains("authorization: bearer sekrit"));
        let doc: RemoteExpertRequest = serde_json::from_str(body_of(&requests[0])).unwrap();
        assert_eq!(
            doc,
            RemoteExpertRequest {
                expert: "ocr".into(),
                path_or_url: Some("/tmp/r1.png".into()),
                query: None
            }
        );
    }

    #[test]
    fn http_error_is_expert_failure() {
        let server = CannedServer::start("/expert", vec![("503 Service Unavailable", r#"{"error":"down"}"#.into())]);
        let expert = RemoteExpert::new(&server.url, None, Duration::from_secs(5)).unwrap();
        let err = expert.execute(&call("ocr", Some("a.png"))).unwrap_err();
        server.requests();
        match err {
            ExpertError::Failure { expert, message } => {
                assert_eq!(expert, "ocr");
                assert!(message.contains("503"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_body_is_expert_failure() {
        let server = CannedServer::start("/expert", vec![("200 OK", "not json".into())]);
        let expert = RemoteExpert::new(&server.url, None, Duration::from_secs(5)).unwrap();
        assert!(matches!(
            expert.execute(&call("ocr", Some("a.png"))),
            Err(ExpertError::Failure { .. })
        ));
        server.requests();
    }

    #[test]
    fn unreachable_endpoint_is_expert_failure() {
        let url = format!("http://127.0.0.1:{}/x", dead_port());
        let expert = RemoteExpert::new(url, None, Duration::from_secs(2)).unwrap();
        match expert.execute(&call("captioning", Some("a.png"))).unwrap_err() {
            ExpertError::Failure { message, .. } => assert!(message.starts_with("transport error"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
