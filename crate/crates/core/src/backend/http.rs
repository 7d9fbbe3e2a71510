//! Remote HTTP backend.
//!
//! The wire protocol is a JSON POST mirroring [`BackendRequest`], answered
//! with a JSON [`BackendResponse`]. Endpoints with different field names are
//! bridged by a [`WireAdapter`]; the crate ships the native adapter and the
//! trait for writing others.

use std::time::Duration;

use super::{Backend, BackendCapabilities, BackendError, BackendRequest, BackendResponse};

/// Maps between the harness request/response types and an endpoint's schema.
pub trait WireAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn build_body(&self, request: &BackendRequest) -> serde_json::Value;
    fn parse_response(
        &self,
        body: &str,
        request: &BackendRequest,
    ) -> Result<BackendResponse, BackendError>;
}

/// Identity adapter: the endpoint speaks the harness schema directly.
pub struct NativeAdapter;

impl WireAdapter for NativeAdapter {
    fn name(&self) -> &str {
        "native"
    }

    fn build_body(&self, request: &BackendRequest) -> serde_json::Value {
        serde_json::to_value(request).expect("request serialization cannot fail")
    }

    fn parse_response(
        &self,
        body: &str,
        _request: &BackendRequest,
    ) -> Result<BackendResponse, BackendError> {
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse {
            message: format!("invalid response body: {e}"),
        })
    }
}

/// Transient failures are retried with exponential backoff; contract
/// failures (malformed bodies, 4xx statuses) are not.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

pub struct HttpBackend {
    endpoint: String,
    auth_token: Option<String>,
    capabilities: BackendCapabilities,
    adapter: Box<dyn WireAdapter>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// Capabilities cannot be probed reliably over the wire, so the caller
    /// declares them (typically from config).
    pub fn new(
        endpoint: impl Into<String>,
        auth_token: Option<String>,
        capabilities: BackendCapabilities,
        adapter: Box<dyn WireAdapter>,
    ) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            auth_token,
            capabilities,
            adapter,
            retry: RetryPolicy::default(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("client construction cannot fail"),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// One POST; `Err` values are transport failures eligible for retry,
    /// `Ok(Err)` values are contract failures that must not be retried.
    fn post_once(
        &self,
        body: &serde_json::Value,
    ) -> Result<Result<String, BackendError>, BackendError> {
        let mut builder = self.client.post(&self.endpoint).json(body);
        if let Some(token) = &self.auth_token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| BackendError::Transport {
            message: format!("request to {} failed: {e}", self.endpoint),
        })?;

        let status = response.status();
        let text = response.text().map_err(|e| BackendError::Transport {
            message: format!("reading response body failed: {e}"),
        })?;

        if status.is_server_error() {
            return Err(BackendError::Transport {
                message: format!("server error {status}: {text}"),
            });
        }
        if !status.is_success() {
            return Ok(Err(BackendError::MalformedResponse {
                message: format!("endpoint rejected request with {status}: {text}"),
            }));
        }
        Ok(Ok(text))
    }
}

impl Backend for HttpBackend {
    fn capabilities(&self) -> BackendCapabilities {
        self.capabilities
    }

    fn execute(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let body = self.adapter.build_body(request);
        let mut last_transport = None;
        for attempt in 0..self.retry.attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            match self.post_once(&body) {
                Ok(Ok(text)) => return self.adapter.parse_response(&text, request),
                Ok(Err(contract_failure)) => return Err(contract_failure),
                Err(transport) => {
                    log::warn!(
                        "transport failure (attempt {}/{}): {transport}",
                        attempt + 1,
                        self.retry.attempts
                    );
                    last_transport = Some(transport);
                }
            }
        }
        Err(last_transport.unwrap_or(BackendError::Transport {
            message: "no attempts configured".to_string(),
        }))
    }
}
