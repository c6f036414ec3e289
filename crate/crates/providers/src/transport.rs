//! The one place that performs network I/O.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("network: {0}")]
    Network(String),
}

impl TransportError {
    /// Server errors, rate limiting and network failures are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Network(_) => true,
        }
    }
}

pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value, api_key: Option<&str>, timeout: Duration) -> Result<Value, TransportError>;
}

/// Blocking HTTP(S) JSON transport.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, body: &Value, api_key: Option<&str>, timeout: Duration) -> Result<Value, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportError::Status { status, body });
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| TransportError::Network(format!("invalid JSON response: {e}")))
    }
}
