use std::time::Duration;

use super::BackendError;

/// Carries one canonical JSON request body to a live backend and returns
/// the raw response body.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, body: &str) -> Result<String, BackendError>;
}

/// HTTP POST transport. Sends `Authorization: Bearer <token>` when a token
/// is configured.
pub struct HttpTransport {
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpTransport {
    pub fn new(timeout: Duration, token: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { agent, token }
    }

    /// Reads the bearer token from `EVALKIT_API_TOKEN`.
    pub fn from_env() -> Self {
        Self::new(Duration::from_secs(120), std::env::var("EVALKIT_API_TOKEN").ok().filter(|t| !t.is_empty()))
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, body: &str) -> Result<String, BackendError> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_string(body) {
            Ok(resp) => resp.into_string().map_err(|e| BackendError::Transport(format!("{url}: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                Err(BackendError::Transport(format!("{url}: HTTP {code}: {text}")))
            }
            Err(e) => Err(BackendError::Transport(format!("{url}: {e}"))),
        }
    }
}
