//! Blocking HTTP plumbing shared by the encoder and LLM clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::TransportError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based), doubling each time.
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

fn retryable(e: &TransportError) -> bool {
    match e {
        TransportError::Request(_) => true,
        TransportError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// attempt budget is spent.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, TransportError>,
) -> Result<T, TransportError> {
    let attempts = policy.attempts.max(1);
    let mut last = None;
    for attempt in 1..=attempts {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if retryable(&e) => {
                log::warn!("attempt {attempt}/{attempts} failed: {e}");
                last = Some(e);
                if attempt < attempts {
                    std::thread::sleep(policy.delay(attempt));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(TransportError::Exhausted {
        attempts,
        last: last.map(|e| e.to_string()).unwrap_or_default(),
    })
}

/// A JSON-over-HTTP POST endpoint with optional bearer auth.
#[derive(Debug, Clone)]
pub struct JsonEndpoint {
    http: reqwest::blocking::Client,
    url: String,
    token: Option<String>,
}

impl JsonEndpoint {
    pub fn new(
        url: impl Into<String>,
        token: Option<String>,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Request(e.to_string()))?;
        Ok(JsonEndpoint {
            http,
            url: url.into(),
            token: token.filter(|t| !t.is_empty()),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, TransportError> {
        let mut req = self.http.post(&self.url).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Request(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(TransportError::Status {
                status: status.as_u16(),
                body,
            });
        }
        resp.json::<R>()
            .map_err(|e| TransportError::Decode(e.to_string()))
    }
}

/// Reads a secret from the named environment variable.
pub fn token_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn quick() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        }
    }

    #[test]
    fn retries_transient_failures() {
        let calls = Cell::new(0);
        let out = with_retries(&quick(), || {
            calls.set(calls.get() + 1);
            if calls.get() < 3 {
                Err(TransportError::Status {
                    status: 503,
                    body: String::new(),
                })
            } else {
                Ok(7)
            }
        });
        assert_eq!(out.unwrap(), 7);
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn gives_up_after_budget() {
        let calls = Cell::new(0);
        let out: Result<(), _> = with_retries(&quick(), || {
            calls.set(calls.get() + 1);
            Err(TransportError::Request("refused".into()))
        });
        assert!(matches!(
            out,
            Err(TransportError::Exhausted { attempts: 3, .. })
        ));
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let calls = Cell::new(0);
        let out: Result<(), _> = with_retries(&quick(), || {
            calls.set(calls.get() + 1);
            Err(TransportError::Status {
                status: 401,
                body: String::new(),
            })
        });
        assert!(matches!(
            out,
            Err(TransportError::Status { status: 401, .. })
        ));
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(100),
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(400));
    }
}
