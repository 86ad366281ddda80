//! Blocking JSON-over-HTTP client with bounded retries.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    agent: Agent,
    url: String,
    max_retries: u32,
    backoff: Duration,
}

impl JsonClient {
    pub fn new(url: &str, timeout_ms: u64, max_retries: u32, backoff_ms: u64) -> Self {
        let config = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build();
        Self {
            agent: Agent::new_with_config(config),
            url: url.to_owned(),
            max_retries,
            backoff: Duration::from_millis(backoff_ms),
        }
    }

    /// POSTs `body` and decodes the JSON response. Transport failures,
    /// timeouts, 429 and 5xx responses are retried with exponential backoff;
    /// other non-success statuses fail immediately.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp> {
        let mut attempt = 0;
        loop {
            let err = match self.agent.post(&self.url).send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp
                            .body_mut()
                            .read_json::<Resp>()
                            .map_err(|e| Error::Remote(format!("malformed response: {e}")));
                    }
                    let err = Error::Remote(format!("{} returned status {status}", self.url));
                    if status != 429 && status < 500 {
                        return Err(err);
                    }
                    err
                }
                Err(ureq::Error::Timeout(_)) => Error::Timeout,
                Err(e) => Error::Remote(e.to_string()),
            };
            if attempt >= self.max_retries {
                return Err(err);
            }
            thread::sleep(self.backoff * 2u32.saturating_pow(attempt));
            attempt += 1;
        }
    }
}
