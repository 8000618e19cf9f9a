use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{DigitDistribution, DigitProvider};
use crate::error::{Error, Result};

/// Environment variable consulted for the endpoint when none is configured.
pub const ENDPOINT_ENV: &str = "SGDMC_REMOTE_ENDPOINT";

/// How the server's `logits` array maps onto digits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RemoteMode {
    /// Exactly ten logits in digit order 0..9.
    Digits,
    /// Full next-token logits; `token_ids[d]` is the vocabulary id of digit `d`.
    TokenIds { token_ids: [usize; 10] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_mode")]
    pub mode: RemoteMode,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_mode() -> RemoteMode {
    RemoteMode::Digits
}

fn default_timeout() -> u64 {
    30
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            temperature: default_temperature(),
            mode: default_mode(),
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Serialize)]
struct LogitsRequest<'a> {
    context: &'a str,
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<f64>,
}

/// Client for a logits-exposing inference server.
///
/// Wire format: `POST {endpoint}` with `{"context": "<digits>"}`, answered by
/// `{"logits": [...]}`. Any non-success status is `RemoteUnavailable`.
#[derive(Debug)]
pub struct RemoteProvider {
    config: RemoteConfig,
    agent: Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if !(config.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be > 0, got {}",
                config.temperature
            )));
        }
        if config.endpoint.is_empty() {
            return Err(Error::InvalidArgument("remote endpoint is empty".into()));
        }
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Picks the ten digit logits out of a server response.
    pub fn digit_logits(&self, logits: &[f64]) -> Result<[f64; 10]> {
        match &self.config.mode {
            RemoteMode::Digits => logits.try_into().map_err(|_| {
                Error::RemoteUnavailable(format!("expected 10 logits, got {}", logits.len()))
            }),
            RemoteMode::TokenIds { token_ids } => {
                let mut out = [0.0; 10];
                for (d, &id) in token_ids.iter().enumerate() {
                    out[d] = *logits.get(id).ok_or_else(|| {
                        Error::RemoteUnavailable(format!(
                            "token id {id} outside vocabulary of size {}",
                            logits.len()
                        ))
                    })?;
                }
                Ok(out)
            }
        }
    }
}

impl DigitProvider for RemoteProvider {
    fn next_digit_probs(&self, context: &str) -> Result<DigitDistribution> {
        if !context.bytes().all(|b| b.is_ascii_digit() || b == b',') {
            return Err(Error::MalformedContext("context must contain only digits and commas".into()));
        }
        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .send_json(LogitsRequest { context })
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        let body: LogitsResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::RemoteUnavailable(format!("bad response body: {e}")))?;
        let logits = self.digit_logits(&body.logits)?;
        DigitDistribution::softmax(&logits, self.config.temperature)
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_id_selection() {
        let mut cfg = RemoteConfig::new("http://127.0.0.1:9");
        cfg.mode = RemoteMode::TokenIds {
            token_ids: [29900, 29896, 29906, 29941, 29946, 29945, 29953, 29955, 29947, 29929],
        };
        let p = RemoteProvider::new(cfg).unwrap();
        let mut logits = vec![0.0; 32000];
        logits[29945] = 3.0;
        let d = p.digit_logits(&logits).unwrap();
        assert_eq!(d[5], 3.0);
        assert!(p.digit_logits(&[0.0; 100]).is_err());
    }

    #[test]
    fn digit_mode_needs_ten() {
        let p = RemoteProvider::new(RemoteConfig::new("http://127.0.0.1:9")).unwrap();
        assert!(p.digit_logits(&[0.0; 9]).is_err());
        assert!(p.digit_logits(&[0.0; 10]).is_ok());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = RemoteConfig::new("http://x");
        cfg.temperature = 0.0;
        assert!(RemoteProvider::new(cfg).is_err());
        assert!(RemoteProvider::new(RemoteConfig::new("")).is_err());
    }

    #[test]
    fn unreachable_endpoint_maps_to_unavailable() {
        let mut cfg = RemoteConfig::new("http://127.0.0.1:1/logits");
        cfg.timeout_secs = 2;
        let p = RemoteProvider::new(cfg).unwrap();
        assert!(matches!(p.next_digit_probs("12,"), Err(Error::RemoteUnavailable(_))));
    }
}
