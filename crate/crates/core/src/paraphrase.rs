//! Client for an external paraphrasing service. The service is optional:
//! every failure degrades to the rule-fixed input.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::generator::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParaphraseConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_ms() -> u64 {
    5000
}
fn default_retries() -> u32 {
    1
}
fn default_max_in_flight() -> usize {
    4
}

impl ParaphraseConfig {
    pub fn new(url: impl Into<String>) -> Self {
        ParaphraseConfig {
            url: url.into(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct Response {
    candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseOutcome {
    pub text: String,
    pub stage: Stage,
    pub failure: Option<String>,
}

impl ParaphraseOutcome {
    fn unchanged(text: &str, failure: Option<String>) -> Self {
        ParaphraseOutcome {
            text: text.to_string(),
            stage: Stage::RuleFixed,
            failure,
        }
    }
}

pub struct ParaphraseClient {
    config: ParaphraseConfig,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

impl ParaphraseClient {
    pub fn new(config: ParaphraseConfig) -> Result<Self, String> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(ParaphraseClient { config, http })
    }

    pub fn config(&self) -> &ParaphraseConfig {
        &self.config
    }

    fn attempt(&self, text: &str) -> Result<Vec<String>, Attempt> {
        let resp = self
            .http
            .post(&self.config.url)
            .json(&Request { text })
            .send()
            .map_err(|e| Attempt::Retryable(format!("transport: {e}")))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Attempt::Retryable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("status {status}")));
        }
        resp.json::<Response>()
            .map(|r| r.candidates)
            .map_err(|e| Attempt::Fatal(format!("bad response: {e}")))
    }

    /// Paraphrases one question, retrying transport errors, timeouts and
    /// 5xx responses up to `retries` extra times.
    pub fn paraphrase(&self, text: &str) -> ParaphraseOutcome {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(20 * u64::from(attempt)));
            }
            match self.attempt(text) {
                Ok(candidates) => {
                    return match candidates.into_iter().map(|c| c.trim().to_string()).find(|c| !c.is_empty()) {
                        Some(c) => ParaphraseOutcome {
                            text: if c.ends_with('?') { c } else { format!("{c}?") },
                            stage: Stage::Paraphrased,
                            failure: None,
                        },
                        None => ParaphraseOutcome::unchanged(text, Some("empty candidate list".into())),
                    };
                }
                Err(Attempt::Fatal(msg)) => return ParaphraseOutcome::unchanged(text, Some(msg)),
                Err(Attempt::Retryable(msg)) => {
                    log::debug!("paraphrase attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        ParaphraseOutcome::unchanged(text, Some(last))
    }
}

/// Paraphrases every input, at most `max_in_flight` requests at a time.
/// Output order matches input order. Without a client every input passes
/// through at stage `rule_fixed` with no failure recorded.
pub fn paraphrase_all(texts: &[String], client: Option<&ParaphraseClient>) -> Vec<ParaphraseOutcome> {
    let Some(client) = client else {
        return texts.iter().map(|t| ParaphraseOutcome::unchanged(t, None)).collect();
    };
    let width = client.config.max_in_flight.max(1);
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(width) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|t| scope.spawn(move || client.paraphrase(t))).collect();
            for (h, t) in handles.into_iter().zip(chunk) {
                out.push(
                    h.join()
                        .unwrap_or_else(|_| ParaphraseOutcome::unchanged(t, Some("worker panicked".into()))),
                );
            }
        });
    }
    out
}
