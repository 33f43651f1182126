//! Completions-style HTTP client with top-k log-probabilities.
//!
//! Generation sends `{"model", "prompt", "max_tokens", "temperature": 0,
//! "logprobs": k, "echo": false}` to `<endpoint>/v1/completions`. Teacher
//! forcing sends the prompt with the forced continuation appended, `echo:
//! true` and `max_tokens: 0`, and reads the last `n` echoed positions. The
//! response must carry `choices[0].logprobs.{tokens, token_logprobs,
//! top_logprobs}`.

use std::fmt;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Generation, LanguageModel, PositionScore, Prompt};
use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "GROGU_HTTP_ENDPOINT";
pub const ENV_API_KEY: &str = "GROGU_HTTP_API_KEY";
pub const ENV_TOP_LOGPROBS: &str = "GROGU_HTTP_TOP_LOGPROBS";

#[derive(Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub top_logprobs: usize,
    pub vocab_size: usize,
    pub timeout: Duration,
    pub max_retries: u32,
}

impl fmt::Debug for HttpConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpConfig")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("top_logprobs", &self.top_logprobs)
            .field("vocab_size", &self.vocab_size)
            .finish()
    }
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, vocab_size: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            top_logprobs: 20,
            vocab_size,
            timeout: Duration::from_secs(120),
            max_retries: 3,
        }
    }

    /// Endpoint and credential come from the environment only.
    pub fn from_env(model: impl Into<String>, vocab_size: usize) -> Result<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| Error::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let mut cfg = Self::new(endpoint, model, vocab_size);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(k) = std::env::var(ENV_TOP_LOGPROBS) {
            cfg.top_logprobs = k
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_TOP_LOGPROBS} must be an integer")))?;
        }
        Ok(cfg)
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/completions")
        } else {
            format!("{base}/v1/completions")
        }
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Debug, Deserialize)]
struct LogprobBlock {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<serde_json::Map<String, Value>>>>,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self> {
        if cfg.vocab_size == 0 {
            return Err(Error::Config("HTTP backend needs the model's vocabulary size".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    fn post(&self, body: &Value) -> Result<Value> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.client.post(self.cfg.url()).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            let (message, retryable) = match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp.json::<Value>().map_err(|e| Error::Transport {
                        message: format!("malformed response body: {e}"),
                        attempts: attempt,
                        retryable: false,
                    });
                }
                Ok(resp) => {
                    let status = resp.status();
                    let retryable = status.is_server_error() || status.as_u16() == 429;
                    (format!("HTTP {status}"), retryable)
                }
                Err(e) => (e.without_url().to_string(), true),
            };
            if !retryable || attempt > self.cfg.max_retries {
                return Err(Error::Transport {
                    message,
                    attempts: attempt,
                    retryable,
                });
            }
            log::warn!(
                "completion request failed ({message}); retry {attempt}/{}",
                self.cfg.max_retries
            );
            std::thread::sleep(Duration::from_millis(200 * (1 << attempt.min(5))));
        }
    }

    fn logprobs(resp: &Value) -> Result<(LogprobBlock, Option<String>)> {
        let choice = resp
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| Error::Capability("response has no choices".into()))?;
        let block = choice.get("logprobs").filter(|v| !v.is_null()).ok_or_else(|| {
            Error::Capability(
                "server returned no per-token logprobs; use a completions server with logprobs/echo or the trace backend"
                    .into(),
            )
        })?;
        let block: LogprobBlock = serde_json::from_value(block.clone())
            .map_err(|e| Error::Capability(format!("unrecognized logprobs block: {e}")))?;
        let finish = choice.get("finish_reason").and_then(Value::as_str).map(str::to_string);
        Ok((block, finish))
    }

    fn positions(&self, block: &LogprobBlock, range: std::ops::Range<usize>) -> Result<Vec<PositionScore>> {
        range
            .map(|i| {
                let token = block.tokens[i].clone();
                let logprob = block.token_logprobs.get(i).copied().flatten().ok_or_else(|| {
                    Error::Capability(format!("no logprob for position {i}; echo scoring unsupported"))
                })?;
                let mut top: Vec<(String, f64)> = block
                    .top_logprobs
                    .as_ref()
                    .and_then(|t| t.get(i).cloned().flatten())
                    .map(|m| {
                        m.into_iter()
                            .filter_map(|(k, v)| v.as_f64().map(|lp| (k, lp)))
                            .collect()
                    })
                    .unwrap_or_default();
                if !top.iter().any(|(t, _)| *t == token) {
                    top.push((token.clone(), logprob));
                }
                top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                let covered: f64 = top.iter().map(|(_, lp)| lp.exp()).sum();
                let mut residual = (1.0 - covered).max(0.0);
                if residual < crate::metric::MIN_PROBABILITY || top.len() >= self.cfg.vocab_size {
                    residual = 0.0;
                }
                Ok(PositionScore {
                    token,
                    logprob,
                    top,
                    residual,
                    vocab_size: self.cfg.vocab_size,
                })
            })
            .collect()
    }
}

impl LanguageModel for HttpBackend {
    fn model_id(&self) -> &str {
        &self.cfg.model
    }

    fn greedy_generate(&self, prompt: &Prompt, max_new_tokens: usize) -> Result<Generation> {
        let body = json!({
            "model": self.cfg.model,
            "prompt": prompt.text,
            "max_tokens": max_new_tokens,
            "temperature": 0.0,
            "logprobs": self.cfg.top_logprobs,
            "echo": false,
        });
        let (block, _) = Self::logprobs(&self.post(&body)?)?;
        let n = block.tokens.len();
        let scores = self.positions(&block, 0..n)?;
        Ok(Generation {
            tokens: block.tokens,
            scores,
        })
    }

    fn force_score(&self, prompt: &Prompt, forced: &[String]) -> Result<Vec<PositionScore>> {
        if forced.is_empty() {
            return Err(Error::Structural("nothing to score".into()));
        }
        let body = json!({
            "model": self.cfg.model,
            "prompt": format!("{}{}", prompt.text, forced.concat()),
            "max_tokens": 0,
            "temperature": 0.0,
            "logprobs": self.cfg.top_logprobs,
            "echo": true,
        });
        let (block, _) = Self::logprobs(&self.post(&body)?)?;
        let n = block.tokens.len();
        if n < forced.len() || block.token_logprobs.len() != n {
            return Err(Error::Capability(
                "server did not echo the forced continuation; teacher forcing needs echo support (or use the trace backend)"
                    .into(),
            ));
        }
        let start = n - forced.len();
        if block.tokens[start..] != *forced {
            return Err(Error::Capability(
                "server re-tokenized the forced continuation differently; use the trace backend".into(),
            ));
        }
        self.positions(&block, start..n)
    }
}
