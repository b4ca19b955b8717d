//! Client for completion servers that return token log-probabilities.
//!
//! Probing sends `{prompt, max_tokens: 1, logprobs: N, echo: false}` to an
//! OpenAI-style `/v1/completions` endpoint and reads the top-N alternatives
//! for the first generated position. Generation requests up to the step token
//! budget, keeps the returned tokens up to the first sentence boundary and
//! discards the rest; the server holds no state between requests.
//!
//! Token strings are interned into ids local to this client. The prompt is
//! kept as a single opaque token, and cache cells are placeholders because
//! the server owns its KV cache.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    BackendDescriptor, BackendError, CacheCell, Distribution, GeneratedStep, GenerationState,
    ModelBackend,
};
use crate::probe::StepStopRule;
use crate::trace::{DecodeConfig, DecodeMode, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 250,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << attempt.min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    #[serde(default = "default_completions_path")]
    pub completions_path: String,
    /// Optional tokenizer endpoint used to reject multi-token labels.
    #[serde(default)]
    pub tokenize_path: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_completions_path() -> String {
    "/v1/completions".into()
}

fn default_top_logprobs() -> u32 {
    20
}

fn default_timeout() -> u64 {
    60
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            completions_path: default_completions_path(),
            tokenize_path: None,
            model: None,
            api_key: None,
            top_logprobs: default_top_logprobs(),
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteProbeRequest {
    pub context: String,
    pub top_logprobs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn prob(&self) -> f64 {
        self.logprob.exp()
    }
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
    strings: Vec<String>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> TokenId {
        if let Some(&id) = self.ids.get(s) {
            return TokenId(id);
        }
        let id = self.strings.len() as u32;
        self.strings.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        TokenId(id)
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    interner: Mutex<Interner>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.config.endpoint)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            interner: Mutex::new(Interner::default()),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn intern(&self, s: &str) -> TokenId {
        self.interner.lock().expect("interner poisoned").intern(s)
    }

    /// POSTs `body` and returns the parsed JSON response, retrying transport
    /// failures, 429 and 5xx with exponential backoff.
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = self.config.url(path);
        let policy = &self.config.retry;
        let attempts = policy.max_attempts.max(1);
        let mut last_err = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(policy.delay(attempt - 1));
            }
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.config.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| BackendError::Protocol(format!("reading body: {e}")));
                    if (200..300).contains(&status) {
                        let text = text?;
                        return serde_json::from_str(&text).map_err(|e| {
                            BackendError::Protocol(format!("response is not JSON: {e}"))
                        });
                    }
                    let detail = text.unwrap_or_default();
                    if status == 429 || status >= 500 {
                        log::warn!("{url}: HTTP {status} (attempt {})", attempt + 1);
                        last_err = format!("HTTP {status}: {detail}");
                        continue;
                    }
                    return Err(BackendError::Unavailable(format!(
                        "HTTP {status}: {detail}"
                    )));
                }
                Err(e) => {
                    log::warn!("{url}: {e} (attempt {})", attempt + 1);
                    last_err = e.to_string();
                }
            }
        }
        Err(BackendError::Unavailable(format!(
            "{url} failed after {attempts} attempts: {last_err}"
        )))
    }

    fn completion_body(&self, prompt: &str) -> Value {
        let mut body = json!({ "prompt": prompt, "echo": false });
        if let Some(m) = &self.config.model {
            body["model"] = m.clone().into();
        }
        body
    }

    /// Top-N next-token log-probabilities for `request.context`.
    pub fn fetch_logprobs(
        &self,
        request: &RemoteProbeRequest,
    ) -> Result<Vec<TokenLogprob>, BackendError> {
        let mut body = self.completion_body(&request.context);
        body["max_tokens"] = 1.into();
        body["logprobs"] = request.top_logprobs.into();
        body["temperature"] = 0.into();
        let resp = self.post_json(&self.config.completions_path, &body)?;
        parse_top_logprobs(&resp)
    }
}

/// Extracts the first position's top log-probabilities from a completion
/// response. Accepts the `{token: logprob}` map form and the
/// `[{token, logprob}]` list form.
pub fn parse_top_logprobs(resp: &Value) -> Result<Vec<TokenLogprob>, BackendError> {
    let missing = |what: &str| BackendError::Protocol(format!("response lacks {what}"));
    let logprobs = resp
        .pointer("/choices/0/logprobs")
        .filter(|v| !v.is_null())
        .ok_or_else(|| missing("choices[0].logprobs"))?;
    let first = logprobs
        .pointer("/top_logprobs/0")
        .ok_or_else(|| missing("logprobs.top_logprobs[0]"))?;
    let mut out = Vec::new();
    match first {
        Value::Object(map) => {
            for (token, lp) in map {
                let logprob = lp.as_f64().ok_or_else(|| {
                    BackendError::Protocol(format!("log-probability of {token:?} is not a number"))
                })?;
                out.push(TokenLogprob {
                    token: token.clone(),
                    logprob,
                });
            }
        }
        Value::Array(items) => {
            for item in items {
                let token = item
                    .get("token")
                    .and_then(Value::as_str)
                    .ok_or_else(|| missing("token"))?;
                let logprob = item
                    .get("logprob")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| missing("logprob"))?;
                out.push(TokenLogprob {
                    token: token.to_string(),
                    logprob,
                });
            }
        }
        _ => {
            return Err(BackendError::Protocol(
                "top_logprobs[0] has unexpected shape".into(),
            ))
        }
    }
    if out.iter().any(|t| t.logprob > 1e-6) {
        return Err(BackendError::Protocol("positive log-probability".into()));
    }
    out.sort_by(|a, b| {
        b.logprob
            .total_cmp(&a.logprob)
            .then_with(|| a.token.cmp(&b.token))
    });
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<CompletionLogprobs>,
}

#[derive(Debug, Deserialize)]
struct CompletionLogprobs {
    #[serde(default)]
    tokens: Option<Vec<String>>,
}

impl ModelBackend for RemoteBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            backend_id: format!("remote:{}", self.config.endpoint),
            vocabulary_size: 0,
            supports_full_distribution: false,
            top_logprobs_limit: Some(self.config.top_logprobs),
        }
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        Ok(vec![self.intern(text)])
    }

    fn decode(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        let interner = self.interner.lock().expect("interner poisoned");
        tokens
            .iter()
            .map(|t| {
                interner
                    .strings
                    .get(t.0 as usize)
                    .map(String::as_str)
                    .ok_or_else(|| BackendError::UnknownToken(format!("id {}", t.0)))
            })
            .collect()
    }

    fn eos_token(&self) -> Option<TokenId> {
        None
    }

    fn label_tokens(&self, label: &str) -> Result<Vec<TokenId>, BackendError> {
        let Some(path) = &self.config.tokenize_path else {
            return Ok(vec![self.intern(label)]);
        };
        let mut body = json!({ "prompt": label, "add_special_tokens": false });
        if let Some(m) = &self.config.model {
            body["model"] = m.clone().into();
        }
        let resp = self.post_json(path, &body)?;
        let n = resp
            .get("tokens")
            .and_then(Value::as_array)
            .map(Vec::len)
            .ok_or_else(|| BackendError::Protocol("tokenize response lacks tokens".into()))?;
        let id = self.intern(label);
        Ok(vec![id; n])
    }

    fn extend(&self, state: &mut GenerationState, tokens: &[TokenId]) -> Result<(), BackendError> {
        for &t in tokens {
            state.push(t, CacheCell::default());
        }
        Ok(())
    }

    fn next_distribution(&self, state: &GenerationState) -> Result<Distribution, BackendError> {
        let context = self.decode(state.tokens())?;
        let top = self.fetch_logprobs(&RemoteProbeRequest {
            context,
            top_logprobs: self.config.top_logprobs,
        })?;
        let mut probs: Vec<(TokenId, f64)> = top
            .iter()
            .map(|t| (self.intern(&t.token), t.prob().min(1.0)))
            .collect();
        let sum: f64 = probs.iter().map(|p| p.1).sum();
        if sum > 1.0 {
            for p in &mut probs {
                p.1 /= sum;
            }
        }
        Distribution::new(probs, false)
    }

    fn generate_step(
        &self,
        state: &mut GenerationState,
        cfg: &DecodeConfig,
        stop: &StepStopRule,
    ) -> Result<GeneratedStep, BackendError> {
        let context = self.decode(state.tokens())?;
        let mut body = self.completion_body(&context);
        body["max_tokens"] = stop.max_tokens_per_step.into();
        body["logprobs"] = 1.into();
        match cfg.mode {
            DecodeMode::Greedy => body["temperature"] = 0.into(),
            DecodeMode::Sample => {
                body["temperature"] = cfg.temperature.into();
                body["top_p"] = cfg.top_p.into();
                if cfg.top_k > 0 {
                    body["top_k"] = cfg.top_k.into();
                }
                body["seed"] = state.rng_mut().random::<u32>().into();
            }
        }
        let resp = self.post_json(&self.config.completions_path, &body)?;
        let choice: CompletionChoice = resp
            .pointer("/choices/0")
            .cloned()
            .ok_or_else(|| BackendError::Protocol("response lacks choices[0]".into()))
            .and_then(|c| {
                serde_json::from_value(c).map_err(|e| BackendError::Protocol(e.to_string()))
            })?;
        let tokens = choice
            .logprobs
            .and_then(|l| l.tokens)
            .unwrap_or_else(|| vec![choice.text.clone()]);
        let mut text = String::new();
        for (i, tok) in tokens.iter().enumerate() {
            let scan_from = text.len();
            text.push_str(tok);
            state.push(self.intern(tok), CacheCell::default());
            if stop.boundary_after(&text, scan_from).is_some() {
                let finished =
                    i + 1 == tokens.len() && choice.finish_reason.as_deref() == Some("stop");
                return Ok(GeneratedStep {
                    text,
                    finished,
                    budget_exceeded: false,
                });
            }
        }
        let finished = choice.finish_reason.as_deref() != Some("length");
        Ok(GeneratedStep {
            budget_exceeded: !finished,
            finished,
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_map_form() {
        let resp = json!({"choices": [{"text": "A", "logprobs": {"top_logprobs": [
            {"A": 0.5f64.ln(), "B": 0.3f64.ln(), "C": 0.1f64.ln()}
        ]}}]});
        let top = parse_top_logprobs(&resp).unwrap();
        assert_eq!(top.len(), 3);
        assert_eq!(top[0].token, "A");
        assert!((top[0].prob() - 0.5).abs() < 1e-12);
        assert!((top[1].prob() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn parses_list_form() {
        let resp = json!({"choices": [{"logprobs": {"top_logprobs": [
            [{"token": "B", "logprob": -0.1}, {"token": "A", "logprob": -2.5}]
        ]}}]});
        let top = parse_top_logprobs(&resp).unwrap();
        assert_eq!(
            top.iter().map(|t| t.token.as_str()).collect::<Vec<_>>(),
            vec!["B", "A"]
        );
    }

    #[test]
    fn missing_fields_are_protocol_errors() {
        for resp in [
            json!({}),
            json!({"choices": [{"text": "x"}]}),
            json!({"choices": [{"logprobs": {"top_logprobs": [{"A": "x"}]}}]}),
            json!({"choices": [{"logprobs": {"top_logprobs": [[{"token": "A"}]]}}]}),
        ] {
            assert!(matches!(
                parse_top_logprobs(&resp),
                Err(BackendError::Protocol(_))
            ));
        }
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(250));
        assert_eq!(p.delay(1), Duration::from_millis(500));
    }
}
