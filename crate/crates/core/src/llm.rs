//! LLM-backed agents.
//!
//! The prompt text is rendered once from a versioned template and is the same
//! byte string for every provider; providers only differ in transport.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AgentError, ConfigError};
use crate::game::{
    Agent, AgentFactory, AgentRationale, Decision, MatchConfig, MatchView, Move, PayoffMatrix,
};
use crate::population::StrategyId;

/// Bumped whenever [`PROMPT_TEMPLATE`] changes.
pub const PROMPT_TEMPLATE_VERSION: u32 = 1;

/// Canonical move prompt. Placeholders in braces are substituted by
/// [`build_prompt`].
pub const PROMPT_TEMPLATE: &str = "\
You are playing an iterated Prisoner's Dilemma against another player.

Rules: in every round both players simultaneously choose to Cooperate (C) or Defect (D).
Payoffs per round (your points, opponent's points):
- You C, opponent C: ({R}, {R})
- You C, opponent D: ({S}, {T})
- You D, opponent C: ({T}, {S})
- You D, opponent D: ({P}, {P})

After each round the match ends with probability {P_PERCENT}. Otherwise another round is played.

History of this match (your move, opponent's move):
{HISTORY}

Your goal is to maximize your total score over the match.

First explain your reasoning briefly. Then, on the final line, output exactly one letter: C to cooperate or D to defect.";

pub const NO_HISTORY_MARKER: &str = "No prior moves.";

/// Hex SHA-256 of the prompt template.
pub fn prompt_template_hash() -> String {
    hex::encode(Sha256::digest(PROMPT_TEMPLATE.as_bytes()))
}

/// Termination probability as a percentage, e.g. `10%` or `12.5%`.
pub fn format_percent(p: f64) -> String {
    let pct = p * 100.0;
    let rounded = (pct * 1e6).round() / 1e6;
    if rounded.fract() == 0.0 {
        format!("{}%", rounded as i64)
    } else {
        format!("{rounded}%")
    }
}

/// Renders the move prompt for one decision.
pub fn build_prompt(view: &MatchView<'_>, matrix: &PayoffMatrix) -> String {
    let history = if view.is_empty() {
        NO_HISTORY_MARKER.to_string()
    } else {
        let first = view.rounds_played as usize - view.len() + 1;
        view.my_moves
            .iter()
            .zip(view.their_moves)
            .enumerate()
            .map(|(i, (mine, theirs))| format!("Round {}: you {mine}, opponent {theirs}", first + i))
            .collect::<Vec<_>>()
            .join("\n")
    };
    PROMPT_TEMPLATE
        .replace("{R}", &matrix.reward.to_string())
        .replace("{S}", &matrix.sucker.to_string())
        .replace("{T}", &matrix.temptation.to_string())
        .replace("{P}", &matrix.punishment.to_string())
        .replace("{P_PERCENT}", &format_percent(view.termination_probability))
        .replace("{HISTORY}", &history)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no final standalone C or D in response: {0:?}")]
pub struct MalformedResponse(pub String);

/// Splits a reply into `(rationale, move)`. The move is the last
/// alphanumeric token, which must be a lone `C` or `D` in either case.
pub fn parse_response(raw: &str) -> Result<(String, Move), MalformedResponse> {
    let bytes = raw.as_bytes();
    let mut end = bytes.len();
    while end > 0 && !bytes[end - 1].is_ascii_alphanumeric() {
        end -= 1;
    }
    let mut start = end;
    while start > 0 && bytes[start - 1].is_ascii_alphanumeric() {
        start -= 1;
    }
    let token = &raw[start..end];
    let mv = match token {
        "C" | "c" => Move::C,
        "D" | "d" => Move::D,
        _ => return Err(MalformedResponse(raw.chars().take(200).collect())),
    };
    let rationale = raw[..start].trim_end_matches(|c: char| !c.is_alphanumeric() && c != '.' && c != '!' && c != '?' && c != ')' && c != '"');
    Ok((rationale.trim().to_string(), mv))
}

/// Canonical well-formed reply: rationale, newline, move.
pub fn render_response(rationale: &str, mv: Move) -> String {
    if rationale.is_empty() {
        mv.to_string()
    } else {
        format!("{rationale}\n{mv}")
    }
}

/// A rationale tied to the move it justified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub rationale_id: u64,
    pub tournament_id: String,
    pub phase: u32,
    pub match_id: u32,
    pub round_idx: u32,
    pub strategy: StrategyId,
    pub provider: String,
    pub model: String,
    pub text: String,
    pub chosen_move: Move,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    OpenaiCompatible,
    GeminiCompatible,
    AnthropicCompatible,
    Mock,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::OpenaiCompatible => "openai-compatible",
            ProviderKind::GeminiCompatible => "gemini-compatible",
            ProviderKind::AnthropicCompatible => "anthropic-compatible",
            ProviderKind::Mock => "mock",
        }
    }

    /// Sampling temperature used when the config leaves it unset: 0.7 for
    /// OpenAI and Anthropic models, the API default (none sent) for Gemini.
    pub fn default_temperature(self) -> Option<f64> {
        match self {
            ProviderKind::OpenaiCompatible | ProviderKind::AnthropicCompatible => Some(0.7),
            ProviderKind::GeminiCompatible | ProviderKind::Mock => None,
        }
    }

    fn default_base_url(self) -> &'static str {
        match self {
            ProviderKind::OpenaiCompatible => "https://api.openai.com/v1",
            ProviderKind::GeminiCompatible => "https://generativelanguage.googleapis.com/v1beta",
            ProviderKind::AnthropicCompatible => "https://api.anthropic.com/v1",
            ProviderKind::Mock => "",
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider: ProviderKind,
    pub model_name: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    /// First backoff delay; doubles on every retry.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_cap")]
    pub backoff_max_ms: u64,
    /// Scripted replies for the mock provider.
    #[serde(default)]
    pub mock_fixture: Option<PathBuf>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_inflight() -> usize {
    8
}
fn default_backoff() -> u64 {
    500
}
fn default_backoff_cap() -> u64 {
    30_000
}
fn default_max_tokens() -> u32 {
    512
}

impl ProviderConfig {
    pub fn new(provider: ProviderKind, model_name: impl Into<String>) -> Self {
        ProviderConfig {
            provider,
            model_name: model_name.into(),
            temperature: provider.default_temperature(),
            api_key_env: String::new(),
            base_url: provider.default_base_url().into(),
            request_timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_inflight: default_inflight(),
            backoff_base_ms: default_backoff(),
            backoff_max_ms: default_backoff_cap(),
            mock_fixture: None,
            max_tokens: default_max_tokens(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(ConfigError::Invalid(format!("temperature {t} outside [0, 2]")));
            }
        }
        if self.max_inflight == 0 {
            return Err(ConfigError::Invalid("max_inflight must be at least 1".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(ConfigError::Invalid("model_name is empty".into()));
        }
        if self.provider == ProviderKind::Mock && self.mock_fixture.is_none() {
            return Err(ConfigError::Invalid("mock provider needs mock_fixture".into()));
        }
        Ok(())
    }

    /// Configured temperature, or the provider's default when unset.
    pub fn effective_temperature(&self) -> Option<f64> {
        self.temperature.or(self.provider.default_temperature())
    }

    /// Configured key variable, or the conventional one for the provider.
    pub fn effective_api_key_env(&self) -> &str {
        if !self.api_key_env.is_empty() {
            return &self.api_key_env;
        }
        match self.provider {
            ProviderKind::OpenaiCompatible => "OPENAI_API_KEY",
            ProviderKind::GeminiCompatible => "GEMINI_API_KEY",
            ProviderKind::AnthropicCompatible => "ANTHROPIC_API_KEY",
            ProviderKind::Mock => "",
        }
    }

    fn base_url(&self) -> &str {
        if self.base_url.is_empty() {
            self.provider.default_base_url()
        } else {
            self.base_url.trim_end_matches('/')
        }
    }

    /// Exponential backoff delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

/// Transport-level failure of one request.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, ProviderError::Auth(_))
    }
}

/// A chat-completion backend that turns one prompt into reply text.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;

    fn label(&self) -> (String, String);
}

/// Bounds the number of requests in flight against one provider.
#[derive(Debug)]
pub struct InflightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

impl InflightLimiter {
    pub fn new(max: usize) -> Self {
        InflightLimiter { max: max.max(1), current: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> InflightPermit<'_> {
        let mut current = self.current.lock().expect("limiter poisoned");
        while *current >= self.max {
            current = self.freed.wait(current).expect("limiter poisoned");
        }
        *current += 1;
        InflightPermit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().expect("limiter poisoned")
    }
}

pub struct InflightPermit<'a> {
    limiter: &'a InflightLimiter,
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut current = self.limiter.current.lock().expect("limiter poisoned");
        *current -= 1;
        self.limiter.freed.notify_one();
    }
}

/// HTTP client for the three hosted API dialects.
pub struct HttpProvider {
    cfg: ProviderConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, AgentError> {
        cfg.validate().map_err(|e| AgentError::Config(e.to_string()))?;
        let key_env = cfg.effective_api_key_env();
        let api_key = std::env::var(key_env)
            .map_err(|_| AgentError::Auth(format!("environment variable {key_env} is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.request_timeout_secs))
            .build()
            .map_err(|e| AgentError::Config(e.to_string()))?;
        Ok(HttpProvider { cfg, api_key, client })
    }

    fn request(&self, prompt: &str) -> reqwest::blocking::RequestBuilder {
        let (url, body) = request_parts(&self.cfg, prompt);
        let mut req = self.client.post(url).json(&body);
        match self.cfg.provider {
            ProviderKind::OpenaiCompatible => req = req.bearer_auth(&self.api_key),
            ProviderKind::GeminiCompatible => req = req.header("x-goog-api-key", &self.api_key),
            ProviderKind::AnthropicCompatible => {
                req = req.header("x-api-key", &self.api_key).header("anthropic-version", "2023-06-01")
            }
            ProviderKind::Mock => {}
        }
        req
    }
}

/// Endpoint URL and JSON body for one prompt.
pub fn request_parts(cfg: &ProviderConfig, prompt: &str) -> (String, serde_json::Value) {
    use serde_json::json;
    let base = cfg.base_url();
    match cfg.provider {
        ProviderKind::OpenaiCompatible => {
            let mut body = json!({
                "model": cfg.model_name,
                "messages": [{"role": "user", "content": prompt}],
            });
            if let Some(t) = cfg.effective_temperature() {
                body["temperature"] = json!(t);
            }
            (format!("{base}/chat/completions"), body)
        }
        ProviderKind::GeminiCompatible => {
            let mut body = json!({
                "contents": [{"role": "user", "parts": [{"text": prompt}]}],
            });
            if let Some(t) = cfg.effective_temperature() {
                body["generationConfig"] = json!({"temperature": t});
            }
            (format!("{base}/models/{}:generateContent", cfg.model_name), body)
        }
        ProviderKind::AnthropicCompatible => {
            let mut body = json!({
                "model": cfg.model_name,
                "max_tokens": cfg.max_tokens,
                "messages": [{"role": "user", "content": prompt}],
            });
            if let Some(t) = cfg.effective_temperature() {
                body["temperature"] = json!(t);
            }
            (format!("{base}/messages"), body)
        }
        ProviderKind::Mock => (String::new(), json!({ "prompt": prompt })),
    }
}

/// Pulls the reply text out of a provider's JSON response.
pub fn extract_text(kind: ProviderKind, body: &serde_json::Value) -> Result<String, ProviderError> {
    let text = match kind {
        ProviderKind::OpenaiCompatible => body.pointer("/choices/0/message/content"),
        ProviderKind::GeminiCompatible => body.pointer("/candidates/0/content/parts/0/text"),
        ProviderKind::AnthropicCompatible => body.pointer("/content/0/text"),
        ProviderKind::Mock => body.pointer("/text"),
    };
    text.and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| ProviderError::BadResponse(body.to_string().chars().take(200).collect()))
}

impl ChatProvider for HttpProvider {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let resp = self.request(prompt).send().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after_ms = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(|s| s * 1000);
            return Err(ProviderError::RateLimited { retry_after_ms });
        }
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderError::Auth(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Transport(format!("HTTP {status}")));
        }
        let body: serde_json::Value = resp.json().map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        extract_text(self.cfg.provider, &body)
    }

    fn label(&self) -> (String, String) {
        (self.cfg.provider.to_string(), self.cfg.model_name.clone())
    }
}

/// One scripted mock reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Error { error: MockErrorKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockErrorKind {
    Transport,
    RateLimited,
    Auth,
}

/// How the mock picks a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    /// Replies in file order, cycling. Suited to single-threaded tests.
    #[default]
    Sequential,
    /// Reply chosen by a hash of the prompt, so concurrent runs are
    /// reproducible.
    PromptHash,
}

/// Fixture file layout: `{"mode": "...", "replies": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub mode: MockMode,
    pub replies: Vec<MockReply>,
}

/// Offline provider that answers from a script.
#[derive(Debug)]
pub struct MockProvider {
    script: MockScript,
    next: AtomicUsize,
    calls: AtomicUsize,
    model: String,
}

impl MockProvider {
    pub fn new(script: MockScript, model: impl Into<String>) -> Self {
        MockProvider { script, next: AtomicUsize::new(0), calls: AtomicUsize::new(0), model: model.into() }
    }

    pub fn scripted(replies: impl IntoIterator<Item = MockReply>) -> Self {
        MockProvider::new(MockScript { mode: MockMode::Sequential, replies: replies.into_iter().collect() }, "mock")
    }

    pub fn from_file(path: &Path, model: impl Into<String>) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Config(format!("reading {}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_str(&text)
            .map_err(|e| AgentError::Config(format!("parsing {}: {e}", path.display())))?;
        if script.replies.is_empty() {
            return Err(AgentError::Config(format!("{} has no replies", path.display())));
        }
        Ok(MockProvider::new(script, model))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let n = self.script.replies.len();
        let idx = match self.script.mode {
            MockMode::Sequential => self.next.fetch_add(1, Ordering::SeqCst) % n,
            MockMode::PromptHash => {
                let digest = Sha256::digest(prompt.as_bytes());
                let mut word = [0u8; 8];
                word.copy_from_slice(&digest[..8]);
                (u64::from_le_bytes(word) % n as u64) as usize
            }
        };
        match &self.script.replies[idx] {
            MockReply::Text(t) => Ok(t.clone()),
            MockReply::Error { error: MockErrorKind::Transport } => {
                Err(ProviderError::Transport("scripted failure".into()))
            }
            MockReply::Error { error: MockErrorKind::RateLimited } => {
                Err(ProviderError::RateLimited { retry_after_ms: None })
            }
            MockReply::Error { error: MockErrorKind::Auth } => Err(ProviderError::Auth("scripted".into())),
        }
    }

    fn label(&self) -> (String, String) {
        (ProviderKind::Mock.to_string(), self.model.clone())
    }
}

/// Builds the provider described by a config.
pub fn connect(cfg: &ProviderConfig) -> Result<Arc<dyn ChatProvider>, AgentError> {
    cfg.validate().map_err(|e| AgentError::Config(e.to_string()))?;
    match cfg.provider {
        ProviderKind::Mock => {
            let path = cfg.mock_fixture.as_ref().expect("validated");
            Ok(Arc::new(MockProvider::from_file(path, cfg.model_name.clone())?))
        }
        _ => Ok(Arc::new(HttpProvider::new(cfg.clone())?)),
    }
}

/// A provider plus its retry and concurrency policy.
#[derive(Clone)]
pub struct LlmClient {
    provider: Arc<dyn ChatProvider>,
    limiter: Arc<InflightLimiter>,
    max_retries: u32,
    backoff: Arc<dyn Fn(u32) -> Duration + Send + Sync>,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("provider", &self.provider.label())
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl LlmClient {
    pub fn new(provider: Arc<dyn ChatProvider>, cfg: &ProviderConfig) -> Self {
        let backoff_cfg = cfg.clone();
        LlmClient {
            provider,
            limiter: Arc::new(InflightLimiter::new(cfg.max_inflight)),
            max_retries: cfg.max_retries,
            backoff: Arc::new(move |retry| backoff_cfg.backoff(retry)),
        }
    }

    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, AgentError> {
        Ok(LlmClient::new(connect(cfg)?, cfg))
    }

    /// No waiting between retries.
    pub fn without_backoff(mut self) -> Self {
        self.backoff = Arc::new(|_| Duration::ZERO);
        self
    }

    pub fn provider(&self) -> &Arc<dyn ChatProvider> {
        &self.provider
    }

    pub fn limiter(&self) -> &Arc<InflightLimiter> {
        &self.limiter
    }

    /// Sends `prompt` and parses the reply with `parse`, retrying transport
    /// errors, rate limits and unparseable replies up to `max_retries` times.
    pub fn query<T, E: fmt::Display>(
        &self,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, E>,
    ) -> Result<(T, u32), AgentError> {
        let mut attempts = 0;
        let mut last_error = String::new();
        while attempts <= self.max_retries {
            if attempts > 0 {
                let wait = (self.backoff)(attempts);
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
            attempts += 1;
            let reply = {
                let _permit = self.limiter.acquire();
                self.provider.complete(prompt)
            };
            match reply {
                Ok(text) => match parse(&text) {
                    Ok(value) => return Ok((value, attempts)),
                    Err(e) => last_error = e.to_string(),
                },
                Err(ProviderError::Auth(msg)) => return Err(AgentError::Auth(msg)),
                Err(ProviderError::RateLimited { retry_after_ms: Some(ms) }) => {
                    last_error = "rate limited".into();
                    std::thread::sleep(Duration::from_millis(ms));
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(AgentError::Failure { attempts, last_error })
    }
}

/// Outcome of one LLM move decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmDecision {
    pub mv: Move,
    pub rationale: AgentRationale,
    pub attempts: u32,
}

/// Prompts the model for one move.
pub fn llm_decide(client: &LlmClient, view: &MatchView<'_>, matrix: &PayoffMatrix) -> Result<LlmDecision, AgentError> {
    let prompt = build_prompt(view, matrix);
    let ((text, mv), attempts) = client.query(&prompt, parse_response)?;
    let (provider, model) = client.provider.label();
    Ok(LlmDecision { mv, rationale: AgentRationale { text, provider, model }, attempts })
}

/// An LLM agent for one match. It holds no memory beyond the view.
pub struct LlmAgent {
    client: LlmClient,
    payoffs: PayoffMatrix,
}

impl LlmAgent {
    pub fn new(client: LlmClient, payoffs: PayoffMatrix) -> Self {
        LlmAgent { client, payoffs }
    }
}

impl Agent for LlmAgent {
    fn decide(&mut self, view: &MatchView<'_>, _: &mut dyn RngCore) -> Result<Decision, AgentError> {
        let d = llm_decide(&self.client, view, &self.payoffs)?;
        Ok(Decision { mv: d.mv, rationale: Some(d.rationale) })
    }
}

/// Factory sharing one client (and its concurrency bound) across matches.
#[derive(Debug, Clone)]
pub struct LlmFactory {
    pub client: LlmClient,
}

impl AgentFactory for LlmFactory {
    fn create(&self, cfg: &MatchConfig) -> Box<dyn Agent> {
        Box::new(LlmAgent::new(self.client.clone(), cfg.payoffs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Move::{C, D};

    #[test]
    fn empty_history_prompt() {
        let view = MatchView::new(&[], &[], 0.10);
        let prompt = build_prompt(&view, &PayoffMatrix::default());
        assert!(prompt.contains("10%"));
        assert!(prompt.contains(NO_HISTORY_MARKER));
        assert!(prompt.contains("(0, 5)"));
        // fixed section order
        let order = ["Payoffs", "probability 10%", NO_HISTORY_MARKER, "maximize your total score", "exactly one letter"];
        let positions: Vec<usize> = order.iter().map(|s| prompt.find(s).expect(s)).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn truncated_view_lists_twenty_rounds() {
        let mine = vec![C; 25];
        let theirs = vec![D; 25];
        let view = MatchView {
            my_moves: &mine[5..],
            their_moves: &theirs[5..],
            rounds_played: 25,
            termination_probability: 0.25,
        };
        let prompt = build_prompt(&view, &PayoffMatrix::default());
        assert_eq!(prompt.matches("Round ").count(), 20);
        assert!(prompt.contains("Round 6: you C, opponent D"));
        assert!(prompt.contains("Round 25:"));
        assert!(!prompt.contains("Round 5:"));
        assert!(prompt.contains("25%"));
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(0.1), "10%");
        assert_eq!(format_percent(0.75), "75%");
        assert_eq!(format_percent(0.125), "12.5%");
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_response("I will cooperate.\nC").unwrap(), ("I will cooperate.".into(), C));
        assert_eq!(parse_response("D").unwrap(), (String::new(), D));
        assert_eq!(parse_response("Trust pays. C").unwrap().1, C);
        assert_eq!(parse_response("Decision: **d**\n").unwrap().1, D);
        assert!(parse_response("I choose both C and D equally").is_err());
        assert!(parse_response("").is_err());
        assert!(parse_response("I defect").is_err());
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = prompt_template_hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, prompt_template_hash());
    }

    #[test]
    fn request_bodies_carry_identical_prompt() {
        let prompt = "hello";
        let oa = request_parts(&ProviderConfig::new(ProviderKind::OpenaiCompatible, "gpt-4o-mini"), prompt);
        let ge = request_parts(&ProviderConfig::new(ProviderKind::GeminiCompatible, "gemini-2.5-flash"), prompt);
        let an = request_parts(&ProviderConfig::new(ProviderKind::AnthropicCompatible, "claude-3-haiku-20240307"), prompt);
        assert_eq!(oa.1["messages"][0]["content"], prompt);
        assert_eq!(oa.1["temperature"], 0.7);
        assert_eq!(ge.1["contents"][0]["parts"][0]["text"], prompt);
        assert!(ge.1.get("generationConfig").is_none());
        assert!(ge.0.ends_with("/models/gemini-2.5-flash:generateContent"));
        assert_eq!(an.1["messages"][0]["content"], prompt);
        assert_eq!(an.1["temperature"], 0.7);
    }

    #[test]
    fn extracts_reply_text() {
        let oa = serde_json::json!({"choices": [{"message": {"content": "x C"}}]});
        assert_eq!(extract_text(ProviderKind::OpenaiCompatible, &oa).unwrap(), "x C");
        let ge = serde_json::json!({"candidates": [{"content": {"parts": [{"text": "D"}]}}]});
        assert_eq!(extract_text(ProviderKind::GeminiCompatible, &ge).unwrap(), "D");
        let an = serde_json::json!({"content": [{"type": "text", "text": "C"}]});
        assert_eq!(extract_text(ProviderKind::AnthropicCompatible, &an).unwrap(), "C");
        assert!(extract_text(ProviderKind::AnthropicCompatible, &oa).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProviderConfig::new(ProviderKind::OpenaiCompatible, "m");
        assert!(cfg.validate().is_ok());
        cfg.temperature = Some(2.5);
        assert!(cfg.validate().is_err());
        let mock = ProviderConfig::new(ProviderKind::Mock, "m");
        assert!(mock.validate().is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let mut cfg = ProviderConfig::new(ProviderKind::Mock, "m");
        cfg.backoff_base_ms = 100;
        cfg.backoff_max_ms = 350;
        assert_eq!(cfg.backoff(1), Duration::from_millis(100));
        assert_eq!(cfg.backoff(2), Duration::from_millis(200));
        assert_eq!(cfg.backoff(3), Duration::from_millis(350));
        assert_eq!(cfg.backoff(80), Duration::from_millis(350));
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(InflightLimiter::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let limiter = limiter.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _p = limiter.acquire();
                    peak.fetch_max(limiter.in_flight(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(limiter.in_flight(), 0);
    }
}
