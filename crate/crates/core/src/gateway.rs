//! Client side of completion-style backends: batching, per-language output
//! budgets, retries, truncation of over-generated text, and a mock backend.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{word_count, LangCode, SamplingParams};
use crate::prompts::{render, PromptSpec, RenderedPrompt};
use crate::wlac::{SampleRequest, Sampler, SamplerError};

pub const DEFAULT_BATCH_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Failed { status: Option<u16>, message: String },
    #[error("backend timed out")]
    Timeout,
}

impl BackendError {
    pub fn failed(message: impl Into<String>) -> Self {
        BackendError::Failed {
            status: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid gateway config: {0}")]
    Config(String),
}

/// Output budget: words of the longest source segment times a per-language
/// multiplier, never below `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenPolicy {
    pub multiplier_by_lang: BTreeMap<String, u32>,
    pub default_multiplier: u32,
    pub floor: u32,
}

impl Default for TokenPolicy {
    fn default() -> Self {
        let multiplier_by_lang = [("ar", 8), ("zh", 5), ("rw", 5), ("fr", 4), ("es", 4)]
            .into_iter()
            .map(|(l, m)| (l.to_string(), m))
            .collect();
        TokenPolicy {
            multiplier_by_lang,
            default_multiplier: 4,
            floor: 16,
        }
    }
}

impl TokenPolicy {
    pub fn multiplier(&self, lang: &LangCode) -> u32 {
        self.multiplier_by_lang
            .get(lang.code())
            .copied()
            .unwrap_or(self.default_multiplier)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.default_multiplier < 1 || self.multiplier_by_lang.values().any(|m| *m < 1) {
            return Err(GatewayError::Config("multipliers must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn max_tokens_for(batch: &[&str], tgt_lang: &LangCode, policy: &TokenPolicy) -> Result<u32, GatewayError> {
    let longest = batch
        .iter()
        .map(|s| word_count(s))
        .max()
        .ok_or(GatewayError::EmptyBatch)?;
    let budget = (longest as u32).saturating_mul(policy.multiplier(tgt_lang));
    Ok(budget.max(policy.floor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncateMode {
    #[default]
    FirstLine,
    None,
}

/// With `FirstLine`, keeps the text before the first newline, trimmed. A
/// completion that starts with a newline becomes empty.
pub fn truncate_overgeneration(completion: &str, mode: TruncateMode) -> String {
    match mode {
        TruncateMode::FirstLine => completion.split('\n').next().unwrap_or("").trim().to_string(),
        TruncateMode::None => completion.to_string(),
    }
}

/// One prompt as sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub stop: Vec<String>,
}

/// A backend accepts up to `batch_size` requests at a time. An `Err` for
/// the whole call is retried by the gateway; per-item errors are not.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, batch: &[CompletionRequest]) -> Result<Vec<Result<String, BackendError>>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpCompletion,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub batch_size: usize,
    pub retries: u32,
    pub timeout_secs: u64,
    pub requests_per_minute: Option<u32>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            auth_env: None,
            batch_size: DEFAULT_BATCH_SIZE,
            retries: 2,
            timeout_secs: 60,
            requests_per_minute: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.batch_size < 1 {
            return Err(GatewayError::Config("batch_size must be at least 1".into()));
        }
        if self.kind == BackendKind::HttpCompletion && self.endpoint.as_deref().unwrap_or("").is_empty() {
            return Err(GatewayError::Config("http_completion needs an endpoint".into()));
        }
        Ok(())
    }

    /// The configured backend; the mock echoes the last prompt line.
    pub fn build_backend(&self) -> Result<Arc<dyn CompletionBackend>, GatewayError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Arc::new(MockBackend::echo()),
            BackendKind::HttpCompletion => {
                let token = self.auth_env.as_ref().and_then(|v| std::env::var(v).ok());
                Arc::new(HttpBackend::new(
                    self.endpoint.clone().unwrap_or_default(),
                    token,
                    Duration::from_secs(self.timeout_secs),
                )?)
            }
        })
    }
}

/// Token bucket refilled continuously at `per_minute / 60` requests per
/// second, holding at most `per_minute` tokens.
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(n: u32) -> Self {
        let capacity = f64::from(n.max(1));
        RateLimiter {
            capacity,
            per_sec: capacity / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// How long the caller must wait before a request may go out; the token
    /// is taken either way.
    pub fn reserve(&self) -> Duration {
        let mut st = self.state.lock().expect("limiter lock");
        let now = Instant::now();
        let refill = now.duration_since(st.1).as_secs_f64() * self.per_sec;
        st.0 = (st.0 + refill).min(self.capacity) - 1.0;
        st.1 = now;
        if st.0 >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-st.0 / self.per_sec)
        }
    }

    pub fn acquire(&self) {
        let wait = self.reserve();
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    cfg: BackendConfig,
    policy: TokenPolicy,
    limiter: Option<RateLimiter>,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn CompletionBackend>,
        cfg: BackendConfig,
        policy: TokenPolicy,
    ) -> Result<Self, GatewayError> {
        if cfg.batch_size < 1 {
            return Err(GatewayError::Config("batch_size must be at least 1".into()));
        }
        policy.validate()?;
        let limiter = cfg.requests_per_minute.map(RateLimiter::per_minute);
        Ok(Gateway {
            backend,
            cfg,
            policy,
            limiter,
        })
    }

    pub fn from_config(cfg: BackendConfig, policy: TokenPolicy) -> Result<Self, GatewayError> {
        let backend = cfg.build_backend()?;
        Self::new(backend, cfg, policy)
    }

    pub fn mock() -> Self {
        Self::new(
            Arc::new(MockBackend::echo()),
            BackendConfig::default(),
            TokenPolicy::default(),
        )
        .expect("default config")
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &TokenPolicy {
        &self.policy
    }

    /// One completion per request, in order. Requests are sent in chunks of
    /// `batch_size`; a chunk whose call fails is retried up to `retries`
    /// times before each of its items reports the error.
    pub fn complete_requests(&self, requests: &[CompletionRequest]) -> Vec<Result<String, GatewayError>> {
        let mut out = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(self.cfg.batch_size) {
            let mut attempt = 0;
            let result = loop {
                if let Some(l) = &self.limiter {
                    l.acquire();
                }
                match self.backend.complete(chunk) {
                    Ok(items) if items.len() == chunk.len() => break Ok(items),
                    Ok(items) => {
                        break Err(BackendError::failed(format!(
                            "backend returned {} completions for {} prompts",
                            items.len(),
                            chunk.len()
                        )))
                    }
                    Err(e) if attempt < self.cfg.retries => {
                        log::warn!("backend call failed (attempt {}): {e}", attempt + 1);
                        attempt += 1;
                    }
                    Err(e) => break Err(e),
                }
            };
            match result {
                Ok(items) => out.extend(items.into_iter().map(|r| r.map_err(GatewayError::from))),
                Err(e) => out.extend(chunk.iter().map(|_| Err(GatewayError::from(e.clone())))),
            }
        }
        out
    }

    /// Completes rendered prompts with `params.max_new_tokens` as budget.
    /// Stops come from `params`, or from the template when `params` has none.
    pub fn complete_batch(
        &self,
        prompts: &[RenderedPrompt],
        params: &SamplingParams,
    ) -> Vec<Result<String, GatewayError>> {
        let reqs: Vec<CompletionRequest> = prompts
            .iter()
            .map(|p| request_for(p, params, params.max_new_tokens))
            .collect();
        self.complete_requests(&reqs)
    }

    /// Translation requests: the budget is computed per chunk from the
    /// chunk's longest source segment, and outputs are cut at the first
    /// newline.
    pub fn translate_batch(
        &self,
        prompts: &[RenderedPrompt],
        params: &SamplingParams,
        tgt_lang: &LangCode,
    ) -> Vec<Result<String, GatewayError>> {
        let mut reqs = Vec::with_capacity(prompts.len());
        for chunk in prompts.chunks(self.cfg.batch_size) {
            let segs: Vec<&str> = chunk.iter().map(|p| p.segment().unwrap_or(&p.text)).collect();
            let budget = max_tokens_for(&segs, tgt_lang, &self.policy).unwrap_or(self.policy.floor);
            reqs.extend(chunk.iter().map(|p| request_for(p, params, budget)));
        }
        self.complete_requests(&reqs)
            .into_iter()
            .map(|r| r.map(|t| truncate_overgeneration(&t, TruncateMode::FirstLine)))
            .collect()
    }
}

fn request_for(p: &RenderedPrompt, params: &SamplingParams, max_tokens: u32) -> CompletionRequest {
    let stop = if params.stop_sequences.is_empty() {
        p.expected_stop.iter().cloned().collect()
    } else {
        params.stop_sequences.clone()
    };
    CompletionRequest {
        prompt: p.text.clone(),
        max_tokens,
        temperature: params.temperature,
        top_p: params.top_p,
        top_k: (params.top_k > 0).then_some(params.top_k),
        stop,
    }
}

type MockFn = dyn Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync;

/// Deterministic backend for tests and offline use. Known prompts return
/// their fixture; anything else goes to the fallback function (by default
/// the uppercased last line of the prompt). `fail_first(n)` makes the first
/// `n` calls fail as a whole, like a server returning 500.
pub struct MockBackend {
    fixtures: HashMap<String, String>,
    fallback: Box<MockFn>,
    fail_remaining: AtomicU32,
    calls: AtomicUsize,
    batch_sizes: Mutex<Vec<usize>>,
}

fn echo_last_line(r: &CompletionRequest) -> Result<String, BackendError> {
    Ok(r.prompt.lines().last().unwrap_or("").to_uppercase())
}

impl MockBackend {
    pub fn echo() -> Self {
        Self::from_fn(echo_last_line)
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        MockBackend {
            fixtures: HashMap::new(),
            fallback: Box::new(f),
            fail_remaining: AtomicU32::new(0),
            calls: AtomicUsize::new(0),
            batch_sizes: Mutex::new(Vec::new()),
        }
    }

    pub fn with_fixtures(mut self, fixtures: HashMap<String, String>) -> Self {
        self.fixtures = fixtures;
        self
    }

    pub fn fail_first(self, n: u32) -> Self {
        self.fail_remaining.store(n, Ordering::SeqCst);
        self
    }

    /// Number of `complete` calls so far, failed ones included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batch_sizes.lock().expect("mock lock").clone()
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, batch: &[CompletionRequest]) -> Result<Vec<Result<String, BackendError>>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.batch_sizes.lock().expect("mock lock").push(batch.len());
        let failing = self
            .fail_remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            return Err(BackendError::Failed {
                status: Some(500),
                message: "injected failure".into(),
            });
        }
        Ok(batch
            .iter()
            .map(|r| match self.fixtures.get(&r.prompt) {
                Some(t) => Ok(t.clone()),
                None => (self.fallback)(r),
            })
            .collect())
    }
}

#[derive(Deserialize)]
struct HttpReply {
    text: String,
}

/// POSTs each request as JSON to `endpoint` and reads `{"text": ...}` back.
/// 5xx answers and transport errors fail the whole call (so it is
/// retried); 4xx answers fail only the item.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: String, token: Option<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint,
            token,
        })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, batch: &[CompletionRequest]) -> Result<Vec<Result<String, BackendError>>, BackendError> {
        let mut out = Vec::with_capacity(batch.len());
        for req in batch {
            let mut call = self.client.post(&self.endpoint).json(req);
            if let Some(t) = &self.token {
                call = call.bearer_auth(t);
            }
            let resp = call.send().map_err(|e| {
                if e.is_timeout() {
                    BackendError::Timeout
                } else {
                    BackendError::failed(e.to_string())
                }
            })?;
            let status = resp.status();
            if status.is_server_error() {
                return Err(BackendError::Failed {
                    status: Some(status.as_u16()),
                    message: resp.text().unwrap_or_default(),
                });
            }
            if !status.is_success() {
                out.push(Err(BackendError::Failed {
                    status: Some(status.as_u16()),
                    message: resp.text().unwrap_or_default(),
                }));
                continue;
            }
            out.push(
                resp.json::<HttpReply>()
                    .map(|r| r.text)
                    .map_err(|e| BackendError::failed(format!("bad reply: {e}"))),
            );
        }
        Ok(out)
    }
}

/// Autocompletion sampler on top of a completion backend: a zero-shot
/// prompt, optionally followed by the target prefix, completed `n` times.
pub struct GatewaySampler {
    gateway: Arc<Gateway>,
    src_lang: LangCode,
    tgt_lang: LangCode,
}

impl GatewaySampler {
    pub fn new(gateway: Arc<Gateway>, src_lang: LangCode, tgt_lang: LangCode) -> Self {
        GatewaySampler {
            gateway,
            src_lang,
            tgt_lang,
        }
    }
}

impl Sampler for GatewaySampler {
    fn sample(&self, req: &SampleRequest<'_>) -> Result<Vec<Vec<String>>, SamplerError> {
        let mut prompt = render(&PromptSpec::ZeroShot {
            src_lang: self.src_lang.clone(),
            tgt_lang: self.tgt_lang.clone(),
            segment: req.source.to_string(),
        })
        .map_err(|e| SamplerError(e.to_string()))?;
        if let Some(p) = req.target_prefix {
            prompt.text.push(' ');
            prompt.text.push_str(p);
        }
        let budget = max_tokens_for(&[req.source], &self.tgt_lang, self.gateway.policy()).unwrap_or(16);
        let params = SamplingParams {
            top_p: 1.0,
            temperature: req.temperature,
            top_k: req.top_k,
            num_hypotheses: 1,
            max_new_tokens: budget,
            stop_sequences: vec!["\n".into()],
        };
        let prompts = vec![prompt; req.n as usize];
        self.gateway
            .complete_batch(&prompts, &params)
            .into_iter()
            .map(|r| {
                r.map(|t| {
                    truncate_overgeneration(&t, TruncateMode::FirstLine)
                        .split_whitespace()
                        .map(str::to_string)
                        .collect()
                })
                .map_err(|e| SamplerError(e.to_string()))
            })
            .collect()
    }
}
