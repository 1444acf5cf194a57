//! Completion backends behind one interface, with a write-through JSONL cache
//! and retry with exponential backoff.
//!
//! [`BackendHandle`] is what the rest of the harness talks to. It wraps any
//! [`CompletionBackend`] (the HTTP client, a fixture map, or the gold
//! [`OracleBackend`]) and owns the cache and retry policy.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::model::{IESample, PromptDesign, TaskKind};
use crate::prompt::{render_pair, RenderedPrompt, DEFAULT_MAX_NEW_TOKENS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub max_new_tokens: usize,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub want_logprobs: bool,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: 0.0,
            stop_sequences: Vec::new(),
            want_logprobs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub finish_reason: FinishReason,
    pub backend_id: String,
    #[serde(default)]
    pub cached: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out")]
    Timeout,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no sample with id {0:?} behind this prompt")]
    UnknownSample(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::RateLimited { .. } | BackendError::Timeout | BackendError::BackendUnavailable(_)
        )
    }
}

pub trait CompletionBackend: Send + Sync {
    /// Model identifier; part of the cache key.
    fn id(&self) -> String;

    fn supports_logprobs(&self) -> bool {
        false
    }

    fn generate(&self, prompt: &RenderedPrompt, config: &DecodingConfig) -> Result<Completion, BackendError>;
}

/// Hex SHA-256 of a string.
pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Cache key over (model id, context, full decoding config).
pub fn cache_key(backend_id: &str, context: &str, config: &DecodingConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        backend: &'a str,
        context: &'a str,
        config: &'a DecodingConfig,
    }
    let json = serde_json::to_string(&Key {
        backend: backend_id,
        context,
        config,
    })
    .expect("cache key serialises");
    content_hash(&json)
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stops(text: &str, stops: &[String]) -> (String, bool) {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    match cut {
        Some(i) => (text[..i].to_string(), true),
        None => (text.to_string(), false),
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    completion: Completion,
}

/// Append-only JSONL completion cache with an in-memory index.
pub struct CompletionCache {
    path: PathBuf,
    index: RwLock<HashMap<String, Completion>>,
    file: Mutex<File>,
}

impl CompletionCache {
    /// Opens (or creates) the cache file. Unparseable lines, such as a record cut
    /// short by a crash, are skipped.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let wrap = |source| BackendError::Cache {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(wrap)?;
        }
        let mut index = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(wrap)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(wrap)?;
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(r) => {
                        index.entry(r.key).or_insert(r.completion);
                    }
                    Err(e) if !line.trim().is_empty() => {
                        log::warn!("{}:{}: skipping cache record: {e}", path.display(), i + 1)
                    }
                    Err(_) => {}
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(path).map_err(wrap)?;
        // A crash mid-write can leave the last record without its newline.
        let len = file.metadata().map_err(wrap)?.len();
        if len > 0 {
            use std::io::{Read, Seek, SeekFrom};
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1)).map_err(wrap)?;
            file.read_exact(&mut last).map_err(wrap)?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(wrap)?;
            }
        }
        Ok(CompletionCache {
            path: path.to_path_buf(),
            index: RwLock::new(index),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Completion> {
        self.index.read().expect("cache index poisoned").get(key).cloned()
    }

    /// Stores a completion unless the key is already present.
    pub fn put(&self, key: &str, completion: &Completion) -> Result<(), BackendError> {
        let mut file = self.file.lock().expect("cache file poisoned");
        if self.index.read().expect("cache index poisoned").contains_key(key) {
            return Ok(());
        }
        let mut stored = completion.clone();
        stored.cached = false;
        let line = serde_json::to_string(&CacheRecord {
            key: key.to_string(),
            completion: stored.clone(),
        })
        .expect("cache record serialises");
        writeln!(file, "{line}")
            .and_then(|_| file.flush())
            .map_err(|source| BackendError::Cache {
                path: self.path.clone(),
                source,
            })?;
        self.index.write().expect("cache index poisoned").insert(key.to_string(), stored);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    /// Delay before retry number `attempt` (0-based): base * 2^attempt, capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(32));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// A backend plus its cache and retry policy; cheap to clone and share.
#[derive(Clone)]
pub struct BackendHandle {
    backend: Arc<dyn CompletionBackend>,
    cache: Option<Arc<CompletionCache>>,
    retry: RetryPolicy,
    calls: Arc<AtomicUsize>,
}

impl BackendHandle {
    pub fn new(backend: Arc<dyn CompletionBackend>) -> Self {
        BackendHandle {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn with_cache(mut self, cache: Arc<CompletionCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn id(&self) -> String {
        self.backend.id()
    }

    pub fn cache(&self) -> Option<&Arc<CompletionCache>> {
        self.cache.as_ref()
    }

    /// Number of requests that reached the underlying backend (retries included).
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, prompt: &RenderedPrompt, config: &DecodingConfig) -> Result<Completion, BackendError> {
        let id = self.backend.id();
        let key = cache_key(&id, &prompt.context, config);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(Completion { cached: true, ..hit });
        }

        let mut effective = config.clone();
        if effective.want_logprobs && !self.backend.supports_logprobs() {
            log::warn!("backend {id} does not return log-probabilities; continuing with text only");
            effective.want_logprobs = false;
        }
        let mut attempt = 0;
        let mut completion = loop {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.generate(prompt, &effective) {
                Ok(c) => break c,
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    let wait = self.retry.delay(attempt);
                    log::warn!("{id}: {e}; retry {} in {wait:?}", attempt + 1);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(BackendError::RateLimited { .. }) => {
                    return Err(BackendError::RateLimited { attempts: attempt + 1 })
                }
                Err(e) => return Err(e),
            }
        };

        let mut stops = config.stop_sequences.clone();
        stops.extend(prompt.stop_sequences.iter().cloned());
        let (text, stopped) = truncate_at_stops(&completion.text, &stops);
        if stopped {
            completion.finish_reason = FinishReason::Stop;
        }
        completion.text = text;
        completion.cached = false;
        if !effective.want_logprobs {
            completion.token_logprobs = None;
        }
        if let Some(cache) = &self.cache {
            cache.put(&key, &completion)?;
        }
        Ok(completion)
    }
}

/// Free-function form of [`BackendHandle::complete`].
pub fn complete(prompt: &RenderedPrompt, config: &DecodingConfig, backend: &BackendHandle) -> Result<Completion, BackendError> {
    backend.complete(prompt, config)
}

/// Mock answering from a map keyed by the content hash of the context.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    id: String,
    answers: HashMap<String, (String, Option<Vec<TokenLogprob>>)>,
}

impl FixtureBackend {
    pub fn new(id: impl Into<String>) -> Self {
        FixtureBackend {
            id: id.into(),
            answers: HashMap::new(),
        }
    }

    pub fn with_answer(mut self, context: &str, text: impl Into<String>) -> Self {
        self.answers.insert(content_hash(context), (text.into(), None));
        self
    }

    pub fn with_scored_answer(mut self, context: &str, tokens: Vec<TokenLogprob>) -> Self {
        let text = tokens.iter().map(|t| t.token.as_str()).collect();
        self.answers.insert(content_hash(context), (text, Some(tokens)));
        self
    }
}

impl CompletionBackend for FixtureBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn supports_logprobs(&self) -> bool {
        true
    }

    fn generate(&self, prompt: &RenderedPrompt, config: &DecodingConfig) -> Result<Completion, BackendError> {
        let hash = content_hash(&prompt.context);
        let (text, lps) = self.answers.get(&hash).ok_or(BackendError::UnknownSample(hash))?;
        Ok(Completion {
            text: text.clone(),
            token_logprobs: if config.want_logprobs { lps.clone() } else { None },
            finish_reason: FinishReason::Stop,
            backend_id: self.id.clone(),
            cached: false,
        })
    }
}

/// How the oracle degrades its gold answers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    #[default]
    None,
    /// Omit exactly `round(rate * n)` of the `n` gold structures of each split.
    DropStatements { rate: f64, seed: u64 },
    /// Prefix an unmatched `(` (a stray `"` for natural-lang, which has no brackets) to exactly
    /// `round(rate * n)` of the `n` completions of each split.
    CorruptBrackets { rate: f64, seed: u64 },
}

fn pick_exact(n: usize, rate: f64, seed: u64) -> Vec<bool> {
    let k = ((rate.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut mask = vec![false; n];
    for &i in &idx[..k] {
        mask[i] = true;
    }
    mask
}

/// Mock that answers every prompt with the gold completion of the test sample
/// whose id the prompt carries.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    design: PromptDesign,
    task: TaskKind,
    perturbation: Perturbation,
    answers: HashMap<String, String>,
}

/// Builds the gold-echo oracle for every sample of `dataset`.
pub fn oracle_backend(dataset: &Dataset, design: PromptDesign) -> OracleBackend {
    OracleBackend::new(dataset, design, Perturbation::None)
}

impl OracleBackend {
    pub fn new(dataset: &Dataset, design: PromptDesign, perturbation: Perturbation) -> Self {
        let task = dataset.schema.task();
        let mut answers = HashMap::new();
        for samples in dataset.splits.values() {
            let kept: Vec<IESample> = match perturbation {
                Perturbation::DropStatements { rate, seed } => {
                    let sizes: Vec<usize> = samples
                        .iter()
                        .map(|s| match task {
                            TaskKind::Ner => s.entities.len(),
                            TaskKind::Re => s.relations.len(),
                        })
                        .collect();
                    let mask = pick_exact(sizes.iter().sum(), rate, seed);
                    let mut at = 0;
                    samples
                        .iter()
                        .zip(&sizes)
                        .map(|(s, &n)| {
                            let drop = &mask[at..at + n];
                            at += n;
                            let mut s = s.clone();
                            let mut i = 0;
                            match task {
                                TaskKind::Ner => s.entities.retain(|_| (!drop[i], i += 1).0),
                                TaskKind::Re => s.relations.retain(|_| (!drop[i], i += 1).0),
                            }
                            s
                        })
                        .collect()
                }
                _ => samples.clone(),
            };
            let corrupt = match perturbation {
                Perturbation::CorruptBrackets { rate, seed } => pick_exact(samples.len(), rate, seed),
                _ => vec![false; samples.len()],
            };
            for (s, bad) in kept.iter().zip(corrupt) {
                let mut text = render_pair(s, design, task)
                    .map(|p| p.completion_part)
                    .unwrap_or_default();
                if bad {
                    text.insert(0, if design == PromptDesign::NaturalLang { '"' } else { '(' });
                }
                answers.insert(s.id.clone(), text);
            }
        }
        OracleBackend {
            design,
            task,
            perturbation,
            answers,
        }
    }

    pub fn design(&self) -> PromptDesign {
        self.design
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }
}

impl CompletionBackend for OracleBackend {
    fn id(&self) -> String {
        match self.perturbation {
            Perturbation::None => format!("oracle/{}", self.design),
            Perturbation::DropStatements { rate, seed } => format!("oracle/{}/drop-{rate}-{seed}", self.design),
            Perturbation::CorruptBrackets { rate, seed } => format!("oracle/{}/corrupt-{rate}-{seed}", self.design),
        }
    }

    fn generate(&self, prompt: &RenderedPrompt, _config: &DecodingConfig) -> Result<Completion, BackendError> {
        let id = prompt.test_id.clone().unwrap_or_default();
        let text = self.answers.get(&id).ok_or(BackendError::UnknownSample(id))?;
        Ok(Completion {
            text: text.clone(),
            token_logprobs: None,
            finish_reason: FinishReason::Stop,
            backend_id: self.id(),
            cached: false,
        })
    }
}

#[cfg(feature = "http")]
pub use http::{HttpBackend, HttpConfig, API_KEY_ENV, ENDPOINT_ENV};

#[cfg(feature = "http")]
mod http {
    use std::collections::VecDeque;
    use std::sync::{Condvar, Mutex};
    use std::time::{Duration, Instant};

    use serde::{Deserialize, Serialize};

    use super::{BackendError, Completion, CompletionBackend, DecodingConfig, FinishReason, TokenLogprob};
    use crate::prompt::{count_tokens, RenderedPrompt};

    pub const API_KEY_ENV: &str = "CODEIE_API_KEY";
    pub const ENDPOINT_ENV: &str = "CODEIE_ENDPOINT";

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct HttpConfig {
        pub endpoint: String,
        pub model: String,
        #[serde(default = "default_in_flight")]
        pub max_in_flight: usize,
        /// Global token-per-minute budget (prompt plus generation budget); 0 disables it.
        #[serde(default)]
        pub tokens_per_minute: usize,
        #[serde(default = "default_timeout")]
        pub timeout_secs: u64,
    }

    fn default_in_flight() -> usize {
        4
    }

    fn default_timeout() -> u64 {
        60
    }

    impl HttpConfig {
        pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
            HttpConfig {
                endpoint: endpoint.into(),
                model: model.into(),
                max_in_flight: default_in_flight(),
                tokens_per_minute: 0,
                timeout_secs: default_timeout(),
            }
        }
    }

    /// Bounds concurrent requests and tokens spent per rolling minute.
    struct RateGate {
        state: Mutex<GateState>,
        cv: Condvar,
        max_in_flight: usize,
        tokens_per_minute: usize,
    }

    struct GateState {
        in_flight: usize,
        window: VecDeque<(Instant, usize)>,
    }

    impl RateGate {
        fn acquire(&self, tokens: usize) {
            let mut st = self.state.lock().expect("rate gate poisoned");
            loop {
                let now = Instant::now();
                while st.window.front().is_some_and(|(t, _)| now.duration_since(*t) >= Duration::from_secs(60)) {
                    st.window.pop_front();
                }
                let used: usize = st.window.iter().map(|(_, n)| n).sum();
                let budget_ok = self.tokens_per_minute == 0 || used == 0 || used + tokens <= self.tokens_per_minute;
                if st.in_flight < self.max_in_flight && budget_ok {
                    st.in_flight += 1;
                    st.window.push_back((now, tokens));
                    return;
                }
                let wait = if budget_ok {
                    Duration::from_secs(60)
                } else {
                    let oldest = st.window.front().map(|(t, _)| *t).unwrap_or(now);
                    Duration::from_secs(60).saturating_sub(now.duration_since(oldest))
                };
                st = self.cv.wait_timeout(st, wait).expect("rate gate poisoned").0;
            }
        }

        fn release(&self) {
            self.state.lock().expect("rate gate poisoned").in_flight -= 1;
            self.cv.notify_all();
        }
    }

    pub struct HttpBackend {
        config: HttpConfig,
        api_key: String,
        client: reqwest::blocking::Client,
        gate: RateGate,
    }

    #[derive(Serialize)]
    struct Request<'a> {
        model: &'a str,
        prompt: &'a str,
        max_tokens: usize,
        temperature: f64,
        stop: &'a [String],
        logprobs: Option<u32>,
    }

    #[derive(Deserialize)]
    struct Response {
        choices: Vec<Choice>,
    }

    #[derive(Deserialize)]
    struct Choice {
        text: String,
        #[serde(default)]
        finish_reason: Option<String>,
        #[serde(default)]
        logprobs: Option<Logprobs>,
    }

    #[derive(Deserialize)]
    struct Logprobs {
        tokens: Vec<String>,
        token_logprobs: Vec<Option<f64>>,
    }

    impl HttpBackend {
        pub fn new(config: HttpConfig, api_key: impl Into<String>) -> Result<Self, BackendError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(config.timeout_secs))
                .build()
                .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
            let gate = RateGate {
                state: Mutex::new(GateState {
                    in_flight: 0,
                    window: VecDeque::new(),
                }),
                cv: Condvar::new(),
                max_in_flight: config.max_in_flight.max(1),
                tokens_per_minute: config.tokens_per_minute,
            };
            Ok(HttpBackend {
                config,
                api_key: api_key.into(),
                client,
                gate,
            })
        }

        /// Reads the credential from `CODEIE_API_KEY`.
        pub fn from_env(config: HttpConfig) -> Result<Self, BackendError> {
            let key = std::env::var(API_KEY_ENV)
                .map_err(|_| BackendError::AuthError(format!("{API_KEY_ENV} is not set")))?;
            Self::new(config, key)
        }

        fn send(&self, prompt: &RenderedPrompt, config: &DecodingConfig) -> Result<Completion, BackendError> {
            let mut stop: Vec<String> = config.stop_sequences.clone();
            stop.extend(prompt.stop_sequences.iter().cloned());
            stop.dedup();
            let body = Request {
                model: &self.config.model,
                prompt: &prompt.context,
                max_tokens: config.max_new_tokens,
                temperature: config.temperature,
                stop: &stop,
                logprobs: config.want_logprobs.then_some(1),
            };
            let resp = self
                .client
                .post(&self.config.endpoint)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send()
                .map_err(|e| {
                    if e.is_timeout() {
                        BackendError::Timeout
                    } else {
                        BackendError::BackendUnavailable(e.to_string())
                    }
                })?;
            let status = resp.status();
            if status.as_u16() == 401 || status.as_u16() == 403 {
                return Err(BackendError::AuthError(status.to_string()));
            }
            if status.as_u16() == 429 {
                return Err(BackendError::RateLimited { attempts: 1 });
            }
            if status.as_u16() == 408 || status.as_u16() == 504 {
                return Err(BackendError::Timeout);
            }
            if status.is_server_error() {
                return Err(BackendError::BackendUnavailable(status.to_string()));
            }
            if !status.is_success() {
                return Err(BackendError::Protocol(status.to_string()));
            }
            let parsed: Response = resp.json().map_err(|e| BackendError::Protocol(e.to_string()))?;
            let choice = parsed
                .choices
                .into_iter()
                .next()
                .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
            let token_logprobs = choice.logprobs.map(|lp| {
                lp.tokens
                    .into_iter()
                    .zip(lp.token_logprobs)
                    .filter_map(|(token, p)| p.map(|logprob| TokenLogprob { token, logprob: logprob.min(0.0) }))
                    .collect()
            });
            Ok(Completion {
                text: choice.text,
                token_logprobs,
                finish_reason: match choice.finish_reason.as_deref() {
                    Some("length") => FinishReason::Length,
                    _ => FinishReason::Stop,
                },
                backend_id: self.config.model.clone(),
                cached: false,
            })
        }
    }

    impl CompletionBackend for HttpBackend {
        fn id(&self) -> String {
            self.config.model.clone()
        }

        fn supports_logprobs(&self) -> bool {
            true
        }

        fn generate(&self, prompt: &RenderedPrompt, config: &DecodingConfig) -> Result<Completion, BackendError> {
            self.gate.acquire(count_tokens(&prompt.context) + config.max_new_tokens);
            let out = self.send(prompt, config);
            self.gate.release();
            out
        }
    }
}
