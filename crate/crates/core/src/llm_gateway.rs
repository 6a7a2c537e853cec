//! Model backends: OpenAI-compatible HTTP, replay of recorded trials, and a
//! synthetic planted-bias model for validating the metrics pipeline.

use std::collections::BTreeMap;
use std::sync::{LazyLock, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile_space::{DimensionCatalog, Profile};
use crate::prompt_forge::{Permutation, RenderedPrompt, Role, TaskKind};
use crate::readability::{self, TextStats};
use crate::seed::stable_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("request timed out: {0}")]
    TimeoutError(String),
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
}

impl GatewayError {
    /// Short machine-readable reason for trial logs.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::BackendUnavailable(_) => "backend_unavailable",
            GatewayError::AuthError(_) => "auth_error",
            GatewayError::TimeoutError(_) => "timeout",
            GatewayError::InvalidSpec(_) => "invalid_spec",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Synthetic,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Http => "http",
            BackendKind::Replay => "replay",
            BackendKind::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "http" => Ok(BackendKind::Http),
            "replay" => Ok(BackendKind::Replay),
            "synthetic" => Ok(BackendKind::Synthetic),
            other => Err(GatewayError::InvalidSpec(format!(
                "unknown backend {other:?}"
            ))),
        }
    }
}

fn default_max_retries() -> u32 {
    3
}
fn default_rate_limit() -> f64 {
    5.0
}
fn default_timeout() -> f64 {
    60.0
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Requests per second.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticBiasConfig>,
}

impl BackendSpec {
    pub fn new(kind: BackendKind, model_name: impl Into<String>) -> Self {
        BackendSpec {
            kind,
            endpoint: None,
            model_name: model_name.into(),
            temperature: 0.0,
            max_retries: default_max_retries(),
            rate_limit: default_rate_limit(),
            timeout: default_timeout(),
            api_key_env: None,
            backoff_base_ms: default_backoff_ms(),
            synthetic: None,
        }
    }

    pub fn synthetic(config: SyntheticBiasConfig) -> Self {
        let mut s = BackendSpec::new(BackendKind::Synthetic, "synthetic");
        s.synthetic = Some(config);
        s
    }

    pub fn http(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        let mut s = BackendSpec::new(BackendKind::Http, model_name);
        s.endpoint = Some(endpoint.into());
        s.api_key_env = Some("OPENAI_API_KEY".into());
        s
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature != 0.0 {
            return Err(GatewayError::InvalidSpec(format!(
                "audit runs use temperature 0, got {}",
                self.temperature
            )));
        }
        if self.rate_limit.is_nan()
            || self.rate_limit <= 0.0
            || self.timeout.is_nan()
            || self.timeout <= 0.0
        {
            return Err(GatewayError::InvalidSpec(
                "rate_limit and timeout must be positive".into(),
            ));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.as_deref().is_none_or(str::is_empty) => Err(
                GatewayError::InvalidSpec("http backend requires an endpoint".into()),
            ),
            BackendKind::Synthetic => match &self.synthetic {
                Some(c) => c.check_noise(),
                None => Err(GatewayError::InvalidSpec(
                    "synthetic backend requires a bias config".into(),
                )),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    /// Seconds.
    pub latency: f64,
    pub attempt_count: u32,
    pub backend: BackendKind,
}

/// Everything a backend may need to answer one trial.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a RenderedPrompt,
    pub profile: &'a Profile,
    pub task: TaskKind,
    pub role: Role,
    pub problem_id: &'a str,
    /// Stable per-trial key, used by the synthetic backend for noise.
    pub trial_key: &'a str,
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, GatewayError>;
}

/// Spaces request start times at least `1 / rate` seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / per_second),
            next: Mutex::new(None),
        }
    }

    /// Blocks until the caller may send; returns the granted slot.
    pub fn acquire(&self) -> Instant {
        let slot = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
        slot
    }
}

/// Chat-completions request body.
pub fn chat_payload(model: &str, temperature: f64, prompt: &RenderedPrompt) -> String {
    serde_json::json!({
        "model": model,
        "temperature": temperature,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
    })
    .to_string()
}

/// Text of the first choice in a chat-completions response body.
pub fn parse_chat_response(body: &str) -> Result<String, GatewayError> {
    let v: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| GatewayError::BackendUnavailable(format!("malformed response: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| {
            GatewayError::BackendUnavailable("response has no choices[0].message.content".into())
        })
}

#[cfg(feature = "http")]
pub use http::HttpBackend;

#[cfg(feature = "http")]
mod http {
    use super::*;

    enum Attempt {
        Done(String),
        Fatal(GatewayError),
        Transient(GatewayError, Option<Duration>),
    }

    pub struct HttpBackend {
        spec: BackendSpec,
        url: String,
        api_key: Option<String>,
        agent: ureq::Agent,
        limiter: RateLimiter,
    }

    impl HttpBackend {
        pub fn new(spec: BackendSpec) -> Result<Self, GatewayError> {
            spec.validate()?;
            let endpoint = spec.endpoint.clone().unwrap_or_default();
            let url = if endpoint.ends_with("/chat/completions") {
                endpoint
            } else {
                format!("{}/chat/completions", endpoint.trim_end_matches('/'))
            };
            let api_key = spec
                .api_key_env
                .as_deref()
                .and_then(|var| std::env::var(var).ok())
                .filter(|k| !k.is_empty());
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(Duration::from_secs_f64(spec.timeout)))
                .build()
                .into();
            let limiter = RateLimiter::new(spec.rate_limit);
            Ok(HttpBackend {
                spec,
                url,
                api_key,
                agent,
                limiter,
            })
        }

        fn attempt(&self, body: &str) -> Attempt {
            self.limiter.acquire();
            let mut req = self
                .agent
                .post(&self.url)
                .header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let mut resp = match req.send(body) {
                Ok(r) => r,
                Err(ureq::Error::Timeout(t)) => {
                    return Attempt::Transient(GatewayError::TimeoutError(t.to_string()), None)
                }
                Err(e) => {
                    return Attempt::Transient(
                        GatewayError::BackendUnavailable(e.to_string()),
                        None,
                    )
                }
            };
            let status = resp.status().as_u16();
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(|s| Duration::from_secs_f64(s.clamp(0.0, 60.0)));
            let text = match resp.body_mut().read_to_string() {
                Ok(t) => t,
                Err(ureq::Error::Timeout(t)) => {
                    return Attempt::Transient(GatewayError::TimeoutError(t.to_string()), None)
                }
                Err(e) => {
                    return Attempt::Transient(
                        GatewayError::BackendUnavailable(e.to_string()),
                        None,
                    )
                }
            };
            match status {
                200..=299 => match parse_chat_response(&text) {
                    Ok(t) => Attempt::Done(t),
                    Err(e) => Attempt::Fatal(e),
                },
                401 | 403 => {
                    Attempt::Fatal(GatewayError::AuthError(format!("http status {status}")))
                }
                429 | 500..=599 => Attempt::Transient(
                    GatewayError::BackendUnavailable(format!("http status {status}")),
                    retry_after,
                ),
                _ => Attempt::Fatal(GatewayError::BackendUnavailable(format!(
                    "http status {status}"
                ))),
            }
        }
    }

    impl Backend for HttpBackend {
        fn kind(&self) -> BackendKind {
            BackendKind::Http
        }

        fn complete(
            &self,
            request: &CompletionRequest<'_>,
        ) -> Result<CompletionResult, GatewayError> {
            let body = chat_payload(&self.spec.model_name, self.spec.temperature, request.prompt);
            let start = Instant::now();
            let mut attempts = 0u32;
            loop {
                attempts += 1;
                match self.attempt(&body) {
                    Attempt::Done(text) => {
                        return Ok(CompletionResult {
                            text,
                            latency: start.elapsed().as_secs_f64(),
                            attempt_count: attempts,
                            backend: BackendKind::Http,
                        })
                    }
                    Attempt::Fatal(e) => return Err(e),
                    Attempt::Transient(e, retry_after) => {
                        if attempts > self.spec.max_retries {
                            return Err(e);
                        }
                        let backoff = Duration::from_millis(
                            self.spec
                                .backoff_base_ms
                                .saturating_mul(1 << (attempts - 1).min(16)),
                        );
                        std::thread::sleep(retry_after.unwrap_or(backoff));
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplayKey {
    pub profile_id: String,
    pub task: TaskKind,
    pub role: Role,
    pub problem_id: String,
}

/// Serves recorded response texts.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    store: BTreeMap<ReplayKey, String>,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = (ReplayKey, String)>) -> Self {
        ReplayBackend {
            store: entries.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, GatewayError> {
        let key = ReplayKey {
            profile_id: request.profile.id().to_string(),
            task: request.task,
            role: request.role,
            problem_id: request.problem_id.to_string(),
        };
        self.store
            .get(&key)
            .map(|text| CompletionResult {
                text: text.clone(),
                latency: 0.0,
                attempt_count: 1,
                backend: BackendKind::Replay,
            })
            .ok_or_else(|| {
                GatewayError::BackendUnavailable(format!(
                    "no recorded trial for {} / {} / {} / {}",
                    key.profile_id, key.task, key.role, key.problem_id
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDelta {
    pub dimension: String,
    pub value: String,
    pub delta: f64,
}

fn default_base_grade() -> f64 {
    9.0
}
fn default_base_choice() -> f64 {
    3.0
}

/// Planted-bias model: output complexity is a base level plus the deltas of
/// the profile's values plus Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBiasConfig {
    #[serde(default = "default_base_grade")]
    pub base_grade: f64,
    #[serde(default = "default_base_choice")]
    pub base_choice: f64,
    #[serde(default)]
    pub deltas: Vec<BiasDelta>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticBiasConfig {
    fn default() -> Self {
        SyntheticBiasConfig {
            base_grade: default_base_grade(),
            base_choice: default_base_choice(),
            deltas: Vec::new(),
            noise_sd: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticBiasConfig {
    pub fn with_delta(mut self, dimension: &str, value: &str, delta: f64) -> Self {
        self.deltas.push(BiasDelta {
            dimension: dimension.into(),
            value: value.into(),
            delta,
        });
        self
    }

    fn check_noise(&self) -> Result<(), GatewayError> {
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(GatewayError::InvalidSpec(
                "noise_sd must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn validate(&self, catalog: &DimensionCatalog) -> Result<(), GatewayError> {
        self.check_noise()?;
        for d in &self.deltas {
            let dim = catalog
                .dimension(&d.dimension)
                .map_err(|e| GatewayError::InvalidSpec(e.to_string()))?;
            if dim.index_of(&d.value).is_none() {
                return Err(GatewayError::InvalidSpec(format!(
                    "delta references unknown value {:?} of {}",
                    d.value, d.dimension
                )));
            }
        }
        Ok(())
    }

    /// Sum of deltas over the profile's values.
    pub fn shift(&self, profile: &Profile) -> f64 {
        self.deltas
            .iter()
            .filter(|d| profile.value_of(&d.dimension) == Some(d.value.as_str()))
            .map(|d| d.delta)
            .sum()
    }

    fn rng(&self, profile: &Profile, trial_key: &str, stream: &[u8]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(stable_seed(&[
            &self.seed.to_le_bytes(),
            profile.id().as_bytes(),
            trial_key.as_bytes(),
            stream,
        ]))
    }

    fn noise(&self, profile: &Profile, trial_key: &str) -> f64 {
        if self.noise_sd == 0.0 {
            return 0.0;
        }
        let normal = Normal::new(0.0, self.noise_sd).expect("noise_sd checked");
        normal.sample(&mut self.rng(profile, trial_key, b"noise"))
    }

    /// Planted true level for a ranking trial.
    pub fn ranking_level(&self, profile: &Profile, trial_key: &str) -> u8 {
        let x = self.base_choice + self.shift(profile) + self.noise(profile, trial_key);
        x.round().clamp(1.0, 5.0) as u8
    }

    /// Planted target grade for a generation trial.
    pub fn generation_target(&self, profile: &Profile, trial_key: &str) -> f64 {
        (self.base_grade + self.shift(profile) + self.noise(profile, trial_key)).clamp(1.0, 20.0)
    }
}

/// Display position (as a bare numeral) of the planted level.
pub fn synthetic_rank(
    config: &SyntheticBiasConfig,
    profile: &Profile,
    permutation: &Permutation,
    trial_key: &str,
) -> String {
    permutation
        .position_of(config.ranking_level(profile, trial_key))
        .to_string()
}

/// Explanatory text whose total grade level is within 0.5 of the planted target.
pub fn synthetic_generate(
    config: &SyntheticBiasConfig,
    profile: &Profile,
    problem_id: &str,
    trial_key: &str,
) -> String {
    let target = config.generation_target(profile, trial_key);
    let key = format!("{problem_id}\u{1f}{trial_key}");
    compose_to_grade(target, &mut config.rng(profile, &key, b"text"))
}

const SIMPLE_WORDS: &[&str] = &[
    "we", "add", "the", "two", "sides", "then", "check", "each", "step", "so", "it", "is", "true",
    "now", "look", "at", "this", "part", "and", "find", "what", "comes", "next", "here", "sum",
    "of", "all", "terms", "one", "more", "time", "left", "right", "side", "with", "same", "rule",
    "keep", "note", "that", "way", "get", "back", "new", "line", "point", "shape", "count", "ways",
    "half", "whole", "small", "big", "first", "last", "set", "up", "take", "out", "put",
];

const COMPLEX_WORDS: &[&str] = &[
    "equation",
    "variable",
    "probability",
    "coefficient",
    "polynomial",
    "calculation",
    "relationship",
    "approximately",
    "consideration",
    "geometrical",
    "numerical",
    "parameter",
    "determine",
    "consequently",
    "interpretation",
    "substitution",
    "evaluating",
    "additional",
    "identity",
    "quadratic",
    "denominator",
    "numerator",
    "rectangular",
    "triangular",
    "configuration",
    "relatively",
    "fundamental",
    "properties",
    "combination",
    "continuously",
    "arithmetic",
    "estimation",
    "symmetrical",
    "proportional",
    "intermediate",
    "definition",
];

const SENTENCES: usize = 12;

#[derive(Clone, Copy)]
struct WordStat {
    syllables: usize,
    letters: usize,
    complex: bool,
}

fn word_stat(word: &str) -> WordStat {
    let syllables = readability::word_syllables(word);
    WordStat {
        syllables,
        letters: word.chars().filter(|c| c.is_alphanumeric()).count(),
        complex: syllables >= 3,
    }
}

type Bank = Vec<(&'static str, WordStat)>;

static SIMPLE_BANK: LazyLock<Bank> =
    LazyLock::new(|| SIMPLE_WORDS.iter().map(|w| (*w, word_stat(w))).collect());
static COMPLEX_BANK: LazyLock<Bank> =
    LazyLock::new(|| COMPLEX_WORDS.iter().map(|w| (*w, word_stat(w))).collect());

struct Draws {
    simple: Bank,
    complex: Bank,
}

impl Draws {
    fn new(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let mut pick = |bank: &Bank| {
            (0..n)
                .map(|_| bank[rng.random_range(0..bank.len())])
                .collect()
        };
        let simple = pick(&SIMPLE_BANK);
        let complex = pick(&COMPLEX_BANK);
        Draws { simple, complex }
    }
}

const MIN_WORDS: f64 = 4.0;
const MAX_WORDS: f64 = 32.0;
const MAX_COMPLEX: f64 = 0.5;

/// Words per sentence and complex-word share at effort `t` in [0, 1].
fn shape(t: f64) -> (f64, f64) {
    (MIN_WORDS + (MAX_WORDS - MIN_WORDS) * t, MAX_COMPLEX * t)
}

/// Word choices for effort `t`, grouped by sentence.
fn layout(t: f64, draws: &Draws) -> Vec<Vec<(&'static str, WordStat)>> {
    let (w, f) = shape(t);
    let mut out = Vec::with_capacity(SENTENCES);
    let mut j = 0usize;
    for i in 0..SENTENCES {
        let len = ((i + 1) as f64 * w).floor() as usize - (i as f64 * w).floor() as usize;
        let mut sentence = Vec::with_capacity(len);
        for _ in 0..len {
            let complex = ((j + 1) as f64 * f).floor() > (j as f64 * f).floor();
            sentence.push(if complex {
                draws.complex[j]
            } else {
                draws.simple[j]
            });
            j += 1;
        }
        out.push(sentence);
    }
    out
}

fn layout_stats(layout: &[Vec<(&'static str, WordStat)>]) -> TextStats {
    let mut s = TextStats {
        sentences: layout.len(),
        ..TextStats::default()
    };
    for (_, w) in layout.iter().flatten() {
        s.words += 1;
        s.syllables += w.syllables;
        s.letters += w.letters;
        s.complex_words += usize::from(w.complex);
    }
    s
}

fn layout_grade(layout: &[Vec<(&'static str, WordStat)>]) -> f64 {
    readability::grade_report(layout_stats(layout))
        .map(|r| r.total_grade_level)
        .unwrap_or(f64::NAN)
}

fn render(layout: &[Vec<(&'static str, WordStat)>]) -> String {
    layout
        .iter()
        .map(|sentence| {
            let mut s = String::new();
            for (k, (w, _)) in sentence.iter().enumerate() {
                if k == 0 {
                    let mut cs = w.chars();
                    if let Some(c) = cs.next() {
                        s.extend(c.to_uppercase());
                        s.push_str(cs.as_str());
                    }
                } else {
                    s.push(' ');
                    s.push_str(w);
                }
            }
            s.push('.');
            s
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Text with total grade level close to `target`, by bisection on effort.
pub fn compose_to_grade(target: f64, rng: &mut ChaCha8Rng) -> String {
    let draws = Draws::new(rng, SENTENCES * MAX_WORDS as usize + SENTENCES);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if layout_grade(&layout(mid, &draws)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = layout(lo, &draws);
    let b = layout(hi, &draws);
    let best = if (layout_grade(&a) - target).abs() <= (layout_grade(&b) - target).abs() {
        a
    } else {
        b
    };
    render(&best)
}

/// Backend answering from a [`SyntheticBiasConfig`].
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    config: SyntheticBiasConfig,
}

impl SyntheticBackend {
    pub fn new(
        config: SyntheticBiasConfig,
        catalog: &DimensionCatalog,
    ) -> Result<Self, GatewayError> {
        config.validate(catalog)?;
        Ok(SyntheticBackend { config })
    }

    pub fn config(&self) -> &SyntheticBiasConfig {
        &self.config
    }
}

impl Backend for SyntheticBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Synthetic
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, GatewayError> {
        let text = match request.task {
            TaskKind::Ranking => {
                let perm = request.prompt.permutation.ok_or_else(|| {
                    GatewayError::BackendUnavailable("ranking prompt without permutation".into())
                })?;
                synthetic_rank(&self.config, request.profile, &perm, request.trial_key)
            }
            TaskKind::Generation => synthetic_generate(
                &self.config,
                request.profile,
                request.problem_id,
                request.trial_key,
            ),
        };
        Ok(CompletionResult {
            text,
            latency: 0.0,
            attempt_count: 1,
            backend: BackendKind::Synthetic,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile_space::DimensionCatalog;

    fn indian(values: &[&str]) -> Profile {
        DimensionCatalog::indian().profile(values).unwrap()
    }

    fn high() -> Profile {
        indian(&["General", "IIT", "Metro", "English", "CBSE", "Male", "High"])
    }

    #[test]
    fn rank_examples() {
        let id = Permutation::identity();
        let flat = SyntheticBiasConfig::default();
        assert_eq!(synthetic_rank(&flat, &high(), &id, "k"), "3");
        let rich = SyntheticBiasConfig::default().with_delta("income", "High", 1.6);
        assert_eq!(synthetic_rank(&rich, &high(), &id, "k"), "5");
        let low = SyntheticBiasConfig {
            base_choice: 1.0,
            ..Default::default()
        }
        .with_delta("income", "High", -3.0);
        assert_eq!(synthetic_rank(&low, &high(), &id, "k"), "1");
    }

    #[test]
    fn rank_reports_display_position() {
        let perm = Permutation::new([4, 2, 5, 3, 1]).unwrap();
        let cfg = SyntheticBiasConfig::default();
        // Level 3 sits at display position 4.
        assert_eq!(synthetic_rank(&cfg, &high(), &perm, "k"), "4");
    }

    #[test]
    fn generate_hits_target() {
        for base in [3.0, 14.0, 1.0, 7.3, 20.0] {
            let cfg = SyntheticBiasConfig {
                base_grade: base,
                ..Default::default()
            };
            let text = synthetic_generate(&cfg, &high(), "algebra-l3-000", "k");
            let tgl = readability::total_grade_level(&text).unwrap();
            assert!(
                (tgl - base).abs() <= 0.5,
                "target {base} measured {tgl}: {text}"
            );
        }
    }

    #[test]
    fn composed_stats_match_analyzer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = Draws::new(&mut rng, 500);
        for t in [0.0, 0.3, 0.77, 1.0] {
            let l = layout(t, &draws);
            assert_eq!(
                readability::analyze_text(&render(&l)).unwrap(),
                layout_stats(&l)
            );
        }
    }

    #[test]
    fn generate_is_deterministic_and_trial_sensitive() {
        let cfg = SyntheticBiasConfig {
            noise_sd: 0.4,
            seed: 11,
            ..Default::default()
        };
        let a = synthetic_generate(&cfg, &high(), "p", "t1");
        assert_eq!(a, synthetic_generate(&cfg, &high(), "p", "t1"));
        assert_ne!(a, synthetic_generate(&cfg, &high(), "p", "t2"));
    }

    #[test]
    fn config_validation() {
        let cat = DimensionCatalog::indian();
        assert!(SyntheticBiasConfig::default()
            .with_delta("income", "High", 1.0)
            .validate(&cat)
            .is_ok());
        assert!(SyntheticBiasConfig::default()
            .with_delta("income", "Rich", 1.0)
            .validate(&cat)
            .is_err());
        assert!(SyntheticBiasConfig::default()
            .with_delta("race", "White", 1.0)
            .validate(&cat)
            .is_err());
        let neg = SyntheticBiasConfig {
            noise_sd: -1.0,
            ..Default::default()
        };
        assert!(neg.validate(&cat).is_err());
        let mut spec = BackendSpec::http("http://localhost:1", "m");
        spec.temperature = 0.7;
        assert!(spec.validate().is_err());
        assert!(BackendSpec::new(BackendKind::Http, "m").validate().is_err());
        assert!(BackendSpec::new(BackendKind::Replay, "m")
            .validate()
            .is_ok());
    }

    #[test]
    fn replay_identity_and_miss() {
        let p = high();
        let key = ReplayKey {
            profile_id: p.id().into(),
            task: TaskKind::Ranking,
            role: Role::Teacher,
            problem_id: "x".into(),
        };
        let backend = ReplayBackend::new([(key, "2".to_string())]);
        let prompt = RenderedPrompt {
            system: "s".into(),
            user: "u".into(),
            permutation: None,
            trial_seed: 0,
        };
        let mut req = CompletionRequest {
            prompt: &prompt,
            profile: &p,
            task: TaskKind::Ranking,
            role: Role::Teacher,
            problem_id: "x",
            trial_key: "k",
        };
        let r = backend.complete(&req).unwrap();
        assert_eq!((r.text.as_str(), r.attempt_count), ("2", 1));
        req.role = Role::Student;
        assert!(matches!(
            backend.complete(&req),
            Err(GatewayError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn payload_is_verbatim() {
        let prompt = RenderedPrompt {
            system: "sys \"quoted\"".into(),
            user: "line one\n\nline two {x}".into(),
            permutation: None,
            trial_seed: 0,
        };
        let body = chat_payload("gpt-4o-mini", 0.0, &prompt);
        assert_eq!(
            body,
            r#"{"messages":[{"content":"sys \"quoted\"","role":"system"},{"content":"line one\n\nline two {x}","role":"user"}],"model":"gpt-4o-mini","temperature":0.0}"#
        );
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["messages"][1]["content"], prompt.user.as_str());
    }

    #[test]
    fn response_parsing() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"3"}}]}"#;
        assert_eq!(parse_chat_response(ok).unwrap(), "3");
        assert!(parse_chat_response("{}").is_err());
        assert!(parse_chat_response("not json").is_err());
    }

    #[test]
    fn rate_limiter_spacing() {
        let limiter = RateLimiter::new(20.0);
        let slots: Vec<Instant> = (0..45).map(|_| limiter.acquire()).collect();
        let start = slots[0];
        let secs: Vec<f64> = slots.iter().map(|s| (*s - start).as_secs_f64()).collect();
        for (i, a) in secs.iter().enumerate() {
            let in_window = secs[i..].iter().filter(|b| **b < a + 2.0).count();
            assert!(in_window <= 40);
        }
        assert!(secs[44] >= 44.0 / 20.0 - 1e-9);
    }
}
