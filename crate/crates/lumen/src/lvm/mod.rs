//! Gateway to vision-language completion providers.
//!
//! A provider is a [`LvmTransport`] registered under an id. The gateway
//! resolves credentials from the environment, bounds concurrent requests per
//! provider, and retries transient failures with jittered exponential backoff.

mod mock;
mod openai;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use lumen_core::prompt::PromptBundle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{mock_text, MockTransport, MOCK_PROVIDER};
pub use openai::{OpenAiTransport, OPENAI_PROVIDER};

pub const DEFAULT_CONCURRENCY: usize = 4;
pub const BACKOFF_BASE: Duration = Duration::from_secs(1);
pub const BACKOFF_FACTOR: f64 = 2.0;
pub const BACKOFF_JITTER: f64 = 0.2;

fn default_timeout() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_output_tokens() -> u32 {
    512
}

/// Provider selection and request limits. Secrets are never stored here:
/// `credential_ref` names the environment variable that holds one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvmConfig {
    pub provider: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub credential_ref: Option<String>,
    /// Seconds per attempt.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    /// Provider-side model name, when the provider hosts several.
    #[serde(default)]
    pub model: Option<String>,
}

impl LvmConfig {
    pub fn mock() -> Self {
        Self {
            provider: MOCK_PROVIDER.to_string(),
            endpoint: String::new(),
            credential_ref: None,
            timeout: default_timeout(),
            max_retries: 0,
            max_output_tokens: default_max_output_tokens(),
            model: None,
        }
    }

    pub fn validate(&self) -> Result<(), LvmError> {
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(LvmError::InvalidConfig(format!("timeout {} must be > 0", self.timeout)));
        }
        if let Some(name) = &self.credential_ref {
            let ok = !name.is_empty()
                && !name.starts_with(|c: char| c.is_ascii_digit())
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !ok {
                return Err(LvmError::InvalidConfig(format!(
                    "credential_ref {name:?} is not an environment variable name"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvmResult {
    pub text: String,
    pub provider: String,
    /// Seconds from the first attempt to the final reply.
    pub latency: f64,
    pub token_usage: Option<(u64, u64)>,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LvmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("provider unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("provider rejected the request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("unknown provider: {0}")]
    UnknownProvider(String),
    #[error("provider already registered: {0}")]
    DuplicateProvider(String),
    #[error("invalid lvm config: {0}")]
    InvalidConfig(String),
    #[error("image {0} cannot be resolved for the provider")]
    UnresolvableImage(String),
}

/// Outcome of a single transport attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Auth(String),
    RateLimited(String),
    /// Network failure or 5xx; retried.
    Transient(String),
    Timeout(String),
    Rejected { status: u16, message: String },
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportReply {
    pub text: String,
    pub token_usage: Option<(u64, u64)>,
}

/// Everything a transport needs for one attempt.
pub struct LvmRequest<'a> {
    pub bundle: &'a PromptBundle,
    /// PNG bytes for each image ref, in bundle order.
    pub images: &'a [(String, Vec<u8>)],
    pub config: &'a LvmConfig,
    pub credential: Option<&'a str>,
}

pub trait LvmTransport: Send + Sync {
    fn requires_credential(&self) -> bool;

    fn send(&self, req: &LvmRequest<'_>) -> Result<TransportReply, TransportError>;
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Nominal delay before retry `k` (0-based), without jitter.
pub fn backoff_delay(k: u32) -> Duration {
    BACKOFF_BASE.mul_f64(BACKOFF_FACTOR.powi(k as i32))
}

/// Counting semaphore; `acquire` blocks while all permits are taken.
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

struct Provider {
    transport: Arc<dyn LvmTransport>,
    slots: Arc<Semaphore>,
}

/// Provider registry plus retry policy.
pub struct LvmGateway {
    providers: RwLock<BTreeMap<String, Provider>>,
    sleeper: Arc<dyn Sleeper>,
    jitter: Mutex<ChaCha8Rng>,
    concurrency: usize,
}

impl std::fmt::Debug for LvmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<String> = self.providers().into_iter().collect();
        f.debug_struct("LvmGateway").field("providers", &ids).finish()
    }
}

impl LvmGateway {
    /// Empty gateway with real sleeps and the default concurrency limit.
    pub fn new() -> Self {
        Self::with_sleeper(Arc::new(ThreadSleeper), 0)
    }

    pub fn with_sleeper(sleeper: Arc<dyn Sleeper>, jitter_seed: u64) -> Self {
        Self {
            providers: RwLock::new(BTreeMap::new()),
            sleeper,
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(jitter_seed)),
            concurrency: DEFAULT_CONCURRENCY,
        }
    }

    /// Gateway with the mock and OpenAI-compatible providers registered.
    pub fn with_builtins() -> Self {
        let g = Self::new();
        g.register_builtins();
        g
    }

    pub fn register_builtins(&self) {
        self.register_provider(MOCK_PROVIDER, Arc::new(MockTransport))
            .expect("fresh gateway");
        self.register_provider(OPENAI_PROVIDER, Arc::new(OpenAiTransport::new()))
            .expect("fresh gateway");
    }

    pub fn set_concurrency(&mut self, n: usize) {
        self.concurrency = n.max(1);
    }

    pub fn register_provider(&self, id: &str, transport: Arc<dyn LvmTransport>) -> Result<(), LvmError> {
        let mut map = self.providers.write().unwrap_or_else(|e| e.into_inner());
        if map.contains_key(id) {
            return Err(LvmError::DuplicateProvider(id.to_string()));
        }
        map.insert(
            id.to_string(),
            Provider {
                transport,
                slots: Arc::new(Semaphore::new(self.concurrency)),
            },
        );
        Ok(())
    }

    pub fn providers(&self) -> Vec<String> {
        self.providers
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect()
    }

    fn jittered(&self, k: u32) -> Duration {
        let u: f64 = self
            .jitter
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .random_range(-BACKOFF_JITTER..=BACKOFF_JITTER);
        backoff_delay(k).mul_f64(1.0 + u)
    }

    /// Sends `bundle` to the configured provider. `resolve` returns the PNG
    /// bytes of an image ref.
    pub fn complete(
        &self,
        bundle: &PromptBundle,
        resolve: &dyn Fn(&str) -> Option<Vec<u8>>,
        config: &LvmConfig,
    ) -> Result<LvmResult, LvmError> {
        config.validate()?;
        let (transport, slots) = {
            let map = self.providers.read().unwrap_or_else(|e| e.into_inner());
            let p = map
                .get(&config.provider)
                .ok_or_else(|| LvmError::UnknownProvider(config.provider.clone()))?;
            (p.transport.clone(), p.slots.clone())
        };
        let credential = if transport.requires_credential() {
            let name = config.credential_ref.as_deref().ok_or_else(|| {
                LvmError::Auth(format!("provider {} needs credential_ref", config.provider))
            })?;
            match std::env::var(name) {
                Ok(v) if !v.is_empty() => Some(v),
                _ => return Err(LvmError::Auth(format!("environment variable {name} is not set"))),
            }
        } else {
            None
        };
        let images = bundle
            .image_refs()
            .map(|r| {
                resolve(r)
                    .map(|b| (r.to_string(), b))
                    .ok_or_else(|| LvmError::UnresolvableImage(r.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let req = LvmRequest {
            bundle,
            images: &images,
            config,
            credential: credential.as_deref(),
        };
        let _permit = slots.acquire();
        let start = Instant::now();
        let mut attempt = 0u32;
        loop {
            let err = match transport.send(&req) {
                Ok(reply) => {
                    if reply.text.trim().is_empty() {
                        return Err(LvmError::MalformedResponse("empty completion text".into()));
                    }
                    return Ok(LvmResult {
                        text: reply.text,
                        provider: config.provider.clone(),
                        latency: start.elapsed().as_secs_f64(),
                        token_usage: reply.token_usage,
                        retries: attempt,
                    });
                }
                Err(e) => e,
            };
            let attempts = attempt + 1;
            let final_err = match err {
                TransportError::Auth(m) => return Err(LvmError::Auth(m)),
                TransportError::Malformed(m) => return Err(LvmError::MalformedResponse(m)),
                TransportError::Rejected { status, message } => {
                    return Err(LvmError::Rejected { status, message })
                }
                TransportError::RateLimited(_) => LvmError::RateLimited { attempts },
                TransportError::Timeout(_) => LvmError::Timeout { attempts },
                TransportError::Transient(message) => LvmError::Unavailable { attempts, message },
            };
            if attempt >= config.max_retries {
                return Err(final_err);
            }
            let delay = self.jittered(attempt);
            tracing::debug!(provider = %config.provider, attempt, ?delay, error = %final_err, "retrying");
            self.sleeper.sleep(delay);
            attempt += 1;
        }
    }
}

impl Default for LvmGateway {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Replaces every occurrence of `secret` in `text`.
pub fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if !s.is_empty() => text.replace(s, "[REDACTED]"),
        _ => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[derive(Default)]
    struct Recorder(Mutex<Vec<Duration>>);

    impl Sleeper for Recorder {
        fn sleep(&self, d: Duration) {
            self.0.lock().unwrap().push(d);
        }
    }

    struct Scripted {
        replies: Mutex<Vec<Result<TransportReply, TransportError>>>,
        calls: AtomicUsize,
    }

    impl LvmTransport for Scripted {
        fn requires_credential(&self) -> bool {
            false
        }

        fn send(&self, _: &LvmRequest<'_>) -> Result<TransportReply, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn bundle() -> PromptBundle {
        PromptBundle {
            task: lumen_core::TaskKind::Classification,
            template_id: "v1".into(),
            parts: vec![],
            stage_tags: vec![],
        }
    }

    fn ok() -> Result<TransportReply, TransportError> {
        Ok(TransportReply {
            text: "fine".into(),
            token_usage: None,
        })
    }

    fn run(script: Vec<Result<TransportReply, TransportError>>, retries: u32) -> (Result<LvmResult, LvmError>, usize, Vec<Duration>) {
        let rec = Arc::new(Recorder::default());
        let g = LvmGateway::with_sleeper(rec.clone(), 9);
        let t = Arc::new(Scripted {
            replies: Mutex::new(script),
            calls: AtomicUsize::new(0),
        });
        g.register_provider("s", t.clone()).unwrap();
        let cfg = LvmConfig {
            provider: "s".into(),
            max_retries: retries,
            ..LvmConfig::mock()
        };
        let r = g.complete(&bundle(), &|_| None, &cfg);
        let delays = rec.0.lock().unwrap().clone();
        (r, t.calls.load(Ordering::SeqCst), delays)
    }

    #[test]
    fn retries_then_succeeds() {
        let (r, calls, delays) = run(vec![Err(TransportError::Transient("500".into())), ok()], 1);
        assert_eq!(r.unwrap().retries, 1);
        assert_eq!(calls, 2);
        assert_eq!(delays.len(), 1);
        let d = delays[0].as_secs_f64();
        assert!((0.8..=1.2).contains(&d), "{d}");
    }

    #[test]
    fn retry_budget_respected_and_delays_grow() {
        let script = (0..6).map(|_| Err(TransportError::RateLimited("429".into()))).collect();
        let (r, calls, delays) = run(script, 4);
        assert_eq!(r.unwrap_err(), LvmError::RateLimited { attempts: 5 });
        assert_eq!(calls, 5);
        assert_eq!(delays.len(), 4);
        for (k, d) in delays.iter().enumerate() {
            let nominal = backoff_delay(k as u32).as_secs_f64();
            assert!((d.as_secs_f64() / nominal - 1.0).abs() <= BACKOFF_JITTER + 1e-12);
        }
        for k in 1..4 {
            assert!(backoff_delay(k) >= backoff_delay(k - 1));
        }
    }

    #[test]
    fn auth_is_not_retried() {
        let (r, calls, _) = run(vec![Err(TransportError::Auth("401".into())), ok()], 3);
        assert!(matches!(r, Err(LvmError::Auth(_))));
        assert_eq!(calls, 1);
    }

    #[test]
    fn registry_errors() {
        let g = LvmGateway::with_builtins();
        assert_eq!(
            g.register_provider(MOCK_PROVIDER, Arc::new(MockTransport)),
            Err(LvmError::DuplicateProvider(MOCK_PROVIDER.into()))
        );
        let cfg = LvmConfig {
            provider: "nope".into(),
            ..LvmConfig::mock()
        };
        assert_eq!(
            g.complete(&bundle(), &|_| None, &cfg).unwrap_err(),
            LvmError::UnknownProvider("nope".into())
        );
    }

    #[test]
    fn config_validation() {
        let mut c = LvmConfig::mock();
        c.timeout = 0.0;
        assert!(c.validate().is_err());
        c.timeout = 1.0;
        c.credential_ref = Some("sk-abc123".into());
        assert!(c.validate().is_err());
        c.credential_ref = Some("OPENAI_API_KEY".into());
        assert!(c.validate().is_ok());
        assert!(toml::from_str::<LvmConfig>("provider = \"mock\"\napi_key = \"x\"").is_err());
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        let s = Arc::new(Semaphore::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let (s, live, peak) = (s.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = s.acquire();
                    let n = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(n, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn redaction() {
        assert_eq!(redact("Bearer abc", Some("abc")), "Bearer [REDACTED]");
        assert_eq!(redact("x", None), "x");
    }
}
