//! Chat-completions client with retry, backoff and schema repair.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_budget, parse_reply, BackendDescriptor, BackendError, BackendKind, GenerationBackend, ModelResponse,
    PromptRequest, Usage,
};

pub const DEFAULT_API_KEY_ENV: &str = "PAPERTRACE_API_KEY";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const CHAT_COMPLETIONS_PATH: &str = "/chat/completions";

/// Exponential backoff with full jitter: before retry `k` (0-based) the
/// client sleeps a uniform random time in `[0, base * factor^k]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub factor: f64,
    /// Transport attempts (including the first) before giving up.
    pub max_attempts: u32,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { base_delay_ms: 1000, factor: 2.0, max_attempts: 5, max_delay_ms: 60_000 }
    }
}

impl RetryPolicy {
    /// Upper bound of the jitter window before retry `k`.
    pub fn ceiling(&self, k: u32) -> Duration {
        let ms = (self.base_delay_ms as f64 * self.factor.powi(k as i32)).min(self.max_delay_ms as f64);
        Duration::from_millis(ms as u64)
    }

    fn delay(&self, k: u32) -> Duration {
        let ceiling = self.ceiling(k).as_millis() as u64;
        Duration::from_millis(if ceiling == 0 { 0 } else { rand::rng().random_range(0..=ceiling) })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model_id: String,
    pub api_key_env: String,
    pub context_budget_tokens: usize,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub repair_attempts: u32,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            model_id: "gpt-4o".to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            context_budget_tokens: 16_384,
            parallelism: 4,
            retry: RetryPolicy::default(),
            repair_attempts: 2,
            timeout_secs: 300,
        }
    }
}

struct Permits {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cond.wait(free).unwrap();
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    descriptor: BackendDescriptor,
    api_key: String,
    agent: ureq::Agent,
    permits: Permits,
}

enum Exchange {
    Reply { raw_text: String, usage: Option<Usage> },
    Retryable(String),
    Fatal { status: u16, body: String },
}

impl RemoteBackend {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: RemoteConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::AuthMissing(config.api_key_env.clone()))?;
        Ok(Self::with_credential(config, key))
    }

    pub fn with_credential(config: RemoteConfig, api_key: String) -> Self {
        let descriptor = BackendDescriptor {
            kind: BackendKind::Remote,
            model_id: config.model_id.clone(),
            context_budget_tokens: config.context_budget_tokens,
            deterministic: false,
            parallelism: config.parallelism.max(1),
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let permits = Permits { free: Mutex::new(config.parallelism.max(1)), cond: Condvar::new() };
        Self { config, descriptor, api_key, agent, permits }
    }

    fn endpoint(&self) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), CHAT_COMPLETIONS_PATH)
    }

    fn exchange(&self, messages: &[Value], request: &PromptRequest) -> Exchange {
        let body = json!({
            "model": self.config.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let _permit = self.permits.acquire();
        let sent = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body.to_string());
        let mut response = match sent {
            Ok(r) => r,
            Err(e) => return Exchange::Retryable(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Exchange::Retryable(format!("reading body: {e}")),
        };
        if status == 429 || (500..600).contains(&status) {
            return Exchange::Retryable(format!("status {status}"));
        }
        if !(200..300).contains(&status) {
            return Exchange::Fatal { status, body: text };
        }
        let Ok(envelope) = serde_json::from_str::<Value>(&text) else {
            return Exchange::Retryable("reply body is not JSON".into());
        };
        let Some(raw_text) = envelope.pointer("/choices/0/message/content").and_then(Value::as_str) else {
            return Exchange::Retryable("reply has no choices[0].message.content".into());
        };
        let usage = envelope.get("usage").map(|u| Usage {
            input_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            output_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        });
        Exchange::Reply { raw_text: raw_text.to_string(), usage }
    }
}

impl GenerationBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    /// Transport failures share one budget of `retry.max_attempts` across
    /// the whole exchange, so a call makes at most
    /// `max_attempts + repair_attempts` round trips.
    fn generate(&self, request: &PromptRequest) -> Result<ModelResponse, BackendError> {
        check_budget(request, &self.descriptor)?;
        let policy = self.config.retry;
        let mut messages = vec![
            json!({"role": "system", "content": request.system_text}),
            json!({"role": "user", "content": request.user_text}),
        ];
        let mut attempts = 0u32;
        let mut failures = 0u32;
        let mut repairs = 0u32;
        loop {
            attempts += 1;
            match self.exchange(&messages, request) {
                Exchange::Retryable(reason) => {
                    failures += 1;
                    log::warn!("{} request attempt {attempts} failed: {reason}", request.task_id.as_str());
                    if failures >= policy.max_attempts {
                        return Err(BackendError::TransportExhausted { attempts, last_error: reason });
                    }
                    std::thread::sleep(policy.delay(failures - 1));
                }
                Exchange::Fatal { status, body } => {
                    return Err(BackendError::Rejected { status, body, attempts });
                }
                Exchange::Reply { raw_text, usage } => match parse_reply(&raw_text, request.schema_id) {
                    Ok(parsed) => return Ok(ModelResponse { raw_text, parsed, usage, attempts }),
                    Err(message) => {
                        if repairs >= self.config.repair_attempts {
                            return Err(BackendError::SchemaInvalid { raw_text, message, attempts });
                        }
                        repairs += 1;
                        log::warn!("{} reply failed validation ({message}); re-asking", request.task_id.as_str());
                        messages.push(json!({"role": "assistant", "content": raw_text}));
                        messages.push(json!({
                            "role": "user",
                            "content": format!(
                                "Your previous reply did not match the required JSON shape: {message}. \
                                 Reply again with only the corrected JSON."
                            ),
                        }));
                    }
                },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_policy_matches_documented_values() {
        let p = RetryPolicy::default();
        assert_eq!(p.max_attempts, 5);
        assert_eq!(p.ceiling(0), Duration::from_secs(1));
        assert_eq!(p.ceiling(1), Duration::from_secs(2));
        assert_eq!(p.ceiling(3), Duration::from_secs(8));
        assert_eq!(RemoteConfig::default().repair_attempts, 2);
        assert_eq!(RemoteConfig::default().parallelism, 4);
    }

    #[test]
    fn jitter_stays_inside_window() {
        let p = RetryPolicy { base_delay_ms: 10, ..RetryPolicy::default() };
        for k in 0..4 {
            for _ in 0..50 {
                assert!(p.delay(k) <= p.ceiling(k));
            }
        }
    }

    #[test]
    fn missing_credential_is_reported() {
        let config = RemoteConfig { api_key_env: "PAPERTRACE_TEST_UNSET_KEY_7731".into(), ..RemoteConfig::default() };
        assert!(matches!(RemoteBackend::from_env(config), Err(BackendError::AuthMissing(v)) if v.contains("7731")));
    }
}
