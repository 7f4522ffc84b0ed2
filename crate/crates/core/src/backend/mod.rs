//! The generation contract shared by every stage.
//!
//! Stages build a [`PromptRequest`] (system text, rendered user text, and the
//! structured payload the user text was rendered from) and get back a
//! [`ModelResponse`] whose `parsed` value has already been validated against
//! the request's [`SchemaId`].

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::estimate_tokens;

pub mod lexical;
pub mod prompts;
pub mod remote;
pub mod schema;

pub use lexical::LexicalBackend;
pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Summarize,
    ExtractConcepts,
    MapConcepts,
    GroupLines,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [Self::Summarize, Self::ExtractConcepts, Self::MapConcepts, Self::GroupLines];

    pub fn schema(self) -> SchemaId {
        match self {
            Self::Summarize => SchemaId::SummaryBatch,
            Self::ExtractConcepts => SchemaId::ConceptList,
            Self::MapConcepts => SchemaId::TraceLinks,
            Self::GroupLines => SchemaId::LineGroups,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Summarize => "summarize",
            Self::ExtractConcepts => "extract_concepts",
            Self::MapConcepts => "map_concepts",
            Self::GroupLines => "group_lines",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    SummaryBatch,
    ConceptList,
    TraceLinks,
    LineGroups,
}

#[derive(Debug, Clone, Serialize)]
pub struct PromptRequest {
    pub task_id: TaskId,
    pub system_text: String,
    pub user_text: String,
    pub schema_id: SchemaId,
    pub max_output_tokens: usize,
    pub temperature: f64,
    /// Structured input the user text was rendered from. The lexical backend
    /// reads this instead of parsing prose.
    pub payload: Value,
}

impl PromptRequest {
    /// Builds a request for `task`, rendering the user text from `payload`.
    /// The output allowance is whatever the budget leaves after the user
    /// text, capped at `output_cap`.
    pub fn build(task: TaskId, payload: Value, output_cap: usize, budget: usize) -> Self {
        let template = prompts::template(task);
        let user_text = prompts::render_user(task, &payload);
        let room = budget.saturating_sub(estimate_tokens(&user_text));
        let max_output_tokens = if room == 0 { output_cap.max(1) } else { output_cap.min(room) };
        Self {
            task_id: task,
            system_text: template.text.to_string(),
            user_text,
            schema_id: task.schema(),
            max_output_tokens,
            temperature: 0.0,
            payload,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct ModelResponse {
    pub raw_text: String,
    pub parsed: Value,
    pub usage: Option<Usage>,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Lexical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub model_id: String,
    pub context_budget_tokens: usize,
    pub deterministic: bool,
    pub parallelism: usize,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request needs {needed} tokens but the context budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("transport failed after {attempts} attempts: {last_error}")]
    TransportExhausted { attempts: u32, last_error: String },
    #[error("response failed schema validation after {attempts} attempts: {message}")]
    SchemaInvalid { raw_text: String, message: String, attempts: u32 },
    #[error("credential environment variable {0} is not set")]
    AuthMissing(String),
    #[error("endpoint rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String, attempts: u32 },
    #[error("malformed request payload: {0}")]
    BadPayload(String),
}

impl BackendError {
    /// HTTP round trips spent before the error surfaced.
    pub fn attempts(&self) -> u32 {
        match self {
            Self::TransportExhausted { attempts, .. }
            | Self::SchemaInvalid { attempts, .. }
            | Self::Rejected { attempts, .. } => *attempts,
            _ => 0,
        }
    }
}

pub trait GenerationBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn generate(&self, request: &PromptRequest) -> Result<ModelResponse, BackendError>;
}

/// Rejects requests whose user text plus output allowance exceed the budget.
pub fn check_budget(request: &PromptRequest, desc: &BackendDescriptor) -> Result<(), BackendError> {
    let needed = estimate_tokens(&request.user_text) + request.max_output_tokens;
    if needed > desc.context_budget_tokens {
        return Err(BackendError::BudgetExceeded { needed, budget: desc.context_budget_tokens });
    }
    Ok(())
}

/// Pulls the structured payload out of a model reply: code-fence lines are
/// dropped, then the longest well-formed JSON object or array wins.
pub fn extract_structured(raw: &str) -> Option<Value> {
    let stripped: String = raw.lines().filter(|l| !l.trim_start().starts_with("```")).collect::<Vec<_>>().join("\n");
    let mut best: Option<(usize, Value)> = None;
    let mut pos = 0;
    while pos < stripped.len() {
        let Some(rel) = stripped[pos..].find(['{', '[']) else { break };
        let start = pos + rel;
        let mut stream = serde_json::Deserializer::from_str(&stripped[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(value)) => {
                let len = stream.byte_offset();
                if best.as_ref().is_none_or(|(l, _)| len > *l) {
                    best = Some((len, value));
                }
                // anything starting inside this value is shorter
                pos = start + len;
            }
            _ => pos = start + 1,
        }
    }
    best.map(|(_, v)| v)
}

/// Extraction plus schema validation, shared by both backends.
pub fn parse_reply(raw: &str, schema: SchemaId) -> Result<Value, String> {
    let value = extract_structured(raw).ok_or_else(|| "no JSON object or array found in reply".to_string())?;
    schema::validate(schema, &value)?;
    Ok(value)
}

/// Counts logical requests and retries across a run.
#[derive(Debug, Default)]
pub struct RequestLog {
    requests: AtomicU64,
    retries: AtomicU64,
}

impl RequestLog {
    pub fn record(&self, attempts: u32) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.retries.fetch_add(u64::from(attempts.saturating_sub(1)), Ordering::Relaxed);
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }
}

/// Wraps a backend and records every call in a [`RequestLog`].
pub struct Metered<'a> {
    inner: &'a dyn GenerationBackend,
    log: &'a RequestLog,
}

impl<'a> Metered<'a> {
    pub fn new(inner: &'a dyn GenerationBackend, log: &'a RequestLog) -> Self {
        Self { inner, log }
    }
}

impl GenerationBackend for Metered<'_> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn generate(&self, request: &PromptRequest) -> Result<ModelResponse, BackendError> {
        let result = self.inner.generate(request);
        match &result {
            Ok(resp) => self.log.record(resp.attempts),
            Err(e) => self.log.record(e.attempts().max(1)),
        }
        result
    }
}

/// Runs `f` over `items` on up to `parallelism` scoped threads and returns
/// the results in input order.
pub fn parallel_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<R>>> = items.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().expect("worker filled slot")).collect()
}
