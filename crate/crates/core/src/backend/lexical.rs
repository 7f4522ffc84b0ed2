//! Deterministic, network-free backend.
//!
//! Each task is answered by the rule that lives next to the stage that asks
//! for it; the reply is serialized to JSON and goes through the same
//! extraction and validation path as a remote reply.

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::schema::{
    ConceptList, ConceptsPayload, GroupLinesPayload, LineGroups, MapPayload, SummarizePayload, SummaryBatch,
};
use super::{
    check_budget, parse_reply, BackendDescriptor, BackendError, BackendKind, GenerationBackend, ModelResponse,
    PromptRequest, TaskId,
};

pub const LEXICAL_MODEL_ID: &str = "lexical-baseline-v1";

pub struct LexicalBackend {
    descriptor: BackendDescriptor,
}

impl LexicalBackend {
    pub fn new(context_budget_tokens: usize) -> Self {
        Self {
            descriptor: BackendDescriptor {
                kind: BackendKind::Lexical,
                model_id: LEXICAL_MODEL_ID.to_string(),
                context_budget_tokens,
                deterministic: true,
                parallelism: 1,
            },
        }
    }
}

fn payload<T: DeserializeOwned>(request: &PromptRequest) -> Result<T, BackendError> {
    T::deserialize(&request.payload).map_err(|e| BackendError::BadPayload(format!("{}: {e}", request.task_id.as_str())))
}

fn reply<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("reply types serialize")
}

impl GenerationBackend for LexicalBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, request: &PromptRequest) -> Result<ModelResponse, BackendError> {
        check_budget(request, &self.descriptor)?;
        let raw_text = match request.task_id {
            TaskId::Summarize => {
                let p: SummarizePayload = payload(request)?;
                reply(&SummaryBatch { summaries: p.blocks.iter().map(crate::nlr::lexical_summary).collect() })
            }
            TaskId::ExtractConcepts => {
                let p: ConceptsPayload = payload(request)?;
                reply(&ConceptList { concepts: crate::concepts::lexical_concepts(&p.text) })
            }
            TaskId::MapConcepts => {
                let p: MapPayload = payload(request)?;
                reply(&crate::tracemap::lexical_links(&p))
            }
            TaskId::GroupLines => {
                let p: GroupLinesPayload = payload(request)?;
                reply(&LineGroups { groups: crate::segment::lexical_groups(&p) })
            }
        };
        let parsed = parse_reply(&raw_text, request.schema_id).map_err(|message| BackendError::SchemaInvalid {
            raw_text: raw_text.clone(),
            message,
            attempts: 1,
        })?;
        Ok(ModelResponse { raw_text, parsed, usage: None, attempts: 1 })
    }
}
