//! Effective run configuration: command-line flags over an optional TOML
//! file over built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::remote::{DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL};
use crate::backend::BackendKind;
use crate::chunker::{ChunkPlan, DEFAULT_OVERHEAD_PER_BLOCK, DEFAULT_PROMPT_RESERVE_FRACTION};
use crate::ingest::IngestConfig;
use crate::nlr::{NlrConfig, DEFAULT_MAX_SUMMARY_TOKENS};
use crate::segment::SegmentConfig;
use crate::tracemap::{MapConfig, DEFAULT_ESSENTIAL_MIN_LINES, DEFAULT_LINK_THRESHOLD};

pub const DEFAULT_CONTEXT_BUDGET_TOKENS: usize = 16_384;
pub const DEFAULT_REMOTE_MODEL: &str = "gpt-4o";
pub const DEFAULT_PARALLELISM: usize = 4;
/// Room left after per-block overhead for at least a truncation marker.
const MIN_BLOCK_ROOM_TOKENS: usize = 8;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("invalid config file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("missing required option --{0}")]
    Missing(&'static str),
    #[error("credential environment variable {0} is not set (required by the remote backend)")]
    CredentialMissing(String),
    #[error("output directory {0} is not empty; pass --force to overwrite")]
    OutDirNotEmpty(PathBuf),
}

/// One configuration source. Every field is optional so that layers can be
/// stacked; keys use the same kebab-case names as the command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigLayer {
    pub repo: Option<String>,
    #[serde(rename = "ref")]
    pub reference: Option<String>,
    pub paper: Option<PathBuf>,
    pub extractor: Option<String>,
    pub include: Option<Vec<String>>,
    pub exclude: Option<Vec<String>>,
    pub max_file_bytes: Option<u64>,
    pub blank_gap: Option<usize>,
    pub min_group_lines: Option<usize>,
    pub max_group_lines: Option<usize>,
    pub llm_grouping: Option<bool>,
    pub context_budget_tokens: Option<usize>,
    pub prompt_reserve: Option<f64>,
    pub max_summary_tokens: Option<usize>,
    pub backend: Option<BackendKind>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub parallelism: Option<usize>,
    pub link_threshold: Option<f64>,
    pub essential_min_lines: Option<usize>,
    pub out: Option<PathBuf>,
    pub force: Option<bool>,
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Unreadable { path: path.to_path_buf(), message: e.to_string() })?;
        toml::from_str(&text).map_err(|e| ConfigError::Malformed { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Fields set in `top` win over fields set in `self`.
    pub fn overlay(self, top: ConfigLayer) -> ConfigLayer {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigLayer { $($f: top.$f.or(self.$f)),* } };
        }
        pick!(
            repo,
            reference,
            paper,
            extractor,
            include,
            exclude,
            max_file_bytes,
            blank_gap,
            min_group_lines,
            max_group_lines,
            llm_grouping,
            context_budget_tokens,
            prompt_reserve,
            max_summary_tokens,
            backend,
            model,
            base_url,
            api_key_env,
            parallelism,
            link_threshold,
            essential_min_lines,
            out,
            force
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model: String,
    pub base_url: String,
    pub api_key_env: String,
    pub parallelism: usize,
}

/// The effective configuration, snapshotted into run.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub repo: Option<String>,
    #[serde(rename = "ref")]
    pub reference: Option<String>,
    pub paper: Option<PathBuf>,
    pub extractor: Option<String>,
    pub ingest: IngestConfig,
    pub segment: SegmentConfig,
    pub context_budget_tokens: usize,
    pub prompt_reserve: f64,
    pub max_summary_tokens: usize,
    pub backend: BackendConfig,
    pub link_threshold: f64,
    pub essential_min_lines: usize,
    pub out_dir: PathBuf,
    pub force: bool,
}

impl RunConfig {
    pub fn resolve(layer: ConfigLayer) -> Result<Self, ConfigError> {
        let ingest_defaults = IngestConfig::default();
        let seg_defaults = SegmentConfig::default();
        let kind = layer.backend.unwrap_or(BackendKind::Lexical);
        let cfg = RunConfig {
            repo: layer.repo,
            reference: layer.reference,
            paper: layer.paper,
            extractor: layer.extractor,
            ingest: IngestConfig {
                include_globs: layer.include.unwrap_or(ingest_defaults.include_globs),
                exclude_globs: layer.exclude.unwrap_or(ingest_defaults.exclude_globs),
                max_file_bytes: layer.max_file_bytes.unwrap_or(ingest_defaults.max_file_bytes),
            },
            segment: SegmentConfig {
                blank_gap: layer.blank_gap.unwrap_or(seg_defaults.blank_gap),
                min_group_lines: layer.min_group_lines.unwrap_or(seg_defaults.min_group_lines),
                max_group_lines: layer.max_group_lines.unwrap_or(seg_defaults.max_group_lines),
                llm_grouping: layer.llm_grouping.unwrap_or(seg_defaults.llm_grouping),
            },
            context_budget_tokens: layer.context_budget_tokens.unwrap_or(DEFAULT_CONTEXT_BUDGET_TOKENS),
            prompt_reserve: layer.prompt_reserve.unwrap_or(DEFAULT_PROMPT_RESERVE_FRACTION),
            max_summary_tokens: layer.max_summary_tokens.unwrap_or(DEFAULT_MAX_SUMMARY_TOKENS),
            backend: BackendConfig {
                kind,
                model: layer.model.unwrap_or_else(|| match kind {
                    BackendKind::Remote => DEFAULT_REMOTE_MODEL.to_string(),
                    BackendKind::Lexical => crate::backend::lexical::LEXICAL_MODEL_ID.to_string(),
                }),
                base_url: layer.base_url.unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
                api_key_env: layer.api_key_env.unwrap_or_else(|| DEFAULT_API_KEY_ENV.to_string()),
                parallelism: layer.parallelism.unwrap_or(DEFAULT_PARALLELISM),
            },
            link_threshold: layer.link_threshold.unwrap_or(DEFAULT_LINK_THRESHOLD),
            essential_min_lines: layer.essential_min_lines.unwrap_or(DEFAULT_ESSENTIAL_MIN_LINES),
            out_dir: layer.out.ok_or(ConfigError::Missing("out"))?,
            force: layer.force.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("max-file-bytes", self.ingest.max_file_bytes as usize),
            ("blank-gap", self.segment.blank_gap),
            ("min-group-lines", self.segment.min_group_lines),
            ("max-group-lines", self.segment.max_group_lines),
            ("context-budget-tokens", self.context_budget_tokens),
            ("max-summary-tokens", self.max_summary_tokens),
            ("parallelism", self.backend.parallelism),
            ("essential-min-lines", self.essential_min_lines),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ConfigError::Invalid(format!("--{name} must be positive")));
            }
        }
        if self.segment.min_group_lines > self.segment.max_group_lines {
            return Err(ConfigError::Invalid("--min-group-lines must not exceed --max-group-lines".into()));
        }
        if !(self.prompt_reserve > 0.0 && self.prompt_reserve < 1.0) {
            return Err(ConfigError::Invalid("--prompt-reserve must lie strictly between 0 and 1".into()));
        }
        if !(self.link_threshold > 0.0 && self.link_threshold <= 1.0) {
            return Err(ConfigError::Invalid("--link-threshold must lie in (0, 1]".into()));
        }
        if self.chunk_plan().effective_budget() < DEFAULT_OVERHEAD_PER_BLOCK + MIN_BLOCK_ROOM_TOKENS {
            return Err(ConfigError::Invalid("--context-budget-tokens leaves no room after the prompt reserve".into()));
        }
        Ok(())
    }

    /// Fails unless the credential variable is set, for the remote backend.
    pub fn credential(&self) -> Result<Option<String>, ConfigError> {
        match self.backend.kind {
            BackendKind::Lexical => Ok(None),
            BackendKind::Remote => match std::env::var(&self.backend.api_key_env) {
                Ok(key) if !key.trim().is_empty() => Ok(Some(key)),
                _ => Err(ConfigError::CredentialMissing(self.backend.api_key_env.clone())),
            },
        }
    }

    /// `run` refuses to write into a non-empty directory unless forced.
    pub fn check_out_dir(&self) -> Result<(), ConfigError> {
        if self.force {
            return Ok(());
        }
        let non_empty = std::fs::read_dir(&self.out_dir).is_ok_and(|mut entries| entries.next().is_some());
        if non_empty {
            return Err(ConfigError::OutDirNotEmpty(self.out_dir.clone()));
        }
        Ok(())
    }

    pub fn require_repo(&self) -> Result<&str, ConfigError> {
        self.repo.as_deref().ok_or(ConfigError::Missing("repo"))
    }

    pub fn require_paper(&self) -> Result<&Path, ConfigError> {
        self.paper.as_deref().ok_or(ConfigError::Missing("paper"))
    }

    pub fn chunk_plan(&self) -> ChunkPlan {
        ChunkPlan::with_fraction(self.context_budget_tokens, self.prompt_reserve, DEFAULT_OVERHEAD_PER_BLOCK)
    }

    pub fn nlr(&self) -> NlrConfig {
        NlrConfig { max_summary_tokens: self.max_summary_tokens }
    }

    pub fn map(&self) -> MapConfig {
        MapConfig {
            link_threshold: self.link_threshold,
            essential_min_lines: self.essential_min_lines,
            window_tokens: self.chunk_plan().effective_budget(),
            force_batches: None,
        }
    }

    /// Settings that change artifact content. Paths, the force flag and
    /// the credential variable name are left out so the digest over them is
    /// stable across machines.
    pub fn tuning(&self) -> serde_json::Value {
        serde_json::json!({
            "include": self.ingest.include_globs,
            "exclude": self.ingest.exclude_globs,
            "max_file_bytes": self.ingest.max_file_bytes,
            "segment": self.segment,
            "context_budget_tokens": self.context_budget_tokens,
            "prompt_reserve": self.prompt_reserve,
            "max_summary_tokens": self.max_summary_tokens,
            "link_threshold": self.link_threshold,
            "essential_min_lines": self.essential_min_lines,
        })
    }
}
