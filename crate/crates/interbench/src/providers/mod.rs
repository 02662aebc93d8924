//! Chat-completion providers: a retrying HTTP client, a deterministic
//! scripted provider for offline runs, and a persistent response cache.
//!
//! Everything downstream talks to the [`Provider`] trait, so experiments can
//! swap a live endpoint for a script without touching the pipeline.

mod cache;
mod http;
mod scripted;

pub use cache::{CachingProvider, TranscriptCache};
pub use http::{HttpProvider, ProviderEndpoint, RetryPolicy};
pub use scripted::{ScriptRule, ScriptedProvider};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub random_seed: Option<u64>,
}

impl CompletionRequest {
    /// Invariants: at least one message, ending with a user turn, no empty
    /// user/assistant contents.
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::Transport("request has no messages".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(ProviderError::Transport(
                "last message must be a user turn".into(),
            ));
        }
        for m in &self.messages {
            if m.role != Role::System && m.content.is_empty() {
                return Err(ProviderError::Transport(
                    "user/assistant message content must be non-empty".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub token_usage: Option<TokenUsage>,
    /// Transport attempts consumed, 1 when the first try succeeded.
    pub attempts: u32,
}

/// Identifies which stage of a strategy issued a request; part of the cache
/// key so two stages with identical message lists do not collide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTag {
    pub stage: String,
    pub round: u32,
}

impl CallTag {
    pub fn new(stage: impl Into<String>, round: u32) -> Self {
        CallTag {
            stage: stage.into(),
            round,
        }
    }
}

/// Collision-resistant digest of a completion call.
///
/// Covers model id, sampling parameters, the canonicalized message list, and
/// the stage/round tag. Equal inputs map to equal keys; any content change
/// changes the key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn compute(req: &CompletionRequest, tag: &CallTag) -> CacheKey {
        let mut hasher = Sha256::new();
        let mut field = |bytes: &[u8]| {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        field(req.model_id.as_bytes());
        field(&req.temperature.to_bits().to_le_bytes());
        field(&req.random_seed.unwrap_or(u64::MAX).to_le_bytes());
        field(&req.max_output_tokens.to_le_bytes());
        field(tag.stage.as_bytes());
        field(&tag.round.to_le_bytes());
        for m in &req.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            field(role.as_bytes());
            field(m.content.as_bytes());
        }
        CacheKey(hex::encode(hasher.finalize()))
    }

    pub fn as_hex(&self) -> &str {
        &self.0
    }

    /// Rebuild a key from its hex form, e.g. when reading a script file.
    pub fn from_hex(hex: impl Into<String>) -> CacheKey {
        CacheKey(hex.into())
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("no scripted answer for key {key} (stage {stage}, round {round})")]
    Unscripted {
        key: CacheKey,
        stage: String,
        round: u32,
    },
}

impl ProviderError {
    /// Terminal errors must not be retried.
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            ProviderError::Auth(_) | ProviderError::MalformedResponse(_)
        )
    }
}

/// A chat-completion backend. Implementations must be safe for concurrent use.
pub trait Provider: Send + Sync {
    fn complete(
        &self,
        req: &CompletionRequest,
        tag: &CallTag,
    ) -> Result<CompletionResponse, ProviderError>;

    fn model_id(&self) -> &str;
}
