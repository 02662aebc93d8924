//! Deterministic provider backed by a script instead of a network endpoint.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{
    CacheKey, CallTag, CompletionRequest, CompletionResponse, FinishReason, Provider,
    ProviderError,
};

/// Pattern-matched script entry: fires when the request conversation contains
/// `contains` and the stage/round filters (when set) match.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    pub contains: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    pub response: String,
}

/// Answers requests from a fixed script, so full experiment runs replay
/// byte-identically and tests need no network.
///
/// Lookup order: exact cache-key entries, then rules in declaration order,
/// then the default. A request nothing matches is an error, not a silent
/// empty answer.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedProvider {
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub entries: HashMap<String, String>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl ScriptedProvider {
    pub fn new(model_id: impl Into<String>) -> Self {
        ScriptedProvider {
            model_id: model_id.into(),
            ..Default::default()
        }
    }

    pub fn with_entry(mut self, key: &CacheKey, response: impl Into<String>) -> Self {
        self.entries.insert(key.as_hex().to_string(), response.into());
        self
    }

    pub fn with_rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Shorthand for a rule keyed only on conversation content.
    pub fn with_contains(mut self, contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            contains: contains.into(),
            stage: None,
            round: None,
            response: response.into(),
        });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    fn lookup(&self, req: &CompletionRequest, tag: &CallTag) -> Option<&str> {
        let key = CacheKey::compute(req, tag);
        if let Some(text) = self.entries.get(key.as_hex()) {
            return Some(text);
        }
        let conversation: String = req
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        for rule in &self.rules {
            let stage_ok = rule.stage.as_deref().map_or(true, |s| s == tag.stage);
            let round_ok = rule.round.map_or(true, |r| r == tag.round);
            if stage_ok && round_ok && conversation.contains(&rule.contains) {
                return Some(&rule.response);
            }
        }
        self.default.as_deref()
    }
}

impl Provider for ScriptedProvider {
    fn complete(
        &self,
        req: &CompletionRequest,
        tag: &CallTag,
    ) -> Result<CompletionResponse, ProviderError> {
        req.validate()?;
        let text = self
            .lookup(req, tag)
            .ok_or_else(|| ProviderError::Unscripted {
                key: CacheKey::compute(req, tag),
                stage: tag.stage.clone(),
                round: tag.round,
            })?;
        Ok(CompletionResponse {
            content: text.to_string(),
            finish_reason: FinishReason::Stop,
            latency_ms: 0,
            token_usage: None,
            attempts: 1,
        })
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ChatMessage;

    fn request(content: &str) -> CompletionRequest {
        CompletionRequest {
            model_id: "scripted".into(),
            messages: vec![ChatMessage::user(content)],
            temperature: 0.2,
            max_output_tokens: 256,
            random_seed: Some(7),
        }
    }

    #[test]
    fn exact_entry_returns_exact_text() {
        let req = request("write f");
        let tag = CallTag::new("target", 1);
        let key = CacheKey::compute(&req, &tag);
        let provider =
            ScriptedProvider::new("scripted").with_entry(&key, "def f(): return 1");
        let resp = provider.complete(&req, &tag).unwrap();
        assert_eq!(resp.content, "def f(): return 1");
        assert_eq!(resp.finish_reason, FinishReason::Stop);
        // repeated calls are identical
        assert_eq!(provider.complete(&req, &tag).unwrap(), resp);
    }

    #[test]
    fn missing_key_without_default_errors() {
        let provider = ScriptedProvider::new("scripted");
        let err = provider
            .complete(&request("anything"), &CallTag::new("target", 1))
            .unwrap_err();
        assert!(matches!(err, ProviderError::Unscripted { .. }));
    }

    #[test]
    fn rounds_select_distinct_answers() {
        let req = request("same task");
        let tag1 = CallTag::new("round", 1);
        let tag2 = CallTag::new("round", 2);
        let provider = ScriptedProvider::new("scripted")
            .with_entry(&CacheKey::compute(&req, &tag1), "first answer")
            .with_entry(&CacheKey::compute(&req, &tag2), "second answer");
        assert_eq!(provider.complete(&req, &tag1).unwrap().content, "first answer");
        assert_eq!(provider.complete(&req, &tag2).unwrap().content, "second answer");
    }

    #[test]
    fn rules_match_on_contents_and_stage() {
        let provider = ScriptedProvider::new("scripted")
            .with_rule(ScriptRule {
                contains: "task-7".into(),
                stage: Some("intermediate".into()),
                round: None,
                response: "sketch".into(),
            })
            .with_default("fallback");
        let req = request("please solve task-7 now");
        assert_eq!(
            provider
                .complete(&req, &CallTag::new("intermediate", 1))
                .unwrap()
                .content,
            "sketch"
        );
        assert_eq!(
            provider
                .complete(&req, &CallTag::new("target", 1))
                .unwrap()
                .content,
            "fallback"
        );
    }
}
