//! Prompting strategies and the two-stage generation flow.
//!
//! A strategy decides how a model is asked for a target-language solution:
//! directly, through an intermediate representation (another language, a
//! natural-language sketch, or pseudo code), from the dataset's own solution
//! in another language, or by asking the same question several times. Running
//! a strategy yields a [`Transcript`]: every request, response, and extracted
//! artifact, ending in one target-language candidate.

pub mod extract;
pub mod templates;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bench::{AlignedBenchmark, BenchError, LanguageId};
use crate::providers::{
    CallTag, ChatMessage, CompletionRequest, CompletionResponse, Provider, ProviderError,
};
pub use extract::{entry_point_name, extract_code, extract_sketch, ExtractError, Extraction, ExtractionRule};
pub use templates::{render, TemplateError, TemplateSet};

/// How a target-language candidate is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// One request straight for the target language.
    Direct,
    /// Stage one asks for a solution in another programming language; stage
    /// two translates it to the target.
    IntermediateLang(LanguageId),
    /// Stage one asks for a natural-language solution sketch.
    NaturalLanguage,
    /// Stage one asks for pseudo code.
    PseudoCode,
    /// Stage one is skipped: the dataset's own solution in another language
    /// is used as the intermediate.
    GroundTruth(LanguageId),
    /// The direct question asked `k ≥ 2` times, each round seeing all prior
    /// answers; the last answer is the candidate.
    Repeat(u32),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StrategyParseError {
    #[error("unknown strategy label `{0}`")]
    Unknown(String),
    #[error("unknown language `{0}` in strategy label")]
    UnknownLanguage(String),
    #[error("repeat count must be at least 2, got `{0}`")]
    RepeatCountTooSmall(String),
}

impl Strategy {
    /// Language the intermediate representation is written in, if it is one.
    pub fn intermediate_language(&self) -> Option<LanguageId> {
        match self {
            Strategy::IntermediateLang(l) | Strategy::GroundTruth(l) => Some(*l),
            _ => None,
        }
    }

    /// Label shown in prompts for the intermediate representation.
    pub fn intermediate_name(&self) -> Option<&'static str> {
        match self {
            Strategy::IntermediateLang(l) | Strategy::GroundTruth(l) => Some(l.display_name()),
            Strategy::NaturalLanguage => Some("natural language"),
            Strategy::PseudoCode => Some("pseudo code"),
            Strategy::Direct | Strategy::Repeat(_) => None,
        }
    }

    /// Row label used when strategies of one family are tabulated together.
    pub fn representation_label(&self) -> String {
        match self {
            Strategy::Direct => "Direct generation".to_string(),
            Strategy::IntermediateLang(l) | Strategy::GroundTruth(l) => {
                l.display_name().to_string()
            }
            Strategy::NaturalLanguage => "Natural language".to_string(),
            Strategy::PseudoCode => "Pseudo code".to_string(),
            Strategy::Repeat(k) => format!("Repeated ({k} rounds)"),
        }
    }

    /// Reject combinations that cannot be run: an intermediate language equal
    /// to the target, or a repeat count below two.
    pub fn validate_for_target(&self, target: LanguageId) -> Result<(), StrategyError> {
        match self {
            Strategy::IntermediateLang(l) | Strategy::GroundTruth(l) if *l == target => {
                Err(StrategyError::IntermediateEqualsTarget { language: target })
            }
            Strategy::Repeat(k) if *k < 2 => Err(StrategyError::RepeatCountTooSmall { count: *k }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Direct => write!(f, "direct"),
            Strategy::IntermediateLang(l) => write!(f, "inter:{}", l.as_str()),
            Strategy::NaturalLanguage => write!(f, "nl"),
            Strategy::PseudoCode => write!(f, "pseudo"),
            Strategy::GroundTruth(l) => write!(f, "gt:{}", l.as_str()),
            Strategy::Repeat(k) => write!(f, "repeat:{k}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = StrategyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "direct" => return Ok(Strategy::Direct),
            "nl" => return Ok(Strategy::NaturalLanguage),
            "pseudo" => return Ok(Strategy::PseudoCode),
            _ => {}
        }
        if let Some(lang) = s.strip_prefix("inter:") {
            return LanguageId::parse(lang)
                .map(Strategy::IntermediateLang)
                .ok_or_else(|| StrategyParseError::UnknownLanguage(lang.to_string()));
        }
        if let Some(lang) = s.strip_prefix("gt:") {
            return LanguageId::parse(lang)
                .map(Strategy::GroundTruth)
                .ok_or_else(|| StrategyParseError::UnknownLanguage(lang.to_string()));
        }
        if let Some(count) = s.strip_prefix("repeat:") {
            let k: u32 = count
                .parse()
                .map_err(|_| StrategyParseError::Unknown(s.to_string()))?;
            if k < 2 {
                return Err(StrategyParseError::RepeatCountTooSmall(count.to_string()));
            }
            return Ok(Strategy::Repeat(k));
        }
        Err(StrategyParseError::Unknown(s.to_string()))
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sampling parameters shared by every request a strategy makes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSettings {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub random_seed: Option<u64>,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            temperature: 0.2,
            max_output_tokens: 1024,
            random_seed: None,
        }
    }
}

/// One model interaction (or synthetic step) within a strategy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStage {
    /// `direct`, `intermediate`, `target`, or `round-<i>`.
    pub label: String,
    /// Absent for synthetic stages that consult the dataset instead of the
    /// model.
    pub request: Option<CompletionRequest>,
    pub response: Option<CompletionResponse>,
    /// Code or sketch pulled from the response (or taken from the dataset).
    pub extracted: String,
    /// Which extraction rule fired; absent for synthetic stages.
    pub extraction_rule: Option<ExtractionRule>,
}

/// Full record of producing one candidate for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub model_id: String,
    pub task_number: u32,
    pub target: LanguageId,
    pub strategy: Strategy,
    pub stages: Vec<PromptStage>,
    /// Target-language candidate from the final stage.
    pub final_code: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StrategyError {
    #[error("intermediate language {language} equals the target")]
    IntermediateEqualsTarget { language: LanguageId },
    #[error("repeat count must be at least 2, got {count}")]
    RepeatCountTooSmall { count: u32 },
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("stage `{stage}`: {source}")]
    Extraction {
        stage: String,
        #[source]
        source: ExtractError,
    },
    #[error(transparent)]
    Bench(#[from] BenchError),
}

/// Run one strategy for one task against one provider, producing the full
/// transcript. The provider is expected to already carry caching if replay
/// is wanted.
pub fn run_strategy(
    provider: &dyn Provider,
    templates: &TemplateSet,
    bench: &AlignedBenchmark,
    task_number: u32,
    target: LanguageId,
    strategy: Strategy,
    settings: &GenSettings,
) -> Result<Transcript, PromptError> {
    strategy.validate_for_target(target)?;
    let task = bench.task(task_number, target)?;
    let description = task.description.clone();
    let declaration = task.declaration.clone();
    let entry = entry_point_name(target, &declaration);

    let mut runner = StageRunner {
        provider,
        settings,
        stages: Vec::new(),
    };

    let final_code = match strategy {
        Strategy::Direct => {
            let prompt = render_direct(templates, &description, &declaration, target);
            let code = runner.model_stage(
                "direct",
                CallTag::new("direct", 1),
                vec![ChatMessage::user(prompt)],
                Extractor::Code(target, entry.clone()),
            )?;
            code
        }
        Strategy::IntermediateLang(inter) => {
            let stage_one = render(
                templates.intermediate(),
                &[
                    ("description", description.as_str()),
                    ("intermediate_name", inter.display_name()),
                ],
            );
            let inter_entry = bench
                .task(task_number, inter)
                .ok()
                .and_then(|t| entry_point_name(inter, &t.declaration));
            let sketch = runner.model_stage(
                "intermediate",
                CallTag::new("intermediate", 1),
                vec![ChatMessage::user(stage_one)],
                Extractor::Code(inter, inter_entry),
            )?;
            runner.target_stage(
                templates,
                &description,
                &declaration,
                target,
                entry.clone(),
                inter.display_name(),
                &sketch,
            )?
        }
        Strategy::NaturalLanguage | Strategy::PseudoCode => {
            let name = strategy
                .intermediate_name()
                .expect("sketch strategies name their representation");
            let stage_one = render(
                templates.intermediate(),
                &[
                    ("description", description.as_str()),
                    ("intermediate_name", name),
                ],
            );
            let sketch = runner.model_stage(
                "intermediate",
                CallTag::new("intermediate", 1),
                vec![ChatMessage::user(stage_one)],
                Extractor::Sketch,
            )?;
            runner.target_stage(
                templates,
                &description,
                &declaration,
                target,
                entry.clone(),
                name,
                &sketch,
            )?
        }
        Strategy::GroundTruth(inter) => {
            let gt_task = bench.task(task_number, inter)?;
            let solution = format!("{}{}", gt_task.declaration, gt_task.canonical_solution);
            runner.stages.push(PromptStage {
                label: "intermediate".into(),
                request: None,
                response: None,
                extracted: solution.clone(),
                extraction_rule: None,
            });
            runner.target_stage(
                templates,
                &description,
                &declaration,
                target,
                entry.clone(),
                inter.display_name(),
                &solution,
            )?
        }
        Strategy::Repeat(rounds) => {
            let first = render_direct(templates, &description, &declaration, target);
            let again = render(
                templates.repeat(),
                &[("target_name", target.display_name())],
            );
            let mut history = vec![ChatMessage::user(first)];
            let mut last = runner.model_stage(
                "round-1",
                CallTag::new("direct", 1),
                history.clone(),
                Extractor::Code(target, entry.clone()),
            )?;
            for round in 2..=rounds {
                let reply = runner
                    .stages
                    .last()
                    .and_then(|s| s.response.as_ref())
                    .map(|r| r.content.clone())
                    .expect("model stage records its response");
                history.push(ChatMessage::assistant(reply));
                history.push(ChatMessage::user(again.clone()));
                last = runner.model_stage(
                    &format!("round-{round}"),
                    CallTag::new("repeat", round),
                    history.clone(),
                    Extractor::Code(target, entry.clone()),
                )?;
            }
            last
        }
    };

    Ok(Transcript {
        model_id: provider.model_id().to_string(),
        task_number,
        target,
        strategy,
        stages: runner.stages,
        final_code,
    })
}

fn render_direct(
    templates: &TemplateSet,
    description: &str,
    declaration: &str,
    target: LanguageId,
) -> String {
    render(
        templates.direct(),
        &[
            ("description", description),
            ("declaration", declaration),
            ("target_name", target.display_name()),
        ],
    )
}

enum Extractor {
    Code(LanguageId, Option<String>),
    Sketch,
}

struct StageRunner<'a> {
    provider: &'a dyn Provider,
    settings: &'a GenSettings,
    stages: Vec<PromptStage>,
}

impl StageRunner<'_> {
    fn model_stage(
        &mut self,
        label: &str,
        tag: CallTag,
        messages: Vec<ChatMessage>,
        extractor: Extractor,
    ) -> Result<String, PromptError> {
        let request = CompletionRequest {
            model_id: self.provider.model_id().to_string(),
            messages,
            temperature: self.settings.temperature,
            max_output_tokens: self.settings.max_output_tokens,
            random_seed: self.settings.random_seed,
        };
        let response = self.provider.complete(&request, &tag)?;
        let extraction = match &extractor {
            Extractor::Code(language, entry) => {
                extract_code(&response.content, *language, entry.as_deref())
            }
            Extractor::Sketch => extract_sketch(&response.content),
        }
        .map_err(|source| PromptError::Extraction {
            stage: label.to_string(),
            source,
        })?;
        self.stages.push(PromptStage {
            label: label.to_string(),
            request: Some(request),
            response: Some(response),
            extracted: extraction.code.clone(),
            extraction_rule: Some(extraction.rule),
        });
        Ok(extraction.code)
    }

    #[allow(clippy::too_many_arguments)]
    fn target_stage(
        &mut self,
        templates: &TemplateSet,
        description: &str,
        declaration: &str,
        target: LanguageId,
        entry: Option<String>,
        intermediate_name: &str,
        intermediate_solution: &str,
    ) -> Result<String, PromptError> {
        let prompt = render(
            templates.target(),
            &[
                ("description", description),
                ("declaration", declaration),
                ("target_name", target.display_name()),
                ("intermediate_name", intermediate_name),
                ("intermediate_solution", intermediate_solution),
            ],
        );
        self.model_stage(
            "target",
            CallTag::new("target", 1),
            vec![ChatMessage::user(prompt)],
            Extractor::Code(target, entry),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{align, load_suite_from_reader, IngestionProfile};
    use crate::providers::{ScriptRule, ScriptedProvider};

    fn mini_bench() -> AlignedBenchmark {
        let python = r#"{"task_id": "Python/0", "prompt": "def add(a, b):\n    \"\"\"Add two numbers.\"\"\"\n", "declaration": "def add(a, b):\n", "canonical_solution": "    return a + b\n", "test": "assert add(1, 2) == 3\n", "example_test": ""}"#;
        let cpp = r##"{"task_id": "CPP/0", "prompt": "// Add two numbers.\nint add(int a, int b) {\n", "declaration": "#include <cstdio>\nint add(int a, int b) {\n", "canonical_solution": "    return a + b;\n}\n", "test": "int main() { return add(1, 2) == 3 ? 0 : 1; }\n", "example_test": ""}"##;
        let profile = IngestionProfile::default();
        let py_suite =
            load_suite_from_reader(python.as_bytes(), LanguageId::Python, &profile).unwrap();
        let cpp_suite =
            load_suite_from_reader(cpp.as_bytes(), LanguageId::Cpp, &profile).unwrap();
        align(vec![py_suite, cpp_suite]).unwrap().0
    }

    fn settings() -> GenSettings {
        GenSettings::default()
    }

    #[test]
    fn strategy_labels_round_trip() {
        let all = [
            Strategy::Direct,
            Strategy::IntermediateLang(LanguageId::Cpp),
            Strategy::NaturalLanguage,
            Strategy::PseudoCode,
            Strategy::GroundTruth(LanguageId::Python),
            Strategy::Repeat(2),
        ];
        for strategy in all {
            let label = strategy.to_string();
            assert_eq!(label.parse::<Strategy>().unwrap(), strategy, "{label}");
        }
        assert_eq!(Strategy::IntermediateLang(LanguageId::Cpp).to_string(), "inter:cpp");
        assert_eq!(Strategy::Repeat(3).to_string(), "repeat:3");
        assert!(matches!(
            "repeat:1".parse::<Strategy>(),
            Err(StrategyParseError::RepeatCountTooSmall(_))
        ));
        assert!(matches!(
            "inter:cobol".parse::<Strategy>(),
            Err(StrategyParseError::UnknownLanguage(_))
        ));
        assert!("bogus".parse::<Strategy>().is_err());
    }

    #[test]
    fn strategy_serde_uses_labels() {
        let s = Strategy::GroundTruth(LanguageId::Rust);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "\"gt:rust\"");
        assert_eq!(serde_json::from_str::<Strategy>(&json).unwrap(), s);
    }

    #[test]
    fn intermediate_equal_to_target_is_rejected() {
        let err = Strategy::IntermediateLang(LanguageId::Python)
            .validate_for_target(LanguageId::Python)
            .unwrap_err();
        assert!(matches!(err, StrategyError::IntermediateEqualsTarget { .. }));
        assert!(Strategy::IntermediateLang(LanguageId::Cpp)
            .validate_for_target(LanguageId::Python)
            .is_ok());
    }

    #[test]
    fn direct_strategy_is_single_stage() {
        let bench = mini_bench();
        let provider = ScriptedProvider::new("m")
            .with_contains("Add two numbers", "```python\ndef add(a, b):\n    return a + b\n```");
        let t = run_strategy(
            &provider,
            &TemplateSet::builtin(),
            &bench,
            0,
            LanguageId::Python,
            Strategy::Direct,
            &settings(),
        )
        .unwrap();
        assert_eq!(t.stages.len(), 1);
        assert_eq!(t.stages[0].label, "direct");
        assert_eq!(t.final_code, "def add(a, b):\n    return a + b");
        let prompt = &t.stages[0].request.as_ref().unwrap().messages[0].content;
        assert!(prompt.contains("def add(a, b):"), "declaration present");
        assert!(prompt.contains("Python"));
    }

    #[test]
    fn intermediate_strategy_hides_declaration_and_target_in_stage_one() {
        let bench = mini_bench();
        let provider = ScriptedProvider::new("m")
            .with_rule(ScriptRule {
                contains: "Add two numbers".into(),
                stage: Some("intermediate".into()),
                round: None,
                response: "```cpp\nint add(int a, int b) { return a + b; }\n```".into(),
            })
            .with_rule(ScriptRule {
                contains: "Add two numbers".into(),
                stage: Some("target".into()),
                round: None,
                response: "```python\ndef add(a, b):\n    return a + b\n```".into(),
            });
        let t = run_strategy(
            &provider,
            &TemplateSet::builtin(),
            &bench,
            0,
            LanguageId::Python,
            Strategy::IntermediateLang(LanguageId::Cpp),
            &settings(),
        )
        .unwrap();
        assert_eq!(t.stages.len(), 2);
        let stage_one = &t.stages[0].request.as_ref().unwrap().messages[0].content;
        assert!(
            !stage_one.contains("def add"),
            "first stage must not see the target declaration"
        );
        assert!(
            !stage_one.contains("Python"),
            "first stage must not name the target language"
        );
        assert!(stage_one.contains("C++"));
        let stage_two = &t.stages[1].request.as_ref().unwrap().messages[0].content;
        assert!(stage_two.contains("int add(int a, int b) { return a + b; }"));
        assert!(stage_two.contains("def add(a, b):"), "declaration shown in stage two");
        assert_eq!(t.final_code, "def add(a, b):\n    return a + b");
    }

    #[test]
    fn ground_truth_strategy_skips_the_first_model_call() {
        let bench = mini_bench();
        // Only a target-stage rule exists: a first-stage request would fail.
        let provider = ScriptedProvider::new("m").with_rule(ScriptRule {
            contains: "int add(int a, int b) {".into(),
            stage: Some("target".into()),
            round: None,
            response: "```python\ndef add(a, b):\n    return a + b\n```".into(),
        });
        let t = run_strategy(
            &provider,
            &TemplateSet::builtin(),
            &bench,
            0,
            LanguageId::Python,
            Strategy::GroundTruth(LanguageId::Cpp),
            &settings(),
        )
        .unwrap();
        assert_eq!(t.stages.len(), 2);
        assert!(t.stages[0].request.is_none(), "ground truth is synthetic");
        assert!(t.stages[0].extracted.contains("return a + b;"));
        assert!(t.stages[0].extracted.starts_with("#include <cstdio>"));
        assert_eq!(t.final_code, "def add(a, b):\n    return a + b");
    }

    #[test]
    fn repeat_strategy_threads_history_and_keeps_last_answer() {
        let bench = mini_bench();
        let provider = ScriptedProvider::new("m")
            .with_rule(ScriptRule {
                contains: "Add two numbers".into(),
                stage: Some("direct".into()),
                round: None,
                response: "```python\ndef add(a, b):\n    return 0\n```".into(),
            })
            .with_rule(ScriptRule {
                contains: "Add two numbers".into(),
                stage: Some("repeat".into()),
                round: Some(2),
                response: "```python\ndef add(a, b):\n    return a\n```".into(),
            })
            .with_rule(ScriptRule {
                contains: "Add two numbers".into(),
                stage: Some("repeat".into()),
                round: Some(3),
                response: "```python\ndef add(a, b):\n    return a + b\n```".into(),
            });
        let t = run_strategy(
            &provider,
            &TemplateSet::builtin(),
            &bench,
            0,
            LanguageId::Python,
            Strategy::Repeat(3),
            &settings(),
        )
        .unwrap();
        assert_eq!(t.stages.len(), 3);
        assert_eq!(t.stages[2].label, "round-3");
        let last_request = t.stages[2].request.as_ref().unwrap();
        assert_eq!(last_request.messages.len(), 5, "user,asst,user,asst,user");
        assert_eq!(
            last_request.messages[1].content,
            "```python\ndef add(a, b):\n    return 0\n```",
            "prior answers are threaded verbatim"
        );
        let lower = last_request.messages[4].content.to_ascii_lowercase();
        for word in templates::REPEAT_FORBIDDEN_WORDS {
            assert!(!lower.contains(word), "re-request contains `{word}`");
        }
        assert_eq!(t.final_code, "def add(a, b):\n    return a + b");
    }

    #[test]
    fn representation_labels() {
        assert_eq!(Strategy::Direct.representation_label(), "Direct generation");
        assert_eq!(
            Strategy::IntermediateLang(LanguageId::Cpp).representation_label(),
            "C++"
        );
        assert_eq!(Strategy::NaturalLanguage.representation_label(), "Natural language");
        assert_eq!(Strategy::PseudoCode.representation_label(), "Pseudo code");
    }
}
