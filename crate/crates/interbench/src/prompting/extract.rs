//! Pull candidate code out of free-form model responses.
//!
//! Responses mix prose, markdown fences, and bare code. Extraction applies a
//! fixed cascade and records which rule produced the result:
//!
//! 1. first fence tagged with an alias of the expected language,
//! 2. first fence of any kind,
//! 3. largest blank-line-delimited region mentioning the entry-point name
//!    (regions whose first line is indented are glued to their predecessor,
//!    so split method bodies stay with their type),
//! 4. the whole response, trimmed.
//!
//! The cascade is idempotent: running it on its own output returns the same
//! text. Rules 1–2 strip the fence markers, so their output has no fences
//! and re-extraction falls through to rules 3–4, which are identity-stable
//! on fence-free text.

use serde::{Deserialize, Serialize};

use crate::bench::LanguageId;

/// Which cascade rule produced the extracted text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRule {
    TaggedFence,
    AnyFence,
    EntryRegion,
    WholeResponse,
}

impl ExtractionRule {
    /// Cascade position, 1-based.
    pub fn index(self) -> u8 {
        match self {
            ExtractionRule::TaggedFence => 1,
            ExtractionRule::AnyFence => 2,
            ExtractionRule::EntryRegion => 3,
            ExtractionRule::WholeResponse => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub code: String,
    pub rule: ExtractionRule,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("response is empty")]
    EmptyResponse,
}

/// Fence tags accepted as meaning `language`.
fn tag_matches(tag: &str, language: LanguageId) -> bool {
    let tag = tag.to_ascii_lowercase();
    let aliases: &[&str] = match language {
        LanguageId::Cpp => &["cpp", "c++", "cxx", "cc"],
        LanguageId::Go => &["go", "golang"],
        LanguageId::Java => &["java"],
        LanguageId::Python => &["python", "py", "python3"],
        LanguageId::Rust => &["rust", "rs"],
    };
    aliases.contains(&tag.as_str())
}

struct Fence<'a> {
    tag: &'a str,
    body: String,
}

/// All fenced blocks in order. An unclosed fence runs to the end of input.
fn fences(text: &str) -> Vec<Fence<'_>> {
    let mut out = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let trimmed = line.trim_start();
        if !trimmed.starts_with("```") {
            continue;
        }
        let tag = trimmed[3..].trim().split_whitespace().next().unwrap_or("");
        let mut body_lines: Vec<&str> = Vec::new();
        for inner in lines.by_ref() {
            if inner.trim_start().starts_with("```") {
                break;
            }
            body_lines.push(inner);
        }
        out.push(Fence {
            tag,
            body: body_lines.join("\n"),
        });
    }
    out
}

/// Blank-line-delimited regions, with indented continuations glued to their
/// predecessor. Runs of blank lines inside a glued group collapse to one so
/// repeated extraction reproduces the same text.
fn regions(text: &str) -> Vec<String> {
    let mut raw: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                raw.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        raw.push(current);
    }

    let mut glued: Vec<String> = Vec::new();
    for part in raw {
        let starts_indented = part
            .first()
            .is_some_and(|l| l.starts_with(' ') || l.starts_with('\t'));
        let joined = part.join("\n");
        match glued.last_mut() {
            Some(prev) if starts_indented => {
                prev.push_str("\n\n");
                prev.push_str(&joined);
            }
            _ => glued.push(joined),
        }
    }
    glued
}

/// Extract target-language code from a response.
///
/// `entry_name` (when known) lets rule 3 find bare code regions that define
/// the task's entry point.
pub fn extract_code(
    response: &str,
    language: LanguageId,
    entry_name: Option<&str>,
) -> Result<Extraction, ExtractError> {
    let trimmed = response.trim();
    if trimmed.is_empty() {
        return Err(ExtractError::EmptyResponse);
    }

    let blocks = fences(trimmed);
    if let Some(block) = blocks.iter().find(|b| tag_matches(b.tag, language)) {
        return Ok(Extraction {
            code: block.body.trim().to_string(),
            rule: ExtractionRule::TaggedFence,
        });
    }
    if let Some(block) = blocks.first() {
        return Ok(Extraction {
            code: block.body.trim().to_string(),
            rule: ExtractionRule::AnyFence,
        });
    }

    if let Some(name) = entry_name.filter(|n| !n.is_empty()) {
        let candidates = regions(trimmed);
        if let Some(best) = candidates
            .iter()
            .filter(|r| r.contains(name))
            .max_by_key(|r| r.len())
        {
            return Ok(Extraction {
                code: best.clone(),
                rule: ExtractionRule::EntryRegion,
            });
        }
    }

    Ok(Extraction {
        code: trimmed.to_string(),
        rule: ExtractionRule::WholeResponse,
    })
}

/// Extract a free-form sketch (natural language or pseudo code): first fence
/// if any, otherwise the whole trimmed response.
pub fn extract_sketch(response: &str) -> Result<Extraction, ExtractError> {
    let trimmed = response.trim();
    if trimmed.is_empty() {
        return Err(ExtractError::EmptyResponse);
    }
    if let Some(block) = fences(trimmed).first() {
        return Ok(Extraction {
            code: block.body.trim().to_string(),
            rule: ExtractionRule::AnyFence,
        });
    }
    Ok(Extraction {
        code: trimmed.to_string(),
        rule: ExtractionRule::WholeResponse,
    })
}

/// Name of the function a task's declaration asks the model to complete.
///
/// Used both for rule 3 above and for deciding how a candidate is assembled
/// with the declaration before execution.
pub fn entry_point_name(language: LanguageId, declaration: &str) -> Option<String> {
    fn ident_after<'a>(line: &'a str, keyword: &str) -> Option<&'a str> {
        let rest = line.trim_start().strip_prefix(keyword)?;
        let name: &str = rest
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .next()?;
        (!name.is_empty()).then_some(name)
    }

    match language {
        LanguageId::Python => declaration
            .lines()
            .rev()
            .find_map(|l| ident_after(l, "def "))
            .map(str::to_string),
        LanguageId::Go => declaration
            .lines()
            .rev()
            .find_map(|l| ident_after(l, "func "))
            .map(str::to_string),
        LanguageId::Rust => declaration
            .lines()
            .rev()
            .find_map(|l| ident_after(l, "fn "))
            .map(str::to_string),
        // C++ and Java declarations end with the signature of the function to
        // complete: take the identifier right before `(` on the last line
        // that opens a parameter list.
        LanguageId::Cpp | LanguageId::Java => declaration.lines().rev().find_map(|line| {
            let line = line.trim();
            if line.starts_with("//") || line.starts_with('#') || line.starts_with('*') {
                return None;
            }
            let open = line.find('(')?;
            let name: String = line[..open]
                .chars()
                .rev()
                .take_while(|c| c.is_alphanumeric() || *c == '_')
                .collect::<String>()
                .chars()
                .rev()
                .collect();
            (!name.is_empty() && !name.chars().next().unwrap().is_ascii_digit())
                .then_some(name)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_fence_wins_over_earlier_untagged() {
        let resp = "Notes first.\n```\nplain block\n```\nThen:\n```python\ndef f():\n    return 1\n```\n";
        let got = extract_code(resp, LanguageId::Python, Some("f")).unwrap();
        assert_eq!(got.rule, ExtractionRule::TaggedFence);
        assert_eq!(got.code, "def f():\n    return 1");
    }

    #[test]
    fn alias_tags_match() {
        for (tag, lang) in [
            ("c++", LanguageId::Cpp),
            ("cc", LanguageId::Cpp),
            ("golang", LanguageId::Go),
            ("py", LanguageId::Python),
            ("rs", LanguageId::Rust),
        ] {
            let resp = format!("```{tag}\ncode here\n```");
            let got = extract_code(&resp, lang, None).unwrap();
            assert_eq!(got.rule, ExtractionRule::TaggedFence, "tag {tag}");
            assert_eq!(got.code, "code here");
        }
    }

    #[test]
    fn first_any_fence_when_no_tag_matches() {
        let resp = "```text\nfirst\n```\n```js\nsecond\n```";
        let got = extract_code(resp, LanguageId::Rust, None).unwrap();
        assert_eq!(got.rule, ExtractionRule::AnyFence);
        assert_eq!(got.code, "first");
    }

    #[test]
    fn unclosed_fence_runs_to_end() {
        let resp = "intro\n```rust\nfn f() -> u32 {\n    1\n}";
        let got = extract_code(resp, LanguageId::Rust, Some("f")).unwrap();
        assert_eq!(got.rule, ExtractionRule::TaggedFence);
        assert_eq!(got.code, "fn f() -> u32 {\n    1\n}");
    }

    #[test]
    fn entry_region_picks_largest_mentioning_entry() {
        let resp = "Here is my approach, in prose, quite long-winded.\n\n\
                    def helper(x):\n    return x\n\n\
                    Sure thing.\n\n\
                    def solve(a, b):\n    h = helper(a)\n    return h + b\n\n\
                    Hope that helps!";
        let got = extract_code(resp, LanguageId::Python, Some("solve")).unwrap();
        assert_eq!(got.rule, ExtractionRule::EntryRegion);
        assert_eq!(got.code, "def solve(a, b):\n    h = helper(a)\n    return h + b");
    }

    #[test]
    fn indented_continuation_stays_with_its_region() {
        let resp = "Some prose about solve.\n\n\
                    def solve(a):\n    x = 1\n\n    return x + a\n\n\
                    closing prose";
        let got = extract_code(resp, LanguageId::Python, Some("solve")).unwrap();
        assert_eq!(got.rule, ExtractionRule::EntryRegion);
        assert_eq!(got.code, "def solve(a):\n    x = 1\n\n    return x + a");
    }

    #[test]
    fn whole_response_when_nothing_else_applies() {
        let resp = "  just prose with no code or entry point mention  ";
        let got = extract_code(resp, LanguageId::Go, Some("Solve")).unwrap();
        assert_eq!(got.rule, ExtractionRule::WholeResponse);
        assert_eq!(got.code, "just prose with no code or entry point mention");
    }

    #[test]
    fn empty_response_is_an_error() {
        assert_eq!(
            extract_code("   \n\t ", LanguageId::Python, None).unwrap_err(),
            ExtractError::EmptyResponse
        );
        assert_eq!(extract_sketch("").unwrap_err(), ExtractError::EmptyResponse);
    }

    #[test]
    fn sketch_takes_first_fence_or_whole_text() {
        let fenced = "Plan:\n```\nstep 1\nstep 2\n```\ndone";
        assert_eq!(extract_sketch(fenced).unwrap().code, "step 1\nstep 2");
        let bare = "First sort the list.\nThen scan it.";
        let got = extract_sketch(bare).unwrap();
        assert_eq!(got.rule, ExtractionRule::WholeResponse);
        assert_eq!(got.code, bare);
    }

    #[test]
    fn extraction_is_idempotent_on_varied_responses() {
        let samples = [
            "```python\ndef f():\n    return 2\n```",
            "prose\n```go\nfunc Add(a int) int { return a }\n```\ntrailer",
            "no fence\n\ndef f(x):\n    y = x\n\n    return y\n\nbye",
            "plain text only, nothing else",
            "intro\n```rust\nfn f() {}\n",
            "```\nuntagged\n```",
        ];
        for (lang, name) in [
            (LanguageId::Python, Some("f")),
            (LanguageId::Go, Some("Add")),
            (LanguageId::Rust, Some("f")),
        ] {
            for sample in samples {
                let once = extract_code(sample, lang, name).unwrap();
                let twice = extract_code(&once.code, lang, name).unwrap();
                assert_eq!(once.code, twice.code, "lang {lang:?} sample {sample:?}");
            }
        }
    }

    #[test]
    fn entry_names_are_sniffed_per_language() {
        assert_eq!(
            entry_point_name(LanguageId::Python, "from typing import List\n\ndef has_close_elements(numbers: List[float]) -> bool:\n"),
            Some("has_close_elements".into())
        );
        assert_eq!(
            entry_point_name(LanguageId::Go, "import \"sort\"\n\nfunc HasCloseElements(numbers []float64) bool {\n"),
            Some("HasCloseElements".into())
        );
        assert_eq!(
            entry_point_name(LanguageId::Rust, "fn has_close_elements(numbers: Vec<f64>) -> bool {\n"),
            Some("has_close_elements".into())
        );
        assert_eq!(
            entry_point_name(LanguageId::Cpp, "#include <vector>\nusing namespace std;\nbool has_close_elements(vector<float> numbers, float threshold){\n"),
            Some("has_close_elements".into())
        );
        assert_eq!(
            entry_point_name(
                LanguageId::Java,
                "import java.util.*;\nclass Solution {\n    public boolean hasCloseElements(List<Double> numbers) {\n"
            ),
            Some("hasCloseElements".into())
        );
        assert_eq!(entry_point_name(LanguageId::Python, "x = 1"), None);
    }
}
