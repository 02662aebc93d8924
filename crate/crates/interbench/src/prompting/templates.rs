//! Prompt templates with `{placeholder}` substitution.
//!
//! Defaults are compiled in from `templates/` at the repository root; a run
//! can point at a directory of overrides. Each template's digest is recorded
//! in the run manifest so reports stay traceable to exact wording.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

const DEFAULT_DIRECT: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../templates/direct.txt"));
const DEFAULT_INTERMEDIATE: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../templates/intermediate.txt"
));
const DEFAULT_TARGET: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../templates/target.txt"));
const DEFAULT_REPEAT: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../templates/repeat.txt"));

/// Words that must never appear in the re-request wording: repeated prompting
/// measures what asking again does on its own, without hinting that the
/// previous answer was wrong.
pub const REPEAT_FORBIDDEN_WORDS: [&str; 4] = ["fix", "correct", "improve", "error"];

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("failed to read template `{name}`: {source}")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("re-request template contains forbidden word `{word}`")]
    ForbiddenRepeatWord { word: &'static str },
}

/// The four prompt shapes used across all strategies.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    direct: String,
    intermediate: String,
    target: String,
    repeat: String,
}

impl TemplateSet {
    /// Compiled-in defaults.
    pub fn builtin() -> TemplateSet {
        let set = TemplateSet {
            direct: DEFAULT_DIRECT.to_string(),
            intermediate: DEFAULT_INTERMEDIATE.to_string(),
            target: DEFAULT_TARGET.to_string(),
            repeat: DEFAULT_REPEAT.to_string(),
        };
        set.check_repeat_wording()
            .expect("builtin re-request template must avoid forbidden words");
        set
    }

    /// Load overrides from a directory; any file absent there falls back to
    /// the compiled-in default.
    pub fn from_dir(dir: &Path) -> Result<TemplateSet, TemplateError> {
        let read = |name: &str, fallback: &str| -> Result<String, TemplateError> {
            let path = dir.join(name);
            if path.is_file() {
                std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    name: name.to_string(),
                    source,
                })
            } else {
                Ok(fallback.to_string())
            }
        };
        let set = TemplateSet {
            direct: read("direct.txt", DEFAULT_DIRECT)?,
            intermediate: read("intermediate.txt", DEFAULT_INTERMEDIATE)?,
            target: read("target.txt", DEFAULT_TARGET)?,
            repeat: read("repeat.txt", DEFAULT_REPEAT)?,
        };
        set.check_repeat_wording()?;
        Ok(set)
    }

    fn check_repeat_wording(&self) -> Result<(), TemplateError> {
        let lower = self.repeat.to_ascii_lowercase();
        for word in REPEAT_FORBIDDEN_WORDS {
            if lower.contains(word) {
                return Err(TemplateError::ForbiddenRepeatWord { word });
            }
        }
        Ok(())
    }

    pub fn direct(&self) -> &str {
        &self.direct
    }

    pub fn intermediate(&self) -> &str {
        &self.intermediate
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn repeat(&self) -> &str {
        &self.repeat
    }

    /// Template-name → sha256 digest map, recorded in run manifests.
    pub fn digests(&self) -> BTreeMap<String, String> {
        [
            ("direct", &self.direct),
            ("intermediate", &self.intermediate),
            ("target", &self.target),
            ("repeat", &self.repeat),
        ]
        .into_iter()
        .map(|(name, text)| (name.to_string(), hex::encode(Sha256::digest(text.as_bytes()))))
        .collect()
    }
}

/// Substitute `{name}` tokens from `values` in a single left-to-right pass.
///
/// Substituted values are never re-scanned, so code containing braces (for
/// example a C++ declaration) passes through untouched. Unknown `{...}`
/// tokens are kept verbatim because task text may legitimately contain them.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        if let Some(close) = after.find(['}', '{', '\n']) {
            if after.as_bytes()[close] == b'}' {
                let name = &after[..close];
                for (key, value) in values {
                    if *key == name {
                        out.push_str(value);
                        rest = &after[close + 1..];
                        continue 'outer;
                    }
                }
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}
