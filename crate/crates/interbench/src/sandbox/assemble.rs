//! Merge a model candidate with its task's declaration and test harness into
//! one runnable source file.
//!
//! Chat models usually answer with a complete entry-point definition, while
//! the dataset's declarations expect a continuation. Assembly detects which
//! shape it received: a candidate that defines the entry point replaces the
//! declaration (keeping any imports the candidate dropped), anything else is
//! appended after the declaration as a continuation.

use crate::bench::{BenchmarkTask, LanguageId};
use crate::prompting::entry_point_name;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AssemblyError {
    #[error("candidate for task {task_id} is empty")]
    EmptyCandidate { task_id: String },
}

/// Build the single source file that the sandbox compiles and runs.
pub fn assemble(task: &BenchmarkTask, candidate: &str) -> Result<String, AssemblyError> {
    let candidate = candidate.trim_end();
    if candidate.trim().is_empty() {
        return Err(AssemblyError::EmptyCandidate {
            task_id: task.task_id.clone(),
        });
    }

    let entry = entry_point_name(task.language, &task.declaration);
    let full_definition = entry
        .as_deref()
        .is_some_and(|name| defines_entry(task.language, candidate, name));

    let program = match task.language {
        LanguageId::Python => {
            if full_definition {
                join(&[
                    &preamble_lines(&task.declaration, candidate, &["import ", "from "]),
                    candidate,
                    &task.test_harness,
                ])
            } else {
                continuation(task, candidate)
            }
        }
        LanguageId::Cpp => {
            if full_definition {
                join(&[
                    &preamble_lines(&task.declaration, candidate, &["#include", "using "]),
                    candidate,
                    &task.test_harness,
                ])
            } else {
                continuation(task, candidate)
            }
        }
        LanguageId::Java => {
            let class = class_name(&task.declaration).unwrap_or_else(|| "Solution".to_string());
            if candidate.contains(&format!("class {class}")) {
                join(&[
                    &preamble_lines(&task.declaration, candidate, &["import "]),
                    candidate,
                    &task.test_harness,
                ])
            } else if full_definition {
                let wrapped = format!("class {class} {{\n{candidate}\n}}");
                join(&[
                    &preamble_lines(&task.declaration, candidate, &["import "]),
                    &wrapped,
                    &task.test_harness,
                ])
            } else {
                continuation(task, candidate)
            }
        }
        LanguageId::Go => {
            if full_definition {
                // The candidate's own imports are authoritative: Go rejects
                // unused imports, so nothing from the declaration is safe to
                // inject.
                let body: String = candidate
                    .lines()
                    .filter(|l| !l.trim_start().starts_with("package "))
                    .collect::<Vec<_>>()
                    .join("\n");
                join(&["package main", &body, &task.test_harness])
            } else {
                continuation(task, candidate)
            }
        }
        LanguageId::Rust => {
            if full_definition {
                // Duplicate `use` paths are errors, so the candidate stands
                // alone ahead of the harness.
                join(&[candidate, &task.test_harness])
            } else {
                continuation(task, candidate)
            }
        }
    };
    Ok(program)
}

/// Continuation shape: the candidate textually completes the declaration.
fn continuation(task: &BenchmarkTask, candidate: &str) -> String {
    let mut program = String::new();
    program.push_str(&task.declaration);
    if !task.declaration.ends_with('\n') {
        program.push('\n');
    }
    program.push_str(candidate);
    program.push_str("\n\n");
    program.push_str(&task.test_harness);
    program
}

/// Declaration lines starting with any of `prefixes` that the candidate does
/// not already carry.
fn preamble_lines(declaration: &str, candidate: &str, prefixes: &[&str]) -> String {
    declaration
        .lines()
        .filter(|line| {
            let line = line.trim_end();
            prefixes.iter().any(|p| line.starts_with(p)) && !candidate.contains(line.trim())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn join(parts: &[&str]) -> String {
    let mut out = String::new();
    for part in parts {
        let part = part.trim_matches('\n');
        if part.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(part);
    }
    out.push('\n');
    out
}

/// First `class <Name>` in the declaration.
fn class_name(declaration: &str) -> Option<String> {
    for line in declaration.lines() {
        if let Some(rest) = line.trim_start().strip_prefix("class ") {
            let name: String = rest
                .chars()
                .take_while(|c| c.is_alphanumeric() || *c == '_')
                .collect();
            if !name.is_empty() {
                return Some(name);
            }
        }
    }
    None
}

/// Does the candidate contain its own definition of the entry point?
fn defines_entry(language: LanguageId, candidate: &str, entry: &str) -> bool {
    match language {
        LanguageId::Python => candidate.lines().any(|l| {
            let t = l.trim_start();
            t.strip_prefix("def ")
                .and_then(|rest| rest.strip_prefix(entry))
                .is_some_and(|after| after.trim_start().starts_with('('))
        }),
        LanguageId::Go => candidate.lines().any(|l| {
            l.trim_start()
                .strip_prefix("func ")
                .and_then(|rest| rest.strip_prefix(entry))
                .is_some_and(|after| after.trim_start().starts_with('('))
        }),
        LanguageId::Rust => candidate.lines().any(|l| {
            let t = l.trim_start();
            t.find("fn ")
                .map(|i| &t[i + 3..])
                .and_then(|rest| rest.trim_start().strip_prefix(entry))
                .is_some_and(|after| after.trim_start().starts_with('('))
        }),
        LanguageId::Cpp | LanguageId::Java => {
            candidate.lines().any(|l| line_defines_callable(l, entry))
        }
    }
}

/// Signature heuristic for brace languages: `entry(` preceded by a return
/// type on a line that is neither a call statement nor an assignment.
fn line_defines_callable(line: &str, entry: &str) -> bool {
    let trimmed = line.trim();
    if trimmed.starts_with("return ")
        || trimmed.starts_with("//")
        || trimmed.starts_with('*')
        || trimmed.ends_with(';')
        || trimmed.contains('=')
    {
        return false;
    }
    let Some(pos) = find_word(trimmed, entry) else {
        return false;
    };
    if !trimmed[pos + entry.len()..].trim_start().starts_with('(') {
        return false;
    }
    let before = trimmed[..pos].trim_end();
    before
        .chars()
        .last()
        .is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '*' || c == '&' || c == '>')
}

/// First word-boundary occurrence of `word`.
fn find_word(text: &str, word: &str) -> Option<usize> {
    let is_ident = |c: char| c.is_alphanumeric() || c == '_';
    let mut from = 0;
    while let Some(rel) = text[from..].find(word) {
        let pos = from + rel;
        let ok_before = text[..pos].chars().next_back().is_none_or(|c| !is_ident(c));
        let ok_after = text[pos + word.len()..]
            .chars()
            .next()
            .is_none_or(|c| !is_ident(c));
        if ok_before && ok_after {
            return Some(pos);
        }
        from = pos + word.len();
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{ExecutionSpec, Sandbox, VerdictStatus};
    use std::time::Duration;

    fn task(language: LanguageId, declaration: &str, test: &str) -> BenchmarkTask {
        BenchmarkTask {
            task_id: format!("{}/0", language.display_name()),
            language,
            description: "d".into(),
            declaration: declaration.into(),
            canonical_solution: String::new(),
            test_harness: test.into(),
            example_test: None,
        }
    }

    fn run(language: LanguageId, program: String) -> VerdictStatus {
        let spec = ExecutionSpec::single_file(language, program, Duration::from_secs(120));
        let v = Sandbox::new().execute(&spec);
        assert_ne!(v.status, VerdictStatus::InfraError, "{}", v.detail);
        v.status
    }

    #[test]
    fn empty_candidate_is_an_error() {
        let t = task(LanguageId::Python, "def f():\n", "assert True\n");
        assert!(matches!(
            assemble(&t, "   \n"),
            Err(AssemblyError::EmptyCandidate { .. })
        ));
    }

    #[test]
    fn python_full_definition_recovers_dropped_imports() {
        let t = task(
            LanguageId::Python,
            "from typing import List\n\ndef total(xs: List[int]) -> int:\n",
            "assert total([1, 2, 3]) == 6\n",
        );
        let candidate = "def total(xs: List[int]) -> int:\n    return sum(xs)";
        let program = assemble(&t, candidate).unwrap();
        assert!(program.starts_with("from typing import List"));
        assert_eq!(
            program.matches("def total").count(),
            1,
            "declaration must not be duplicated:\n{program}"
        );
        assert_eq!(run(LanguageId::Python, program), VerdictStatus::Pass);
    }

    #[test]
    fn python_continuation_body_completes_declaration() {
        let t = task(
            LanguageId::Python,
            "def total(xs):\n",
            "assert total([1, 2, 3]) == 6\n",
        );
        let program = assemble(&t, "    return sum(xs)").unwrap();
        assert!(program.starts_with("def total(xs):\n    return sum(xs)"));
        assert_eq!(run(LanguageId::Python, program), VerdictStatus::Pass);
    }

    #[test]
    fn cpp_full_definition_passes_through_toolchain() {
        let t = task(
            LanguageId::Cpp,
            "#include <vector>\nusing namespace std;\nint total(vector<int> xs) {\n",
            "#undef NDEBUG\n#include <cassert>\nint main() { assert(total({1, 2, 3}) == 6); return 0; }\n",
        );
        let candidate = "#include <vector>\nusing namespace std;\nint total(vector<int> xs) {\n    int s = 0;\n    for (int x : xs) s += x;\n    return s;\n}";
        let program = assemble(&t, candidate).unwrap();
        assert_eq!(
            program.matches("#include <vector>").count(),
            1,
            "shared include must not duplicate:\n{program}"
        );
        assert_eq!(run(LanguageId::Cpp, program), VerdictStatus::Pass);
    }

    #[test]
    fn cpp_continuation_body_completes_declaration() {
        let t = task(
            LanguageId::Cpp,
            "#include <vector>\nusing namespace std;\nint total(vector<int> xs) {\n",
            "#undef NDEBUG\n#include <cassert>\nint main() { assert(total({1, 2}) == 3); return 0; }\n",
        );
        let candidate = "    int s = 0;\n    for (int x : xs) s += x;\n    return s;\n}";
        let program = assemble(&t, candidate).unwrap();
        assert_eq!(run(LanguageId::Cpp, program), VerdictStatus::Pass);
    }

    #[test]
    fn rust_full_definition_stands_alone() {
        let t = task(
            LanguageId::Rust,
            "fn total(xs: Vec<i64>) -> i64 {\n",
            "fn main() { assert_eq!(total(vec![1, 2, 3]), 6); }\n",
        );
        let candidate = "fn total(xs: Vec<i64>) -> i64 {\n    xs.iter().sum()\n}";
        let program = assemble(&t, candidate).unwrap();
        assert_eq!(program.matches("fn total").count(), 1);
        assert_eq!(run(LanguageId::Rust, program), VerdictStatus::Pass);
    }

    #[test]
    fn go_full_definition_keeps_one_package_clause() {
        let t = task(
            LanguageId::Go,
            "package main\n\nfunc Total(xs []int) int {\n",
            "func main() {\n    if Total([]int{1, 2}) != 3 {\n        panic(\"assertion failed: Total\")\n    }\n}\n",
        );
        let candidate = "package main\n\nfunc Total(xs []int) int {\n    s := 0\n    for _, x := range xs {\n        s += x\n    }\n    return s\n}";
        let program = assemble(&t, candidate).unwrap();
        assert_eq!(program.matches("package main").count(), 1, "{program}");
        assert_eq!(program.matches("func Total").count(), 1);
        assert!(program.contains("func main()"));
    }

    #[test]
    fn java_method_candidate_is_wrapped_in_the_class() {
        let t = task(
            LanguageId::Java,
            "import java.util.*;\n\nclass Solution {\n    public int total(List<Integer> xs) {\n",
            "public class Main {\n    public static void main(String[] args) {\n        Solution s = new Solution();\n        if (s.total(Arrays.asList(1, 2)) != 3) { throw new AssertionError(); }\n    }\n}\n",
        );
        let candidate =
            "    public int total(List<Integer> xs) {\n        int s = 0;\n        for (int x : xs) s += x;\n        return s;\n    }";
        let program = assemble(&t, candidate).unwrap();
        assert!(program.contains("class Solution {"));
        assert_eq!(program.matches("class Solution").count(), 1);
        assert!(program.starts_with("import java.util.*;"), "{program}");
    }

    #[test]
    fn java_full_class_candidate_is_kept_whole() {
        let t = task(
            LanguageId::Java,
            "import java.util.*;\n\nclass Solution {\n    public int total(List<Integer> xs) {\n",
            "public class Main { public static void main(String[] a) {} }\n",
        );
        let candidate = "import java.util.*;\nclass Solution {\n    public int total(List<Integer> xs) { return 3; }\n}";
        let program = assemble(&t, candidate).unwrap();
        assert_eq!(program.matches("class Solution").count(), 1);
        assert_eq!(program.matches("import java.util.*;").count(), 1);
    }

    #[test]
    fn call_sites_do_not_count_as_definitions() {
        assert!(!defines_entry(
            LanguageId::Cpp,
            "int main() {\n    int x = total({1});\n    return total({2});\n}",
            "total"
        ));
        assert!(defines_entry(
            LanguageId::Cpp,
            "long long total(vector<int> xs) {",
            "total"
        ));
        assert!(defines_entry(
            LanguageId::Java,
            "    public int total(List<Integer> xs) {",
            "total"
        ));
        assert!(!defines_entry(LanguageId::Python, "x = total([1])", "total"));
        assert!(defines_entry(LanguageId::Python, "def total(xs):", "total"));
        assert!(defines_entry(
            LanguageId::Rust,
            "pub fn total(xs: Vec<i64>) -> i64 {",
            "total"
        ));
        assert!(!defines_entry(LanguageId::Rust, "let y = total(xs);", "total"));
    }
}
