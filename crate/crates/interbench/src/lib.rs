//! Harness for evaluating intermediate-target prompting in LLM code generation.
//!
//! The pipeline prompts a model for a solution in an intermediate representation
//! (another programming language, a natural-language sketch, or pseudo code),
//! then prompts again for the target-language solution with that intermediate as
//! context. Generated candidates are assembled with each task's declaration and
//! test harness, executed in a subprocess sandbox, and the resulting pass/fail
//! outcomes feed the statistics layer: pass rates, deltas against direct
//! generation, phi correlations, ground-truth-intermediate improvements, and
//! repeated-prompting comparisons.

pub mod bench;
pub mod prompting;
pub mod providers;
pub mod runner;
pub mod sandbox;
pub mod stats;
