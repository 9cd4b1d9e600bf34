//! Prompt templates for formalization, quality scoring and proof generation.

use serde::{Deserialize, Serialize};

use crate::statement::{FormalStatement, InformalProblem};
use crate::verifier::VERIFICATION_PREFIX;

/// Quality rubric; the statement to assess is appended after it.
pub const SCORING_RUBRIC: &str = include_str!("scoring_rubric.txt");

pub const FORMALIZATION_HEADER: &str = "Mathematical Problem in Natural Language:\n";
pub const FORMALIZATION_INSTRUCTION: &str =
    "Translate the problem to Lean 4 (only the core declaration): \n```lean4";

pub const CODE_FENCE: &str = "```";

/// `Mathematical Problem in Natural Language:\n{text}\n[{answer}\n]Translate ...\n```lean4`
pub fn render_formalization_prompt(problem: &InformalProblem) -> String {
    let mut out = String::from(FORMALIZATION_HEADER);
    out.push_str(problem.text.trim());
    out.push('\n');
    if let Some(answer) = problem.answer_text() {
        out.push_str(answer);
        out.push('\n');
    }
    out.push_str(FORMALIZATION_INSTRUCTION);
    out
}

pub fn render_scoring_prompt(stmt: &FormalStatement) -> String {
    format!("{SCORING_RUBRIC}\n\n```lean4\n{}\n```\n", stmt.raw)
}

/// How whole-proof prompts are laid out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofPromptStyle {
    /// Verification prefix, blank line, statement, ` := by\n`. Prompt plus
    /// completion is exactly the checkable source.
    #[default]
    PrefixedStatement,
    /// Statement and ` := by\n` only.
    StatementOnly,
}

pub fn render_proof_prompt(stmt: &FormalStatement, style: ProofPromptStyle) -> String {
    let tail = format!("{} := by\n", stmt.raw);
    match style {
        ProofPromptStyle::PrefixedStatement => format!("{VERIFICATION_PREFIX}\n{tail}"),
        ProofPromptStyle::StatementOnly => tail,
    }
}

/// The tactic block from a proof completion: text before the first fence,
/// leading blank lines and trailing whitespace removed, indentation kept.
pub fn extract_proof_body(completion: &str) -> String {
    let before_fence = completion.split(CODE_FENCE).next().unwrap_or("");
    let mut lines: Vec<&str> = before_fence.lines().collect();
    while lines.first().is_some_and(|l| l.trim().is_empty()) {
        lines.remove(0);
    }
    lines.join("\n").trim_end().to_string()
}
