//! Informal problems and formal Lean declarations.
//!
//! A [`FormalStatement`] is a declaration header split into its binders
//! (everything between the declaration keyword/name and the goal colon) and
//! its goal. The splitter is a bracket-depth scanner, not a Lean grammar; it
//! is adequate for `example`/`theorem` competition statements, where every
//! binder in the signature is bracketed.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A natural-language problem, the raw input of the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformalProblem {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default)]
    pub source_tag: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProblemError {
    #[error("problem has an empty id")]
    EmptyId,
    #[error("problem {0} has empty text")]
    EmptyText(String),
    #[error("duplicate problem id {0}")]
    DuplicateId(String),
}

impl InformalProblem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            answer: None,
            source_tag: String::new(),
        }
    }

    pub fn with_answer(mut self, answer: impl Into<String>) -> Self {
        self.answer = Some(answer.into());
        self
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.id.trim().is_empty() {
            return Err(ProblemError::EmptyId);
        }
        if self.text.trim().is_empty() {
            return Err(ProblemError::EmptyText(self.id.clone()));
        }
        Ok(())
    }

    /// The answer, if present and non-blank.
    pub fn answer_text(&self) -> Option<&str> {
        self.answer
            .as_deref()
            .map(str::trim)
            .filter(|a| !a.is_empty())
    }
}

/// Checks every problem and rejects duplicate ids within one corpus.
pub fn validate_corpus(problems: &[InformalProblem]) -> Result<(), ProblemError> {
    let mut seen = std::collections::HashSet::new();
    for p in problems {
        p.validate()?;
        if !seen.insert(p.id.as_str()) {
            return Err(ProblemError::DuplicateId(p.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclarationKind {
    Example,
    Theorem,
    Lemma,
}

impl DeclarationKind {
    pub fn keyword(self) -> &'static str {
        match self {
            DeclarationKind::Example => "example",
            DeclarationKind::Theorem => "theorem",
            DeclarationKind::Lemma => "lemma",
        }
    }

    fn from_keyword(word: &str) -> Option<Self> {
        match word {
            "example" => Some(DeclarationKind::Example),
            "theorem" => Some(DeclarationKind::Theorem),
            "lemma" => Some(DeclarationKind::Lemma),
            _ => None,
        }
    }
}

/// A parsed declaration header. `raw` never includes a proof body.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FormalStatement {
    pub raw: String,
    pub kind: DeclarationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub binders: String,
    pub goal: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("empty declaration")]
    EmptyInput,
    #[error("expected `example`, `theorem` or `lemma`, found {found:?}")]
    UnknownDeclaration { found: String },
    #[error("`{keyword}` without a name")]
    MissingName { keyword: String },
    #[error("unbalanced brackets at byte {offset}")]
    UnbalancedBrackets { offset: usize },
    #[error("no top-level goal separator")]
    NoGoalSeparator,
    #[error("empty goal")]
    EmptyGoal,
}

/// A declaration split from an optional trailing proof.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDeclaration {
    pub statement: FormalStatement,
    /// Text after the top-level `:=`, if any (for example `by\n  simp`).
    pub proof: Option<String>,
}

const OPENERS: [char; 6] = ['(', '[', '{', '⦃', '⟨', '⟦'];
const CLOSERS: [char; 6] = [')', ']', '}', '⦄', '⟩', '⟧'];
const LOCAL_BINDING_KEYWORDS: [&str; 4] = ["let", "have", "letI", "haveI"];

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '\'' | '.' | '!' | '?') || is_subscript(c)
}

fn is_subscript(c: char) -> bool {
    ('\u{2080}'..='\u{209C}').contains(&c)
}

/// Byte offset after any whitespace and comments starting at `pos`.
fn skip_trivia(src: &str, mut pos: usize) -> usize {
    loop {
        let rest = &src[pos..];
        let trimmed = rest.trim_start();
        pos += rest.len() - trimmed.len();
        if trimmed.starts_with("--") {
            pos += trimmed.find('\n').unwrap_or(trimmed.len());
        } else if trimmed.starts_with("/-") {
            pos += block_comment_len(trimmed).unwrap_or(trimmed.len());
        } else {
            return pos;
        }
    }
}

/// Length of a (nested) block comment starting at the beginning of `s`.
fn block_comment_len(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut i = 0;
    let bytes = s.as_bytes();
    while i + 1 < bytes.len() {
        if bytes[i] == b'/' && bytes[i + 1] == b'-' {
            depth += 1;
            i += 2;
        } else if bytes[i] == b'-' && bytes[i + 1] == b'/' {
            depth -= 1;
            i += 2;
            if depth == 0 {
                return Some(i);
            }
        } else {
            i += 1;
        }
    }
    None
}

fn read_word(src: &str, pos: usize) -> &str {
    let rest = &src[pos..];
    let end = rest
        .char_indices()
        .find(|&(_, c)| !is_ident_char(c))
        .map_or(rest.len(), |(i, _)| i);
    &rest[..end]
}

fn read_name(src: &str, pos: usize) -> &str {
    let rest = &src[pos..];
    if rest.starts_with('«') {
        return rest.find('»').map_or(rest, |i| &rest[..i + '»'.len_utf8()]);
    }
    let end = rest
        .char_indices()
        .find(|&(_, c)| c.is_whitespace() || c == ':' || OPENERS.contains(&c))
        .map_or(rest.len(), |(i, _)| i);
    &rest[..end]
}

struct Scan {
    goal_colon: usize,
    proof_assign: Option<usize>,
}

/// Walks the signature tracking bracket depth, strings and comments.
///
/// The goal separator is the first depth-0 `:` that is neither `:=` nor part
/// of `::`. After it, the first depth-0 `:=` that does not belong to a pending
/// `let`/`have` opens the proof.
fn scan_signature(src: &str, from: usize) -> Result<Scan, ParseError> {
    let mut stack: Vec<char> = Vec::new();
    let mut goal_colon = None;
    let mut pending_local = 0usize;
    let mut prev: Option<char> = None;
    let mut iter = src[from..]
        .char_indices()
        .map(|(i, c)| (i + from, c))
        .peekable();

    while let Some((i, c)) = iter.next() {
        match c {
            '"' => {
                let mut escaped = false;
                let mut closed = false;
                for (_, s) in iter.by_ref() {
                    if escaped {
                        escaped = false;
                    } else if s == '\\' {
                        escaped = true;
                    } else if s == '"' {
                        closed = true;
                        break;
                    }
                }
                if !closed {
                    return Err(ParseError::UnbalancedBrackets { offset: i });
                }
            }
            '-' if src[i..].starts_with("--") => {
                for (_, s) in iter.by_ref() {
                    if s == '\n' {
                        break;
                    }
                }
            }
            '/' if src[i..].starts_with("/-") => {
                let len = block_comment_len(&src[i..])
                    .ok_or(ParseError::UnbalancedBrackets { offset: i })?;
                while iter.peek().is_some_and(|&(j, _)| j < i + len) {
                    iter.next();
                }
            }
            c if OPENERS.contains(&c) => stack.push(c),
            c if CLOSERS.contains(&c) => {
                let idx = CLOSERS.iter().position(|&k| k == c).expect("closer");
                if stack.pop() != Some(OPENERS[idx]) {
                    return Err(ParseError::UnbalancedBrackets { offset: i });
                }
            }
            ':' if stack.is_empty() => {
                let next = iter.peek().map(|&(_, n)| n);
                match next {
                    Some(':') => {
                        iter.next();
                    }
                    Some('=') => {
                        let Some(colon) = goal_colon else {
                            return Err(ParseError::NoGoalSeparator);
                        };
                        if pending_local > 0 {
                            pending_local -= 1;
                            iter.next();
                        } else {
                            return Ok(Scan {
                                goal_colon: colon,
                                proof_assign: Some(i),
                            });
                        }
                    }
                    _ => {
                        if goal_colon.is_none() {
                            goal_colon = Some(i);
                        }
                    }
                }
            }
            c if stack.is_empty()
                && goal_colon.is_some()
                && c.is_alphabetic()
                && !prev.is_some_and(is_ident_char) =>
            {
                let word = read_word(src, i);
                if LOCAL_BINDING_KEYWORDS.contains(&word) {
                    pending_local += 1;
                }
                let end = i + word.len();
                while iter.peek().is_some_and(|&(j, _)| j < end) {
                    iter.next();
                }
                prev = word.chars().last();
                continue;
            }
            _ => {}
        }
        prev = Some(c);
    }

    if !stack.is_empty() {
        return Err(ParseError::UnbalancedBrackets { offset: src.len() });
    }
    match goal_colon {
        Some(colon) => Ok(Scan {
            goal_colon: colon,
            proof_assign: None,
        }),
        None => Err(ParseError::NoGoalSeparator),
    }
}

/// Parses a declaration, keeping any trailing proof separately.
pub fn parse_declaration(input: &str) -> Result<ParsedDeclaration, ParseError> {
    if input.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let start = skip_trivia(input, 0);
    let keyword = read_word(input, start);
    let kind =
        DeclarationKind::from_keyword(keyword).ok_or_else(|| ParseError::UnknownDeclaration {
            found: input[start..].chars().take(24).collect(),
        })?;
    let mut pos = start + keyword.len();

    let name = match kind {
        DeclarationKind::Example => None,
        DeclarationKind::Theorem | DeclarationKind::Lemma => {
            pos = skip_trivia(input, pos);
            let name = read_name(input, pos);
            if name.is_empty() {
                return Err(ParseError::MissingName {
                    keyword: keyword.to_string(),
                });
            }
            pos += name.len();
            Some(name.to_string())
        }
    };

    let scan = scan_signature(input, pos)?;
    let header_end = scan.proof_assign.unwrap_or(input.len());
    let binders = input[pos..scan.goal_colon].trim().to_string();
    let goal = input[scan.goal_colon + 1..header_end].trim().to_string();
    if goal.is_empty() {
        return Err(ParseError::EmptyGoal);
    }
    let proof = scan
        .proof_assign
        .map(|i| input[i + 2..].trim().to_string())
        .filter(|p| !p.is_empty());

    Ok(ParsedDeclaration {
        statement: FormalStatement {
            raw: input[start..header_end].trim_end().to_string(),
            kind,
            name,
            binders,
            goal,
        },
        proof,
    })
}

/// Parses a declaration header; a trailing `:= ...` proof is dropped.
pub fn parse_statement(input: &str) -> Result<FormalStatement, ParseError> {
    parse_declaration(input).map(|d| d.statement)
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl FormalStatement {
    fn with_goal(&self, goal: String) -> FormalStatement {
        let mut stmt = FormalStatement {
            raw: String::new(),
            kind: self.kind,
            name: self.name.clone(),
            binders: self.binders.clone(),
            goal,
        };
        stmt.raw = stmt.render();
        stmt
    }

    /// Reassembles keyword, name, binders and goal.
    pub fn render(&self) -> String {
        let mut out = String::from(self.kind.keyword());
        if let Some(name) = &self.name {
            out.push(' ');
            out.push_str(name);
        }
        if !self.binders.is_empty() {
            out.push(' ');
            out.push_str(&self.binders);
        }
        out.push_str(" : ");
        out.push_str(&self.goal);
        out
    }

    /// Same binders, goal replaced by `False`. Idempotent.
    pub fn rewrite_goal_to_false(&self) -> FormalStatement {
        self.with_goal("False".to_string())
    }

    /// Same binders, goal wrapped as `¬ (goal)`.
    pub fn negate(&self) -> FormalStatement {
        self.with_goal(format!("¬ ({})", self.goal))
    }

    /// Deduplication key: whitespace-collapsed, name-insensitive and
    /// keyword-insensitive.
    pub fn normalize_for_hash(&self) -> String {
        let mut parts = vec!["example"];
        if !self.binders.is_empty() {
            parts.push(&self.binders);
        }
        parts.push(":");
        parts.push(&self.goal);
        normalize_whitespace(&parts.join(" "))
    }

    /// Hex SHA-256 of [`normalize_for_hash`](Self::normalize_for_hash).
    pub fn content_hash(&self) -> String {
        sha256_hex(self.normalize_for_hash().as_bytes())
    }

    /// The statement followed by `:= by` and the tactic block.
    pub fn with_tactic_proof(&self, proof_body: &str) -> String {
        format!("{} := by\n{}", self.raw, proof_body)
    }
}

pub fn rewrite_goal_to_false(stmt: &FormalStatement) -> FormalStatement {
    stmt.rewrite_goal_to_false()
}

pub fn negate_statement(stmt: &FormalStatement) -> FormalStatement {
    stmt.negate()
}

pub fn normalize_for_hash(stmt: &FormalStatement) -> String {
    stmt.normalize_for_hash()
}

impl fmt::Display for FormalStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const THETA: &str = "example (θ : ℝ) (h₀ : ∀ z : ℂ, z ^ 2 = -1 ∧ z ^ 3 = -1 ∧ z ^ 6 = 1) (h₁ : Real.tan θ = 2 * Real.sqrt 3) : θ = 5 * Real.pi / 3";

    #[test]
    fn trivial_example_has_no_binders() {
        let s = parse_statement("example : True").unwrap();
        assert_eq!(s.binders, "");
        assert_eq!(s.goal, "True");
        assert_eq!(s.kind, DeclarationKind::Example);
        assert_eq!(s.name, None);
    }

    #[test]
    fn theta_statement_splits_at_goal() {
        let s = parse_statement(THETA).unwrap();
        assert_eq!(s.goal, "θ = 5 * Real.pi / 3");
        assert!(s
            .binders
            .contains("(h₀ : ∀ z : ℂ, z ^ 2 = -1 ∧ z ^ 3 = -1 ∧ z ^ 6 = 1)"));
        assert!(s.binders.contains("(h₁ : Real.tan θ = 2 * Real.sqrt 3)"));
    }

    #[test]
    fn false_rewrite_keeps_binders() {
        let s = parse_statement(THETA).unwrap().rewrite_goal_to_false();
        assert_eq!(
            s.raw,
            "example (θ : ℝ) (h₀ : ∀ z : ℂ, z ^ 2 = -1 ∧ z ^ 3 = -1 ∧ z ^ 6 = 1) (h₁ : Real.tan θ = 2 * Real.sqrt 3) : False"
        );
        assert_eq!(
            parse_statement("example : True")
                .unwrap()
                .rewrite_goal_to_false()
                .raw,
            "example : False"
        );
    }

    #[test]
    fn negation_wraps_goal() {
        let s = parse_statement("example (a b c : ℝ) : a + b > c")
            .unwrap()
            .negate();
        assert_eq!(s.goal, "¬ (a + b > c)");
        assert_eq!(s.raw, "example (a b c : ℝ) : ¬ (a + b > c)");
    }

    #[test]
    fn strips_proof_body() {
        let d = parse_declaration("example : True := by\n  trivial").unwrap();
        assert_eq!(d.statement.raw, "example : True");
        assert_eq!(d.proof.as_deref(), Some("by\n  trivial"));
    }

    #[test]
    fn let_bindings_in_goal_are_not_proofs() {
        let src = "example :\n  let F := fun k => Nat.choose (k + 2) 2;\n  ∀ n : ℕ, 2 ≤ n → F n > 0 := by\n  simp";
        let d = parse_declaration(src).unwrap();
        assert!(d.statement.goal.starts_with("let F := fun k"));
        assert!(d.statement.goal.ends_with("F n > 0"));
        assert_eq!(d.proof.as_deref(), Some("by\n  simp"));
    }

    #[test]
    fn cons_is_not_a_separator() {
        let s = parse_statement("example (l : List ℕ) : (1 :: l).length = l.length + 1").unwrap();
        assert_eq!(s.goal, "(1 :: l).length = l.length + 1");
        let s = parse_statement("example (a : ℕ) (l : List ℕ) : a :: l ≠ []").unwrap();
        assert_eq!(s.goal, "a :: l ≠ []");
    }

    #[test]
    fn error_paths() {
        assert_eq!(parse_statement("   "), Err(ParseError::EmptyInput));
        assert!(matches!(
            parse_statement("example (a : ℝ : a = a"),
            Err(ParseError::UnbalancedBrackets { .. })
        ));
        assert!(matches!(
            parse_statement("example (a : ℝ)) : a = a"),
            Err(ParseError::UnbalancedBrackets { .. })
        ));
        assert_eq!(
            parse_statement("example (a : ℝ)"),
            Err(ParseError::NoGoalSeparator)
        );
        assert_eq!(
            parse_statement("example (a : ℝ) :   "),
            Err(ParseError::EmptyGoal)
        );
        assert_eq!(
            parse_statement("example (a : ℝ) : := by simp"),
            Err(ParseError::EmptyGoal)
        );
        assert!(matches!(
            parse_statement("def f : ℕ := 1"),
            Err(ParseError::UnknownDeclaration { .. })
        ));
        assert!(matches!(
            parse_statement("theorem : True"),
            Err(ParseError::MissingName { .. })
        ));
        assert_eq!(
            parse_statement("example := trivial"),
            Err(ParseError::NoGoalSeparator)
        );
    }

    #[test]
    fn strings_and_comments_are_opaque() {
        let s =
            parse_statement("example (s : String) (h : s = \"a : (b\") : s.length = 5").unwrap();
        assert_eq!(s.goal, "s.length = 5");
        let s =
            parse_statement("-- a comment : with colon\nexample (x : ℕ) -- (unclosed\n : x = x")
                .unwrap();
        assert_eq!(s.goal, "x = x");
        assert!(s.raw.starts_with("example"));
    }

    #[test]
    fn hash_ignores_whitespace_and_names() {
        let a = parse_statement("example   (a : ℝ) :  a = a").unwrap();
        let b = parse_statement("example (a : ℝ) : a = a").unwrap();
        let c = parse_statement("theorem foo (a : ℝ) : a = a").unwrap();
        assert_eq!(a.normalize_for_hash(), b.normalize_for_hash());
        assert_eq!(b.normalize_for_hash(), c.normalize_for_hash());
        assert_eq!(a.content_hash(), c.content_hash());
        assert_eq!(b.normalize_for_hash(), "example (a : ℝ) : a = a");
    }

    #[test]
    fn corpus_validation() {
        let ok = vec![
            InformalProblem::new("a", "x"),
            InformalProblem::new("b", "y"),
        ];
        assert!(validate_corpus(&ok).is_ok());
        let dup = vec![
            InformalProblem::new("a", "x"),
            InformalProblem::new("a", "y"),
        ];
        assert_eq!(
            validate_corpus(&dup),
            Err(ProblemError::DuplicateId("a".into()))
        );
        assert_eq!(
            InformalProblem::new("c", "  \n").validate(),
            Err(ProblemError::EmptyText("c".into()))
        );
    }
}
