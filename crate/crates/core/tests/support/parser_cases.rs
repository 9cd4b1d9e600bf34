//! Hand-checked decompositions of competition-style Lean statements, shared
//! by the parser tests and the acceptance suite.

#![allow(dead_code)]

use synthproof::statement::{
    negate_statement, parse_declaration, parse_statement, rewrite_goal_to_false, DeclarationKind,
};

pub struct Case {
    input: &'static str,
    kind: DeclarationKind,
    name: Option<&'static str>,
    binders: &'static str,
    goal: &'static str,
    has_proof: bool,
}

const fn case(
    input: &'static str,
    kind: DeclarationKind,
    name: Option<&'static str>,
    binders: &'static str,
    goal: &'static str,
    has_proof: bool,
) -> Case {
    Case {
        input,
        kind,
        name,
        binders,
        goal,
        has_proof,
    }
}

use DeclarationKind::{Example, Lemma, Theorem};

pub const THETA: &str = "example (θ : ℝ) (h₀ : ∀ z : ℂ, z ^ 2 = -1 ∧ z ^ 3 = -1 ∧ z ^ 6 = 1) (h₁ : Real.tan θ = 2 * Real.sqrt 3) : θ = 5 * Real.pi / 3";

const DET_INCONSISTENT: &str = "example (D : ℝ) (h₀ : ∀ a b c : ℝ, a ≠ 0 ∧ b ≠ 0 ∧ c ≠ 0 →
  Matrix.det ![![a, b, c], ![1, 4, 9], ![3, 1, 2]] = D) : D ^ 2 = 154";

pub fn corpus() -> Vec<Case> {
    vec![
        case(
            THETA,
            Example,
            None,
            "(θ : ℝ) (h₀ : ∀ z : ℂ, z ^ 2 = -1 ∧ z ^ 3 = -1 ∧ z ^ 6 = 1) (h₁ : Real.tan θ = 2 * Real.sqrt 3)",
            "θ = 5 * Real.pi / 3",
            false,
        ),
        case(
            "example (a b : ℝ) :\n  Matrix.det ![![1, Real.cos (a - b), Real.cos a], ![Real.cos (a - b), 1, Real.cos b], ![Real.cos a, Real.cos b, 1]] = 0 ",
            Example,
            None,
            "(a b : ℝ)",
            "Matrix.det ![![1, Real.cos (a - b), Real.cos a], ![Real.cos (a - b), 1, Real.cos b], ![Real.cos a, Real.cos b, 1]] = 0",
            false,
        ),
        case(
            DET_INCONSISTENT,
            Example,
            None,
            "(D : ℝ) (h₀ : ∀ a b c : ℝ, a ≠ 0 ∧ b ≠ 0 ∧ c ≠ 0 →\n  Matrix.det ![![a, b, c], ![1, 4, 9], ![3, 1, 2]] = D)",
            "D ^ 2 = 154",
            false,
        ),
        case(
            "example (a b c : ℝ) (h₀ : a ≠ 0 ∧ b ≠ 0 ∧ c ≠ 0) :\n  let D := Matrix.det ![![a, b, c], ![1, 4, 9], ![3, 1, 2]];\n  D ^ 2 = 154",
            Example,
            None,
            "(a b c : ℝ) (h₀ : a ≠ 0 ∧ b ≠ 0 ∧ c ≠ 0)",
            "let D := Matrix.det ![![a, b, c], ![1, 4, 9], ![3, 1, 2]];\n  D ^ 2 = 154",
            false,
        ),
        case(
            "example (a : ℝ) (f : ℝ → ℝ) (h₀ : ∀ x, f x = x ^ 3 - a * x - 1) :\n    (∀ x, f x ≤ 0 → x ∈ Set.Iio (-1) ∪ Set.Ioi 1) → a = 3 := by\n  intro h₁\n  have h₂ := h₁ 0\n  simp [h₀] at h₂\n  linarith",
            Example,
            None,
            "(a : ℝ) (f : ℝ → ℝ) (h₀ : ∀ x, f x = x ^ 3 - a * x - 1)",
            "(∀ x, f x ≤ 0 → x ∈ Set.Iio (-1) ∪ Set.Ioi 1) → a = 3",
            true,
        ),
        case(
            "example : \n  let F := fun k => Nat.choose (k + 2) 2;\n  let f := fun k => Nat.choose (k + 1) 1;\n  ∀ n : ℕ, 2 ≤ n → ∃ k : ℕ, f k = (n - 1) * n / 2 → (∃ m : ℕ, F m = (n - 1) * n / 2 → m = k) := by\n  simp [Nat.choose, Nat.mul_sub_left_distrib, Nat.sub_sub, Nat.mul_one]\n  aesop",
            Example,
            None,
            "",
            "let F := fun k => Nat.choose (k + 2) 2;\n  let f := fun k => Nat.choose (k + 1) 1;\n  ∀ n : ℕ, 2 ≤ n → ∃ k : ℕ, f k = (n - 1) * n / 2 → (∃ m : ℕ, F m = (n - 1) * n / 2 → m = k)",
            true,
        ),
        case(
            "example (a b c : ℝ × ℝ × ℝ)\n  (h₀ : a.1 * b.1 + a.2.1 * b.2.1 + a.2.2 * b.2.2 = -3)\n  (h₁ : a.1 * c.1 + a.2.1 * c.2.1 + a.2.2 * c.2.2 = 4)\n  (h₂ : b.1 * c.1 + b.2.1 * c.2.1 + b.2.2 * c.2.2 = 6)\n  : b.1 * (7 * c.1 - 2 * a.1) + b.2.1 * (7 * c.2.1 - 2 * a.2.1) + b.2.2 * (7 * c.2.2 - 2 * a.2.2) = 48 := by\n  linarith [h₀, h₁, h₂]",
            Example,
            None,
            "(a b c : ℝ × ℝ × ℝ)\n  (h₀ : a.1 * b.1 + a.2.1 * b.2.1 + a.2.2 * b.2.2 = -3)\n  (h₁ : a.1 * c.1 + a.2.1 * c.2.1 + a.2.2 * c.2.2 = 4)\n  (h₂ : b.1 * c.1 + b.2.1 * c.2.1 + b.2.2 * c.2.2 = 6)",
            "b.1 * (7 * c.1 - 2 * a.1) + b.2.1 * (7 * c.2.1 - 2 * a.2.1) + b.2.2 * (7 * c.2.2 - 2 * a.2.2) = 48",
            true,
        ),
        case(
            "theorem induction_1pxpownlt1pnx (x : ℝ) (n : ℕ) (h₀ : -1 < x) (h₁ : 0 < n)\n  : 1 + ↑n * x ≤ (1 + x) ^ (n : ℕ) := by\n  induction' h₁ with k h₁ <;> simp_all [Nat.succ_eq_add_one, pow_add, mul_add, add_assoc, add_comm, add_left_comm]\n  nlinarith [mul_self_nonneg (1 + x - 1)]",
            Theorem,
            Some("induction_1pxpownlt1pnx"),
            "(x : ℝ) (n : ℕ) (h₀ : -1 < x) (h₁ : 0 < n)",
            "1 + ↑n * x ≤ (1 + x) ^ (n : ℕ)",
            true,
        ),
        case(
            "theorem amc12b_2021_p4 (m a : ℕ) (h₀ : 0 < m ∧ 0 < a)\n  (h₁ : ↑m / ↑a = (3 : ℝ) / 4)\n  : (84 * ↑m + 70 * ↑a) / (↑m + ↑a) = (76 : ℝ)",
            Theorem,
            Some("amc12b_2021_p4"),
            "(m a : ℕ) (h₀ : 0 < m ∧ 0 < a)\n  (h₁ : ↑m / ↑a = (3 : ℝ) / 4)",
            "(84 * ↑m + 70 * ↑a) / (↑m + ↑a) = (76 : ℝ)",
            false,
        ),
        case(
            "theorem amc12a_2002_p6 (n : ℕ) (h₀ : 0 < n)\n  : ∃ m, m > n ∧ ∃ p, m * p ≤ m + p := by\n  use n + 1\n  nlinarith",
            Theorem,
            Some("amc12a_2002_p6"),
            "(n : ℕ) (h₀ : 0 < n)",
            "∃ m, m > n ∧ ∃ p, m * p ≤ m + p",
            true,
        ),
        case(
            "theorem fimo_2009_algebra_p3\n  (f : ℕ → ℕ)\n  (h₀ : ∀ x y, ∃ (a b c : ℕ),\n    a = x ∧\n    b = f y ∧\n    c = f (y + f x - 1) ∧\n    a + b > c ∧\n    a + c > b ∧\n    b + c > a) :\n  ∀ x, f x = x := by \n  intro x\n  sorry",
            Theorem,
            Some("fimo_2009_algebra_p3"),
            "(f : ℕ → ℕ)\n  (h₀ : ∀ x y, ∃ (a b c : ℕ),\n    a = x ∧\n    b = f y ∧\n    c = f (y + f x - 1) ∧\n    a + b > c ∧\n    a + c > b ∧\n    b + c > a)",
            "∀ x, f x = x",
            true,
        ),
        case(
            "theorem fimo_2016_algebra_p5_1\n  (n : ℕ)\n  (h₀ : 0 < n) :\n  ∃ a b : ℕ, 0 < b ∧ b ≤ n.sqrt + 1 ∧ \n    n.sqrt ≤ a / b ∧ a / b ≤ (n + 1).sqrt := by\n  use n.sqrt, 1",
            Theorem,
            Some("fimo_2016_algebra_p5_1"),
            "(n : ℕ)\n  (h₀ : 0 < n)",
            "∃ a b : ℕ, 0 < b ∧ b ≤ n.sqrt + 1 ∧ \n    n.sqrt ≤ a / b ∧ a / b ≤ (n + 1).sqrt",
            true,
        ),
        case("example : True", Example, None, "", "True", false),
        case(
            "lemma mul_one' {α : Type} [Monoid α] (a : α) : a * 1 = a",
            Lemma,
            Some("mul_one'"),
            "{α : Type} [Monoid α] (a : α)",
            "a * 1 = a",
            false,
        ),
        case(
            "theorem cast_self (x : ℝ) : (x : ℂ).re = x",
            Theorem,
            Some("cast_self"),
            "(x : ℝ)",
            "(x : ℂ).re = x",
            false,
        ),
        case(
            "example : {x : ℝ | 0 < x} = Set.Ioi 0",
            Example,
            None,
            "",
            "{x : ℝ | 0 < x} = Set.Ioi 0",
            false,
        ),
        case(
            "example (p : ℕ × ℕ) (h : p = ⟨1, 2⟩) : p.1 = 1 := by simp [h]",
            Example,
            None,
            "(p : ℕ × ℕ) (h : p = ⟨1, 2⟩)",
            "p.1 = 1",
            true,
        ),
        case(
            "example (f : ℕ → ℕ) (h : ∀ n : ℕ, f n = n) : f 2 = 2",
            Example,
            None,
            "(f : ℕ → ℕ) (h : ∀ n : ℕ, f n = n)",
            "f 2 = 2",
            false,
        ),
        case(
            "theorem mathd_numbertheory_3 : (∑ x in Finset.range 10, (x + 1) ^ 2) % 10 = 5",
            Theorem,
            Some("mathd_numbertheory_3"),
            "",
            "(∑ x in Finset.range 10, (x + 1) ^ 2) % 10 = 5",
            false,
        ),
        case(
            "theorem mathd_algebra_478 (b h v : ℝ) (h₀ : 0 < b ∧ 0 < h ∧ 0 < v) (h₁ : v = 1 / 3 * (b * h))\n    (h₂ : b = 30) (h₃ : h = 13 / 2) : v = 65",
            Theorem,
            Some("mathd_algebra_478"),
            "(b h v : ℝ) (h₀ : 0 < b ∧ 0 < h ∧ 0 < v) (h₁ : v = 1 / 3 * (b * h))\n    (h₂ : b = 30) (h₃ : h = 13 / 2)",
            "v = 65",
            false,
        ),
    ]
}

fn head(c: &Case) -> String {
    let mut s = c.kind.keyword().to_string();
    if let Some(n) = c.name {
        s.push(' ');
        s.push_str(n);
    }
    if !c.binders.is_empty() {
        s.push(' ');
        s.push_str(c.binders);
    }
    s
}

pub fn corpus_has_twenty_cases() {
    assert_eq!(corpus().len(), 20);
}

pub fn decompositions() {
    for c in corpus() {
        let d = parse_declaration(c.input).unwrap_or_else(|e| panic!("{}: {e}", c.input));
        let s = &d.statement;
        assert_eq!(s.kind, c.kind, "{}", c.input);
        assert_eq!(s.name.as_deref(), c.name, "{}", c.input);
        assert_eq!(s.binders, c.binders, "{}", c.input);
        assert_eq!(s.goal, c.goal, "{}", c.input);
        assert_eq!(d.proof.is_some(), c.has_proof, "{}", c.input);
        assert!(!s.raw.contains(":= by"), "raw keeps no proof: {}", s.raw);
    }
}

pub fn false_rewrite_and_negation() {
    for c in corpus() {
        let s = parse_statement(c.input).unwrap();
        let f = rewrite_goal_to_false(&s);
        assert_eq!(f.raw, format!("{} : False", head(&c)));
        assert_eq!(f.binders, s.binders);
        assert_eq!(rewrite_goal_to_false(&f), f);
        let n = negate_statement(&s);
        assert_eq!(n.raw, format!("{} : ¬ ({})", head(&c), c.goal));
        // Rendered forms parse back to the same parts.
        for t in [&f, &n] {
            let back = parse_statement(&t.raw).unwrap();
            assert_eq!(
                (&back.binders, &back.goal, back.kind),
                (&t.binders, &t.goal, t.kind)
            );
        }
    }
}

pub fn inconsistent_hypotheses_false_forms() {
    let theta = rewrite_goal_to_false(&parse_statement(THETA).unwrap());
    assert_eq!(
        theta.with_tactic_proof("  simpa using h₀ 1"),
        "example (θ : ℝ) (h₀ : ∀ z : ℂ, z ^ 2 = -1 ∧ z ^ 3 = -1 ∧ z ^ 6 = 1) (h₁ : Real.tan θ = 2 * Real.sqrt 3) : False := by\n  simpa using h₀ 1"
    );
    let det = rewrite_goal_to_false(&parse_statement(DET_INCONSISTENT).unwrap());
    assert_eq!(
        det.raw,
        "example (D : ℝ) (h₀ : ∀ a b c : ℝ, a ≠ 0 ∧ b ≠ 0 ∧ c ≠ 0 →\n  Matrix.det ![![a, b, c], ![1, 4, 9], ![3, 1, 2]] = D) : False"
    );
}

pub fn rejects_malformed() {
    for bad in [
        "",
        "def f : ℕ := 1",
        "theorem : True",
        "example (x : ℕ : x = x",
        "example (x : ℕ)",
        "example (x : ℕ) :",
    ] {
        assert!(parse_statement(bad).is_err(), "{bad:?} should not parse");
    }
}

/// Runs every check; panics on the first mismatch.
pub fn check_all() {
    corpus_has_twenty_cases();
    decompositions();
    false_rewrite_and_negation();
    inconsistent_hypotheses_false_forms();
    rejects_malformed();
}
