//! Shared domain types, answer canonicalization, and verdict parsing.
//!
//! Answer equality throughout the crate is exact string equality after
//! [`canonicalize_answer`]. There is no symbolic math equivalence: `1/2` and
//! `0.5` are different answers. The canonicalization rules are frozen (and
//! order-frozen) so that emitted files stay stable across versions.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Identifies one task (query) within a dataset or run.
///
/// Internally reference-counted: rollouts carry their task id, so clones
/// must be cheap.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(Arc<str>);

impl TaskId {
    pub fn new(id: impl AsRef<str>) -> Self {
        TaskId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<usize> for TaskId {
    fn from(index: usize) -> Self {
        TaskId(Arc::from(format!("task-{index:05}").as_str()))
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The three roles a sampled trajectory can play.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generation,
    Verification,
    Correction,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Generation => "generation",
            Role::Verification => "verification",
            Role::Correction => "correction",
        }
    }
}

/// A binary verifier judgment: did the verifier accept the solution?
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    /// "The answer is wrong" (v = 0).
    Wrong,
    /// "The answer is correct" (v = 1).
    Correct,
}

impl Verdict {
    pub fn as_bit(self) -> u8 {
        match self {
            Verdict::Wrong => 0,
            Verdict::Correct => 1,
        }
    }

    pub fn from_bool(accept: bool) -> Self {
        if accept {
            Verdict::Correct
        } else {
            Verdict::Wrong
        }
    }
}

/// The judgment a verification trajectory is trained toward.
///
/// Records targeting the pseudo-label should be judged `Correct`; records
/// targeting the contrastive negative should be judged `Incorrect`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Judgment {
    Correct,
    Incorrect,
}

impl Judgment {
    /// The verdict that earns the accuracy reward under this target.
    pub fn desired_verdict(self) -> Verdict {
        match self {
            Judgment::Correct => Verdict::Correct,
            Judgment::Incorrect => Verdict::Wrong,
        }
    }
}

/// A normalized answer string; the unit of answer equality.
///
/// Construct via [`canonicalize_answer`] (or [`CanonicalAnswer::empty`]).
/// Canonicalization is idempotent, so a `CanonicalAnswer` can be fed back
/// through the canonicalizer without changing. Clones are refcount bumps.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalAnswer(Arc<str>);

impl CanonicalAnswer {
    pub fn empty() -> Self {
        CanonicalAnswer(Arc::from(""))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for CanonicalAnswer {
    fn default() -> Self {
        CanonicalAnswer::empty()
    }
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One sampled trajectory.
///
/// Invariants:
/// - `Verification` rollouts carry a verdict and a parent (the solution they
///   judge); `Generation` rollouts carry neither.
/// - `Correction` rollouts carry a parent whose verdict is [`Verdict::Wrong`]
///   (the rejecting verification they revise from).
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub task: TaskId,
    pub role: Role,
    /// Canonical answer; empty for `Verification` rollouts.
    pub answer: CanonicalAnswer,
    /// Binary judgment; `Verification` rollouts only.
    pub verdict: Option<Verdict>,
    /// The rollout being verified (for `Verification`) or the rejecting
    /// verification being revised from (for `Correction`).
    pub parent: Option<Arc<Rollout>>,
    /// Whether the trajectory satisfied the structural output constraints.
    pub format_ok: bool,
    /// Latent trace quality in [0, 1]. Simulation only; ingested rollouts
    /// default to 0.
    pub quality: f64,
    /// Position within the trajectory's sampling sequence for its task and
    /// role. Used for deterministic tie-breaking and as a stable reference.
    pub sample_index: usize,
    /// The observed input the verifier saw when the verdict was sampled
    /// (quality plus observation noise). Simulation-only, `Verification`
    /// rollouts only; required to train the verifier on its own judgments.
    pub signal: Option<f64>,
}

impl Rollout {
    /// A fresh generation rollout.
    pub fn generation(
        task: TaskId,
        answer: CanonicalAnswer,
        quality: f64,
        sample_index: usize,
    ) -> Self {
        Rollout {
            task,
            role: Role::Generation,
            answer,
            verdict: None,
            parent: None,
            format_ok: true,
            quality,
            sample_index,
            signal: None,
        }
    }
}

/// Outcome of scanning a verifier response for its final judgment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParsedVerdict {
    Verdict(Verdict),
    /// Neither judgment phrase occurred; a value, not an error. Downstream
    /// consumers treat undecided as a rejection and count the occurrence.
    Undecided,
}

/// Reduce a raw answer text to its canonical form.
///
/// The rules, applied in this frozen order:
/// 1. lowercase and collapse whitespace runs to single spaces;
/// 2. extract the last `\boxed{...}` span if present, else the trailing text
///    after the final `answer is` marker, else keep the whole string
///    (repeated until neither marker remains);
/// 3. strip surrounding whitespace and markup (`$...$`, `\(...\)`,
///    `\[...\]`, `*` wrapping, trailing sentence punctuation, leading
///    separators);
/// 4. rewrite integer-valued decimals (`33.0` becomes `33`).
///
/// All other strings pass through byte-stable. Empty input yields the empty
/// canonical answer; this function never fails.
pub fn canonicalize_answer(raw: &str) -> CanonicalAnswer {
    let mut text = collapse_whitespace(&raw.to_lowercase());
    loop {
        let extracted = extract_answer_span(&text);
        if extracted == text {
            break;
        }
        text = extracted;
    }
    let stripped = strip_wrapping(&text);
    CanonicalAnswer(Arc::from(normalize_integer_decimal(&stripped).as_str()))
}

/// Scan a verifier response for its final judgment.
///
/// Returns `Correct` if the last judgment phrase in the text is
/// "the answer is correct", `Wrong` if it is "the answer is wrong", and
/// `Undecided` if neither occurs. Matching is case-insensitive and ignores
/// anything (such as trailing punctuation) after the phrase.
pub fn parse_verdict(raw: &str) -> ParsedVerdict {
    let haystack = raw.to_lowercase();
    let last_correct = haystack.rfind("the answer is correct");
    let last_wrong = haystack.rfind("the answer is wrong");
    match (last_correct, last_wrong) {
        (None, None) => ParsedVerdict::Undecided,
        (Some(_), None) => ParsedVerdict::Verdict(Verdict::Correct),
        (None, Some(_)) => ParsedVerdict::Verdict(Verdict::Wrong),
        (Some(c), Some(w)) => {
            if c > w {
                ParsedVerdict::Verdict(Verdict::Correct)
            } else {
                ParsedVerdict::Verdict(Verdict::Wrong)
            }
        }
    }
}

/// True if the text contains a boxed-answer marker; used to derive the
/// format reward for ingested generation and correction rollouts.
pub fn has_boxed_answer(raw: &str) -> bool {
    raw.to_lowercase().contains("\\boxed{")
}

fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_ws = true; // leading whitespace is dropped
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !in_ws {
                out.push(' ');
                in_ws = true;
            }
        } else {
            out.push(ch);
            in_ws = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// One extraction pass: prefer the last boxed span, then the final
/// "answer is" marker. Both strictly shrink the string, so the caller's
/// fixpoint loop terminates.
fn extract_answer_span(text: &str) -> String {
    if let Some(start) = text.rfind("\\boxed{") {
        let body = &text[start + "\\boxed{".len()..];
        let mut depth = 1usize;
        for (i, ch) in body.char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return body[..i].trim().to_string();
                    }
                }
                _ => {}
            }
        }
        // Unbalanced braces: take everything after the marker.
        return body.trim().to_string();
    }
    if let Some(pos) = text.rfind("answer is") {
        return text[pos + "answer is".len()..].trim().to_string();
    }
    text.to_string()
}

const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?'];
const LEADING_SEPARATORS: &[char] = &[':', ';', ',', '='];
const WRAP_PAIRS: &[(&str, &str)] = &[("$", "$"), ("\\(", "\\)"), ("\\[", "\\]"), ("*", "*")];

/// Strip surrounding markup to a fixpoint so that stripping is idempotent
/// even when layers alternate (e.g. `$42.$.`).
fn strip_wrapping(text: &str) -> String {
    let mut current = text.trim().to_string();
    loop {
        let mut next = current.trim().to_string();
        for (open, close) in WRAP_PAIRS {
            if next.len() > open.len() + close.len()
                && next.starts_with(open)
                && next.ends_with(close)
            {
                next = next[open.len()..next.len() - close.len()].trim().to_string();
            }
        }
        while next.ends_with(TRAILING_PUNCT) {
            next.pop();
        }
        while let Some(rest) = next.strip_prefix(LEADING_SEPARATORS) {
            next = rest.trim_start().to_string();
        }
        if next == current {
            return next;
        }
        current = next;
    }
}

/// Rewrite strings that denote an integer-valued decimal as plain integers.
/// Values outside the exactly-representable range pass through untouched.
fn normalize_integer_decimal(text: &str) -> String {
    if text.is_empty() {
        return String::new();
    }
    if let Ok(value) = text.parse::<f64>() {
        if value.is_finite() && value.fract() == 0.0 && value.abs() <= 9.0e15 {
            return format!("{}", value as i64);
        }
    }
    text.to_string()
}
