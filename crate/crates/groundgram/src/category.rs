//! CCG categories and the combinator algebra over them.
//!
//! Categories are either atoms (`S`, `N`, `NP`, ...) or complex functors
//! `result/argument` (forward, argument to the right) and `result\argument`
//! (backward, argument to the left). Parsing is left-associative, so
//! `S\NP/NP` reads as `(S\NP)/NP`; printing always parenthesizes complex
//! subcategories, yielding `(S\NP)/NP` as the canonical form.
//!
//! Besides the forward combinators (application, composition, type-raising)
//! and their backward mirrors, this module provides the inverse "expansion"
//! view: given a parent category, enumerate the child pairs that recombine
//! to it. The generative induction model is built on that view.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Slash direction of a complex category.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Slash {
    Forward,
    Backward,
}

impl Slash {
    pub fn symbol(self) -> char {
        match self {
            Slash::Forward => '/',
            Slash::Backward => '\\',
        }
    }
}

/// A CCG syntactic category: an atom or `result slash argument`.
///
/// Structural equality is the only identity notion; there are no
/// unification variables at this layer.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Category {
    Atom(String),
    Complex {
        result: Box<Category>,
        slash: Slash,
        argument: Box<Category>,
    },
}

impl Category {
    pub fn atom(name: impl Into<String>) -> Category {
        Category::Atom(name.into())
    }

    pub fn complex(result: Category, slash: Slash, argument: Category) -> Category {
        Category::Complex {
            result: Box::new(result),
            slash,
            argument: Box::new(argument),
        }
    }

    /// `result/argument`
    pub fn forward(result: Category, argument: Category) -> Category {
        Category::complex(result, Slash::Forward, argument)
    }

    /// `result\argument`
    pub fn backward(result: Category, argument: Category) -> Category {
        Category::complex(result, Slash::Backward, argument)
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, Category::Atom(_))
    }

    /// Nesting depth: atoms have depth 1, a complex category is one deeper
    /// than its deepest part.
    pub fn depth(&self) -> usize {
        match self {
            Category::Atom(_) => 1,
            Category::Complex {
                result, argument, ..
            } => 1 + result.depth().max(argument.depth()),
        }
    }

    /// Number of outermost arguments along the result spine.
    pub fn arity(&self) -> usize {
        match self {
            Category::Atom(_) => 0,
            Category::Complex { result, .. } => 1 + result.arity(),
        }
    }

    /// Canonical notation string; `parse_category` round-trips it.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Atom(a) => f.write_str(a),
            Category::Complex {
                result,
                slash,
                argument,
            } => {
                // Complex subcategories are parenthesized on both sides,
                // e.g. (S\NP)/NP.
                if result.is_atom() {
                    write!(f, "{}", result)?;
                } else {
                    write!(f, "({})", result)?;
                }
                f.write_char(slash.symbol())?;
                if argument.is_atom() {
                    write!(f, "{}", argument)
                } else {
                    write!(f, "({})", argument)
                }
            }
        }
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Category, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

impl std::str::FromStr for Category {
    type Err = CategoryError;

    /// Permissive parse: any identifier is accepted as an atom and no
    /// depth/arity limits are enforced. Use [`parse_category`] for the
    /// config-checked entry point.
    fn from_str(s: &str) -> Result<Category, CategoryError> {
        Parser::new(s).parse(None)
    }
}

#[derive(Error, Debug, PartialEq)]
pub enum CategoryError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown atom `{0}`")]
    UnknownAtom(String),
    #[error("category `{cat}` exceeds limits (depth {depth} > {max_depth} or arity {arity} > {max_arity})")]
    Limit {
        cat: String,
        depth: usize,
        max_depth: usize,
        arity: usize,
        max_arity: usize,
    },
}

/// Parse category notation, validating atoms and depth/arity limits
/// against `cfg`.
pub fn parse_category(text: &str, cfg: &RuleConfig) -> Result<Category, CategoryError> {
    let cat = Parser::new(text).parse(Some(&cfg.atoms))?;
    cfg.check_limits(&cat)?;
    Ok(cat)
}

/// Canonical printing of a category (same as `Display`).
pub fn print_category(cat: &Category) -> String {
    cat.to_string()
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn parse(mut self, atoms: Option<&BTreeSet<String>>) -> Result<Category, CategoryError> {
        let cat = self.chain(atoms)?;
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return Err(self.err("trailing input"));
        }
        Ok(cat)
    }

    fn err(&self, msg: &str) -> CategoryError {
        CategoryError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn chain(&mut self, atoms: Option<&BTreeSet<String>>) -> Result<Category, CategoryError> {
        let mut cat = self.term(atoms)?;
        loop {
            self.skip_ws();
            let slash = match self.bytes.get(self.pos) {
                Some(b'/') => Slash::Forward,
                Some(b'\\') => Slash::Backward,
                _ => return Ok(cat),
            };
            self.pos += 1;
            let arg = self.term(atoms)?;
            cat = Category::complex(cat, slash, arg);
        }
    }

    fn term(&mut self, atoms: Option<&BTreeSet<String>>) -> Result<Category, CategoryError> {
        self.skip_ws();
        match self.bytes.get(self.pos) {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.chain(atoms)?;
                self.skip_ws();
                if self.bytes.get(self.pos) != Some(&b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_alphanumeric() || *c == b'_' => {
                let start = self.pos;
                while self
                    .bytes
                    .get(self.pos)
                    .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
                {
                    self.pos += 1;
                }
                let name = &self.text[start..self.pos];
                if let Some(atoms) = atoms {
                    if !atoms.contains(name) {
                        return Err(CategoryError::UnknownAtom(name.to_string()));
                    }
                }
                Ok(Category::atom(name))
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }
}

/// The combinator families without their parameters. The enum order is the
/// canonical kind order used for deterministic enumeration and tie-breaks.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum CombinatorKind {
    Lex,
    FwdApp,
    BwdApp,
    FwdComp,
    BwdComp,
    /// Type-raise of the left child fused with forward application:
    /// `Y  X\Y -> X` generated as `Y -> X/(X\Y)` followed by `>`.
    FwdRaiseApp,
    /// Type-raise of the right child fused with backward application:
    /// `X/Y  Y -> X` generated as `Y -> X\(X/Y)` followed by `<`.
    BwdRaiseApp,
    FwdRaise,
    BwdRaise,
}

impl CombinatorKind {
    pub const ALL: [CombinatorKind; 9] = [
        CombinatorKind::Lex,
        CombinatorKind::FwdApp,
        CombinatorKind::BwdApp,
        CombinatorKind::FwdComp,
        CombinatorKind::BwdComp,
        CombinatorKind::FwdRaiseApp,
        CombinatorKind::BwdRaiseApp,
        CombinatorKind::FwdRaise,
        CombinatorKind::BwdRaise,
    ];

    pub fn is_unary(self) -> bool {
        matches!(self, CombinatorKind::FwdRaise | CombinatorKind::BwdRaise)
    }

    pub fn is_binary(self) -> bool {
        !self.is_unary() && self != CombinatorKind::Lex
    }

    pub fn label(self) -> &'static str {
        match self {
            CombinatorKind::Lex => "Lex",
            CombinatorKind::FwdApp => "FwdApp",
            CombinatorKind::BwdApp => "BwdApp",
            CombinatorKind::FwdComp => "FwdComp",
            CombinatorKind::BwdComp => "BwdComp",
            CombinatorKind::FwdRaiseApp => "FwdRaiseApp",
            CombinatorKind::BwdRaiseApp => "BwdRaiseApp",
            CombinatorKind::FwdRaise => "FwdRaise",
            CombinatorKind::BwdRaise => "BwdRaise",
        }
    }

    /// Rank in the canonical kind order.
    pub fn rank(self) -> u8 {
        CombinatorKind::ALL.iter().position(|k| *k == self).unwrap() as u8
    }
}

impl fmt::Display for CombinatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A combinator instance. Raise kinds carry their target `X`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Combinator {
    Lex,
    FwdApp,
    BwdApp,
    FwdComp,
    BwdComp,
    FwdRaiseApp { target: Category },
    BwdRaiseApp { target: Category },
    FwdRaise { target: Category },
    BwdRaise { target: Category },
}

impl Combinator {
    pub fn kind(&self) -> CombinatorKind {
        match self {
            Combinator::Lex => CombinatorKind::Lex,
            Combinator::FwdApp => CombinatorKind::FwdApp,
            Combinator::BwdApp => CombinatorKind::BwdApp,
            Combinator::FwdComp => CombinatorKind::FwdComp,
            Combinator::BwdComp => CombinatorKind::BwdComp,
            Combinator::FwdRaiseApp { .. } => CombinatorKind::FwdRaiseApp,
            Combinator::BwdRaiseApp { .. } => CombinatorKind::BwdRaiseApp,
            Combinator::FwdRaise { .. } => CombinatorKind::FwdRaise,
            Combinator::BwdRaise { .. } => CombinatorKind::BwdRaise,
        }
    }
}

/// Active combinator subset, atom inventory, raise targets, and the hard
/// depth/arity caps applied at every combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleConfig {
    pub enabled: BTreeSet<CombinatorKind>,
    pub atoms: BTreeSet<String>,
    pub raise_targets: BTreeSet<Category>,
    pub raisable: BTreeSet<Category>,
    pub max_depth: usize,
    pub max_arity: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            enabled: [CombinatorKind::FwdApp, CombinatorKind::BwdApp]
                .into_iter()
                .collect(),
            atoms: ["S", "N", "NP", "Conj"]
                .into_iter()
                .map(String::from)
                .collect(),
            raise_targets: [Category::atom("S")].into_iter().collect(),
            raisable: [Category::atom("NP"), Category::atom("N")]
                .into_iter()
                .collect(),
            max_depth: 4,
            max_arity: 3,
        }
    }
}

impl RuleConfig {
    /// Application only, with the default atom inventory.
    pub fn app_only() -> Self {
        RuleConfig::default()
    }

    pub fn with_kinds(kinds: impl IntoIterator<Item = CombinatorKind>) -> Self {
        RuleConfig {
            enabled: kinds.into_iter().collect(),
            ..RuleConfig::default()
        }
    }

    pub fn is_enabled(&self, kind: CombinatorKind) -> bool {
        self.enabled.contains(&kind)
    }

    pub fn within_limits(&self, cat: &Category) -> bool {
        cat.depth() <= self.max_depth && cat.arity() <= self.max_arity
    }

    pub fn check_limits(&self, cat: &Category) -> Result<(), CategoryError> {
        if self.within_limits(cat) {
            Ok(())
        } else {
            Err(CategoryError::Limit {
                cat: cat.to_string(),
                depth: cat.depth(),
                max_depth: self.max_depth,
                arity: cat.arity(),
                max_arity: self.max_arity,
            })
        }
    }

    /// Raise targets must be configured when any raise-mediated kind is on.
    pub fn validate(&self) -> Result<(), String> {
        let uses_raise = self.enabled.iter().any(|k| {
            matches!(
                k,
                CombinatorKind::FwdRaise
                    | CombinatorKind::BwdRaise
                    | CombinatorKind::FwdRaiseApp
                    | CombinatorKind::BwdRaiseApp
            )
        });
        if uses_raise && self.raise_targets.is_empty() {
            return Err("raise combinators enabled but raise_targets is empty".to_string());
        }
        if self.max_depth == 0 || self.max_arity == 0 {
            return Err("max_depth and max_arity must be positive".to_string());
        }
        Ok(())
    }
}

/// Result of applying a combinator schema to candidate children.
///
/// `OverLimit` is distinguished from `Mismatch` so that callers can report
/// limit-suppressed combinations in diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub enum CombineOutcome {
    Combined(Category),
    Mismatch,
    OverLimit,
}

impl CombineOutcome {
    pub fn into_category(self) -> Option<Category> {
        match self {
            CombineOutcome::Combined(c) => Some(c),
            _ => None,
        }
    }
}

/// Apply `rule` to the children. Binary kinds take `left` and `Some(right)`;
/// unary raise kinds take only `left`. Returns the result exactly when the
/// schema unifies structurally (schema variables bind whole subcategories).
pub fn combine(
    rule: &Combinator,
    left: &Category,
    right: Option<&Category>,
    cfg: &RuleConfig,
) -> CombineOutcome {
    let result = match (rule, right) {
        // X/Y  Y -> X
        (Combinator::FwdApp, Some(right)) => match left {
            Category::Complex {
                result,
                slash: Slash::Forward,
                argument,
            } if argument.as_ref() == right => (**result).clone(),
            _ => return CombineOutcome::Mismatch,
        },
        // Y  X\Y -> X
        (Combinator::BwdApp, Some(right)) => match right {
            Category::Complex {
                result,
                slash: Slash::Backward,
                argument,
            } if argument.as_ref() == left => (**result).clone(),
            _ => return CombineOutcome::Mismatch,
        },
        // X/Y  Y/Z -> X/Z
        (Combinator::FwdComp, Some(right)) => match (left, right) {
            (
                Category::Complex {
                    result: x,
                    slash: Slash::Forward,
                    argument: y,
                },
                Category::Complex {
                    result: y2,
                    slash: Slash::Forward,
                    argument: z,
                },
            ) if y == y2 => Category::forward((**x).clone(), (**z).clone()),
            _ => return CombineOutcome::Mismatch,
        },
        // Y\Z  X\Y -> X\Z
        (Combinator::BwdComp, Some(right)) => match (left, right) {
            (
                Category::Complex {
                    result: y,
                    slash: Slash::Backward,
                    argument: z,
                },
                Category::Complex {
                    result: x,
                    slash: Slash::Backward,
                    argument: y2,
                },
            ) if y == y2 => Category::backward((**x).clone(), (**z).clone()),
            _ => return CombineOutcome::Mismatch,
        },
        // Y  X\Y -> X  (left child raised to X/(X\Y), then forward application)
        (Combinator::FwdRaiseApp { target }, Some(right)) => {
            if !cfg.raise_targets.contains(target) || !cfg.raisable.contains(left) {
                return CombineOutcome::Mismatch;
            }
            match right {
                Category::Complex {
                    result,
                    slash: Slash::Backward,
                    argument,
                } if result.as_ref() == target && argument.as_ref() == left => target.clone(),
                _ => return CombineOutcome::Mismatch,
            }
        }
        // X/Y  Y -> X  (right child raised to X\(X/Y), then backward application)
        (Combinator::BwdRaiseApp { target }, Some(right)) => {
            if !cfg.raise_targets.contains(target) || !cfg.raisable.contains(right) {
                return CombineOutcome::Mismatch;
            }
            match left {
                Category::Complex {
                    result,
                    slash: Slash::Forward,
                    argument,
                } if result.as_ref() == target && argument.as_ref() == right => target.clone(),
                _ => return CombineOutcome::Mismatch,
            }
        }
        // Y -> X/(X\Y)
        (Combinator::FwdRaise { target }, None) => {
            if !cfg.raise_targets.contains(target) || !cfg.raisable.contains(left) {
                return CombineOutcome::Mismatch;
            }
            Category::forward(
                target.clone(),
                Category::backward(target.clone(), left.clone()),
            )
        }
        // Y -> X\(X/Y)
        (Combinator::BwdRaise { target }, None) => {
            if !cfg.raise_targets.contains(target) || !cfg.raisable.contains(left) {
                return CombineOutcome::Mismatch;
            }
            Category::backward(
                target.clone(),
                Category::forward(target.clone(), left.clone()),
            )
        }
        (Combinator::Lex, _) => return CombineOutcome::Mismatch,
        _ => return CombineOutcome::Mismatch,
    };
    if cfg.within_limits(&result) {
        CombineOutcome::Combined(result)
    } else {
        CombineOutcome::OverLimit
    }
}

/// One inverse expansion of a parent category: the children recombine to
/// the parent under `comb`. `right` is absent for unary raise expansions.
#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub comb: Combinator,
    pub argument: Category,
    pub left: Category,
    pub right: Option<Category>,
}

/// Enumerate, for every enabled combinator kind and every argument in
/// `arg_pool`, the unique child pair whose combination reproduces `parent`.
/// Entries violating depth/arity limits are omitted. Order is deterministic:
/// combinator kind rank, then argument canonical string.
pub fn enumerate_expansions(
    parent: &Category,
    cfg: &RuleConfig,
    arg_pool: &BTreeSet<Category>,
) -> Vec<Expansion> {
    let mut sorted_pool: Vec<&Category> = arg_pool.iter().collect();
    sorted_pool.sort_by(|a, b| a.canonical().cmp(&b.canonical()));

    let mut out = Vec::new();
    for kind in CombinatorKind::ALL {
        if !cfg.is_enabled(kind) {
            continue;
        }
        for y in &sorted_pool {
            let y = (*y).clone();
            let candidate = match kind {
                CombinatorKind::FwdApp => Some(Expansion {
                    comb: Combinator::FwdApp,
                    left: Category::forward(parent.clone(), y.clone()),
                    right: Some(y.clone()),
                    argument: y,
                }),
                CombinatorKind::BwdApp => Some(Expansion {
                    comb: Combinator::BwdApp,
                    left: y.clone(),
                    right: Some(Category::backward(parent.clone(), y.clone())),
                    argument: y,
                }),
                CombinatorKind::FwdComp => match parent {
                    Category::Complex {
                        result: x,
                        slash: Slash::Forward,
                        argument: z,
                    } => Some(Expansion {
                        comb: Combinator::FwdComp,
                        left: Category::forward((**x).clone(), y.clone()),
                        right: Some(Category::forward(y.clone(), (**z).clone())),
                        argument: y,
                    }),
                    _ => None,
                },
                CombinatorKind::BwdComp => match parent {
                    Category::Complex {
                        result: x,
                        slash: Slash::Backward,
                        argument: z,
                    } => Some(Expansion {
                        comb: Combinator::BwdComp,
                        left: Category::backward(y.clone(), (**z).clone()),
                        right: Some(Category::backward((**x).clone(), y.clone())),
                        argument: y,
                    }),
                    _ => None,
                },
                CombinatorKind::FwdRaiseApp => {
                    if cfg.raise_targets.contains(parent) && cfg.raisable.contains(&y) {
                        Some(Expansion {
                            comb: Combinator::FwdRaiseApp {
                                target: parent.clone(),
                            },
                            left: y.clone(),
                            right: Some(Category::backward(parent.clone(), y.clone())),
                            argument: y,
                        })
                    } else {
                        None
                    }
                }
                CombinatorKind::BwdRaiseApp => {
                    if cfg.raise_targets.contains(parent) && cfg.raisable.contains(&y) {
                        Some(Expansion {
                            comb: Combinator::BwdRaiseApp {
                                target: parent.clone(),
                            },
                            left: Category::forward(parent.clone(), y.clone()),
                            right: Some(y.clone()),
                            argument: y,
                        })
                    } else {
                        None
                    }
                }
                // Unary: parent must already have the raised shape X/(X\y)
                // or X\(X/y).
                CombinatorKind::FwdRaise => match parent {
                    Category::Complex {
                        result: x,
                        slash: Slash::Forward,
                        argument,
                    } => match argument.as_ref() {
                        Category::Complex {
                            result: x2,
                            slash: Slash::Backward,
                            argument: inner,
                        } if x == x2
                            && inner.as_ref() == &y
                            && cfg.raise_targets.contains(x)
                            && cfg.raisable.contains(&y) =>
                        {
                            Some(Expansion {
                                comb: Combinator::FwdRaise {
                                    target: (**x).clone(),
                                },
                                left: y.clone(),
                                right: None,
                                argument: y,
                            })
                        }
                        _ => None,
                    },
                    _ => None,
                },
                CombinatorKind::BwdRaise => match parent {
                    Category::Complex {
                        result: x,
                        slash: Slash::Backward,
                        argument,
                    } => match argument.as_ref() {
                        Category::Complex {
                            result: x2,
                            slash: Slash::Forward,
                            argument: inner,
                        } if x == x2
                            && inner.as_ref() == &y
                            && cfg.raise_targets.contains(x)
                            && cfg.raisable.contains(&y) =>
                        {
                            Some(Expansion {
                                comb: Combinator::BwdRaise {
                                    target: (**x).clone(),
                                },
                                left: y.clone(),
                                right: None,
                                argument: y,
                            })
                        }
                        _ => None,
                    },
                    _ => None,
                },
                CombinatorKind::Lex => None,
            };
            let Some(exp) = candidate else { continue };
            if !cfg.within_limits(&exp.left)
                || exp.right.as_ref().is_some_and(|r| !cfg.within_limits(r))
            {
                continue;
            }
            debug_assert_eq!(
                combine(&exp.comb, &exp.left, exp.right.as_ref(), cfg),
                CombineOutcome::Combined(parent.clone())
            );
            out.push(exp);
        }
    }
    out
}
