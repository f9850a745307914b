//! Independent oracles shared by the integration and acceptance tests.
//!
//! Everything here is a second implementation: its own category
//! representation parsed from notation strings, its own combinator schema
//! matcher, and a brute-force derivation enumerator. None of it calls into
//! the library's algebra or parser beyond reading canonical strings.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fmt;

use groundgram::category::RuleConfig;
use groundgram::chart::Derivation;

/// Oracle-side category: parsed independently from notation.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum OCat {
    Atom(String),
    Fwd(Box<OCat>, Box<OCat>),
    Bwd(Box<OCat>, Box<OCat>),
}

impl OCat {
    pub fn parse(s: &str) -> OCat {
        let s = s.trim();
        let b = s.as_bytes();
        let mut depth = 0i32;
        // Rightmost top-level slash is the main operator under
        // left-associativity.
        for i in (0..b.len()).rev() {
            match b[i] {
                b')' => depth += 1,
                b'(' => depth -= 1,
                b'/' if depth == 0 => {
                    return OCat::Fwd(
                        Box::new(OCat::parse(&s[..i])),
                        Box::new(OCat::parse(&s[i + 1..])),
                    )
                }
                b'\\' if depth == 0 => {
                    return OCat::Bwd(
                        Box::new(OCat::parse(&s[..i])),
                        Box::new(OCat::parse(&s[i + 1..])),
                    )
                }
                _ => {}
            }
        }
        if s.starts_with('(') && s.ends_with(')') {
            OCat::parse(&s[1..s.len() - 1])
        } else {
            OCat::Atom(s.to_string())
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            OCat::Atom(_) => 1,
            OCat::Fwd(r, a) | OCat::Bwd(r, a) => 1 + r.depth().max(a.depth()),
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            OCat::Atom(_) => 0,
            OCat::Fwd(r, _) | OCat::Bwd(r, _) => 1 + r.arity(),
        }
    }

    fn is_atom(&self) -> bool {
        matches!(self, OCat::Atom(_))
    }
}

impl fmt::Display for OCat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = |c: &OCat| -> String {
            if c.is_atom() {
                c.to_string()
            } else {
                format!("({c})")
            }
        };
        match self {
            OCat::Atom(a) => f.write_str(a),
            OCat::Fwd(r, a) => write!(f, "{}/{}", part(r), part(a)),
            OCat::Bwd(r, a) => write!(f, "{}\\{}", part(r), part(a)),
        }
    }
}

/// Oracle-side rule configuration, converted once from the library config
/// via printed strings only.
#[derive(Clone, Debug)]
pub struct OConfig {
    pub kinds: Vec<String>,
    pub raise_targets: Vec<OCat>,
    pub raisable: Vec<OCat>,
    pub max_depth: usize,
    pub max_arity: usize,
}

impl OConfig {
    pub fn from_rules(rules: &RuleConfig) -> OConfig {
        OConfig {
            kinds: rules.enabled.iter().map(|k| k.label().to_string()).collect(),
            raise_targets: rules
                .raise_targets
                .iter()
                .map(|c| OCat::parse(&c.to_string()))
                .collect(),
            raisable: rules
                .raisable
                .iter()
                .map(|c| OCat::parse(&c.to_string()))
                .collect(),
            max_depth: rules.max_depth,
            max_arity: rules.max_arity,
        }
    }

    pub fn enabled(&self, kind: &str) -> bool {
        self.kinds.iter().any(|k| k == kind)
    }

    pub fn within_limits(&self, c: &OCat) -> bool {
        c.depth() <= self.max_depth && c.arity() <= self.max_arity
    }
}

/// Independent schema matcher. Binary kinds take `right`; raise kinds take
/// `target`. Returns the result exactly when the schema matches and the
/// result is within limits.
pub fn oracle_combine(
    kind: &str,
    left: &OCat,
    right: Option<&OCat>,
    target: Option<&OCat>,
    cfg: &OConfig,
) -> Option<OCat> {
    let result = match kind {
        "FwdApp" => match (left, right?) {
            (OCat::Fwd(x, y), r) if y.as_ref() == r => (**x).clone(),
            _ => return None,
        },
        "BwdApp" => match (left, right?) {
            (l, OCat::Bwd(x, y)) if y.as_ref() == l => (**x).clone(),
            _ => return None,
        },
        "FwdComp" => match (left, right?) {
            (OCat::Fwd(x, y), OCat::Fwd(y2, z)) if y == y2 => {
                OCat::Fwd(x.clone(), z.clone())
            }
            _ => return None,
        },
        "BwdComp" => match (left, right?) {
            (OCat::Bwd(y, z), OCat::Bwd(x, y2)) if y == y2 => {
                OCat::Bwd(x.clone(), z.clone())
            }
            _ => return None,
        },
        "FwdRaiseApp" => match right? {
            OCat::Bwd(x, y)
                if y.as_ref() == left
                    && cfg.raisable.contains(left)
                    && cfg.raise_targets.contains(x)
                    && target.is_none_or(|t| t == x.as_ref()) =>
            {
                (**x).clone()
            }
            _ => return None,
        },
        "BwdRaiseApp" => match left {
            OCat::Fwd(x, y)
                if Some(y.as_ref()) == right
                    && cfg.raisable.contains(right?)
                    && cfg.raise_targets.contains(x)
                    && target.is_none_or(|t| t == x.as_ref()) =>
            {
                (**x).clone()
            }
            _ => return None,
        },
        "FwdRaise" => {
            let t = target?;
            if !cfg.raisable.contains(left) || !cfg.raise_targets.contains(t) {
                return None;
            }
            OCat::Fwd(
                Box::new(t.clone()),
                Box::new(OCat::Bwd(Box::new(t.clone()), Box::new(left.clone()))),
            )
        }
        "BwdRaise" => {
            let t = target?;
            if !cfg.raisable.contains(left) || !cfg.raise_targets.contains(t) {
                return None;
            }
            OCat::Bwd(
                Box::new(t.clone()),
                Box::new(OCat::Fwd(Box::new(t.clone()), Box::new(left.clone()))),
            )
        }
        _ => return None,
    };
    if cfg.within_limits(&result) {
        Some(result)
    } else {
        None
    }
}

pub const BINARY_KINDS: [&str; 6] = [
    "FwdApp",
    "BwdApp",
    "FwdComp",
    "BwdComp",
    "FwdRaiseApp",
    "BwdRaiseApp",
];

/// Oracle derivation tree.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum OTree {
    Leaf {
        cat: OCat,
        token: String,
    },
    Unary {
        cat: OCat,
        kind: String,
        child: Box<OTree>,
    },
    Binary {
        cat: OCat,
        kind: String,
        left: Box<OTree>,
        right: Box<OTree>,
    },
}

impl OTree {
    pub fn cat(&self) -> &OCat {
        match self {
            OTree::Leaf { cat, .. } | OTree::Unary { cat, .. } | OTree::Binary { cat, .. } => cat,
        }
    }

    fn is_unary_root(&self) -> bool {
        matches!(self, OTree::Unary { .. })
    }

    /// Canonical identity string including combinator kinds, comparable to
    /// `derivation_key`.
    pub fn key(&self) -> String {
        match self {
            OTree::Leaf { cat, token } => format!("[{cat} {token}]"),
            OTree::Unary { cat, kind, child } => format!("[{cat} {kind} {}]", child.key()),
            OTree::Binary {
                cat,
                kind,
                left,
                right,
            } => format!("[{cat} {kind} {} {}]", left.key(), right.key()),
        }
    }

    /// Internal spans excluding width-1 and the full span, using leaf counts.
    pub fn spans(&self) -> std::collections::BTreeSet<(usize, usize)> {
        fn width(t: &OTree) -> usize {
            match t {
                OTree::Leaf { .. } => 1,
                OTree::Unary { child, .. } => width(child),
                OTree::Binary { left, right, .. } => width(left) + width(right),
            }
        }
        fn walk(
            t: &OTree,
            start: usize,
            full: usize,
            out: &mut std::collections::BTreeSet<(usize, usize)>,
        ) {
            let w = width(t);
            match t {
                OTree::Leaf { .. } => {}
                OTree::Unary { child, .. } => {
                    if w > 1 && !(start == 0 && w == full) {
                        out.insert((start, start + w));
                    }
                    walk(child, start, full, out);
                }
                OTree::Binary { left, right, .. } => {
                    if w > 1 && !(start == 0 && w == full) {
                        out.insert((start, start + w));
                    }
                    walk(left, start, full, out);
                    walk(right, start + width(left), full, out);
                }
            }
        }
        let mut out = std::collections::BTreeSet::new();
        walk(self, 0, width(self), &mut out);
        out
    }
}

/// The same identity string for a library derivation, so empirical sample
/// distributions can be compared against oracle enumerations.
pub fn derivation_key(d: &Derivation) -> String {
    match d {
        Derivation::Leaf { cat, token, .. } => format!("[{cat} {token}]"),
        Derivation::Unary { cat, comb, child } => format!(
            "[{cat} {} {}]",
            comb.kind().label(),
            derivation_key(child)
        ),
        Derivation::Binary {
            cat,
            comb,
            left,
            right,
        } => format!(
            "[{cat} {} {} {}]",
            comb.kind().label(),
            derivation_key(left),
            derivation_key(right)
        ),
    }
}

/// Brute-force enumeration of every derivation over `tokens`, mirroring the
/// declared semantics: binary combination over all splits, then one unary
/// raise applied to non-raised trees.
pub fn enumerate_trees(
    tokens: &[&str],
    lex: &[(&str, &str)],
    cfg: &OConfig,
) -> Vec<OTree> {
    let lex: Vec<(String, OCat)> = lex
        .iter()
        .map(|(t, c)| (t.to_string(), OCat::parse(c)))
        .collect();
    let n = tokens.len();
    let mut memo: HashMap<(usize, usize), Vec<OTree>> = HashMap::new();
    for width in 1..=n {
        for start in 0..=(n - width) {
            let end = start + width;
            let mut base: Vec<OTree> = Vec::new();
            if width == 1 {
                for (t, c) in &lex {
                    if t == tokens[start] && cfg.within_limits(c) {
                        base.push(OTree::Leaf {
                            cat: c.clone(),
                            token: t.clone(),
                        });
                    }
                }
            } else {
                for split in (start + 1)..end {
                    for lt in &memo[&(start, split)] {
                        for rt in &memo[&(split, end)] {
                            for kind in BINARY_KINDS {
                                if !cfg.enabled(kind) {
                                    continue;
                                }
                                if let Some(cat) =
                                    oracle_combine(kind, lt.cat(), Some(rt.cat()), None, cfg)
                                {
                                    base.push(OTree::Binary {
                                        cat,
                                        kind: kind.to_string(),
                                        left: Box::new(lt.clone()),
                                        right: Box::new(rt.clone()),
                                    });
                                }
                            }
                        }
                    }
                }
            }
            let mut full = base.clone();
            for kind in ["FwdRaise", "BwdRaise"] {
                if !cfg.enabled(kind) {
                    continue;
                }
                for t in &base {
                    if t.is_unary_root() {
                        continue;
                    }
                    for target in &cfg.raise_targets {
                        if let Some(cat) =
                            oracle_combine(kind, t.cat(), None, Some(target), cfg)
                        {
                            full.push(OTree::Unary {
                                cat,
                                kind: kind.to_string(),
                                child: Box::new(t.clone()),
                            });
                        }
                    }
                }
            }
            memo.insert((start, end), full);
        }
    }
    memo.remove(&(0, n)).unwrap()
}

/// Full-span derivations of one goal category.
pub fn enumerate_goal_trees(
    tokens: &[&str],
    lex: &[(&str, &str)],
    cfg: &OConfig,
    goal: &str,
) -> Vec<OTree> {
    let goal = OCat::parse(goal);
    enumerate_trees(tokens, lex, cfg)
        .into_iter()
        .filter(|t| t.cat() == &goal)
        .collect()
}

/// Fixed toy lexicon shared by the parser cross-checks.
pub const TOY_LEXICON: [(&str, &str); 5] = [
    ("the", "NP/N"),
    ("dog", "N"),
    ("it", "NP"),
    ("sleeps", "S\\NP"),
    ("sees", "(S\\NP)/NP"),
];

pub fn toy_lex() -> groundgram::chart::Lexicon {
    let mut lex = groundgram::chart::Lexicon::new();
    for (tok, cat) in TOY_LEXICON {
        lex.insert(tok, cat.parse().unwrap(), 1.0);
    }
    lex
}

/// The four rule configurations the parser cross-checks run under.
pub fn four_configs() -> Vec<RuleConfig> {
    use groundgram::category::CombinatorKind;
    vec![
        RuleConfig::app_only(),
        RuleConfig::with_kinds([
            CombinatorKind::FwdApp,
            CombinatorKind::BwdApp,
            CombinatorKind::FwdComp,
            CombinatorKind::BwdComp,
        ]),
        RuleConfig::with_kinds([
            CombinatorKind::FwdApp,
            CombinatorKind::BwdApp,
            CombinatorKind::FwdComp,
            CombinatorKind::BwdComp,
            CombinatorKind::FwdRaise,
            CombinatorKind::BwdRaise,
        ]),
        RuleConfig::with_kinds(CombinatorKind::ALL),
    ]
}

/// Every token sequence of the given length from the toy lexicon.
pub fn all_sentences(len: usize) -> Vec<Vec<&'static str>> {
    let mut out: Vec<Vec<&'static str>> = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                TOY_LEXICON.iter().map(move |(t, _)| {
                    let mut s = s.clone();
                    s.push(*t);
                    s
                })
            })
            .collect();
    }
    out
}

/// Chart count and unit-weight inside must both equal the oracle count.
pub fn check_sentence(tokens: &[&str], rules: &RuleConfig, goals: &[&str]) {
    use groundgram::category::Category;
    use groundgram::chart::{build_chart, UniformScorer};
    let lex = toy_lex();
    let ocfg = OConfig::from_rules(rules);
    let toks: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    for goal in goals {
        let goal_cat: Category = goal.parse().unwrap();
        let mut chart = build_chart(&toks, &lex, rules, &goal_cat).unwrap();
        let oracle = enumerate_goal_trees(tokens, &TOY_LEXICON, &ocfg, goal);
        assert_eq!(
            chart.count_derivations(&goal_cat),
            oracle.len() as u64,
            "count mismatch on {tokens:?} goal {goal}"
        );
        chart.compute_inside(&UniformScorer);
        match chart.inside(&goal_cat) {
            Some(log_inside) => {
                assert!(!oracle.is_empty());
                let count = oracle.len() as f64;
                assert!(
                    (log_inside.exp() - count).abs() / count < 1e-9,
                    "inside {} != count {} on {tokens:?} goal {goal}",
                    log_inside.exp(),
                    count
                );
            }
            None => assert!(oracle.is_empty(), "chart missed parses of {tokens:?}"),
        }
    }
}

/// Total variation distance between an empirical count map and a target
/// distribution over the same keys.
pub fn tv_distance(counts: &HashMap<String, usize>, target: &HashMap<String, f64>) -> f64 {
    let total: usize = counts.values().sum();
    let mut keys: std::collections::BTreeSet<&String> = counts.keys().collect();
    keys.extend(target.keys());
    let mut tv = 0.0;
    for k in keys {
        let p = counts.get(k).copied().unwrap_or(0) as f64 / total as f64;
        let q = target.get(k).copied().unwrap_or(0.0);
        tv += (p - q).abs();
    }
    tv / 2.0
}
