//! CKY-style bottom-up parsing into a packed derivation forest, with exact
//! derivation counting, inside weights, Viterbi extraction, and exact
//! top-down sampling of derivations.
//!
//! The chart keeps at most one item per (span, category); ambiguity lives in
//! the item's backpointers. Categories are interned into dense ids per chart
//! so the combination loops run on integers, with the structural
//! [`combine`](crate::category::combine) checks mirrored at the id level.
//!
//! Everything here is deterministic: cells are filled in (width, start)
//! order, splits ascending, combinator kinds in canonical order, and items
//! within a cell in insertion order, so identical inputs produce
//! bit-identical charts, weights, and samples.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::category::{Category, Combinator, CombinatorKind, RuleConfig, Slash};

/// Counting saturates at this cap instead of overflowing.
pub const COUNT_CAP: u64 = 1_000_000_000_000_000_000;

/// Token-or-tag lexicon: each symbol maps to weighted categories.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Lexicon {
    map: std::collections::BTreeMap<String, Vec<(Category, f64)>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Lexicon::default()
    }

    /// Weights must be finite and nonnegative.
    pub fn insert(&mut self, token: impl Into<String>, cat: Category, weight: f64) {
        assert!(
            weight.is_finite() && weight >= 0.0,
            "lexicon weight must be finite and nonnegative"
        );
        let entries = self.map.entry(token.into()).or_default();
        // Keep entries sorted by canonical category string.
        let key = cat.canonical();
        let pos = entries
            .binary_search_by(|(c, _)| c.canonical().cmp(&key))
            .unwrap_or_else(|p| p);
        entries.insert(pos, (cat, weight));
    }

    pub fn entries(&self, token: &str) -> Option<&[(Category, f64)]> {
        self.map.get(token).map(|v| v.as_slice())
    }

    pub fn log_weight(&self, token: &str, cat: &Category) -> Option<f64> {
        self.map
            .get(token)?
            .iter()
            .find(|(c, _)| c == cat)
            .map(|(_, w)| w.ln())
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }
}

/// Scores expansions for inside weights, Viterbi, and sampling. All weights
/// are log-space and must be finite for expansions the scorer supports
/// (`NEG_INFINITY` disables an expansion).
pub trait ExpansionScorer {
    fn binary_log_weight(&self, parent: &Category, comb: &Combinator, argument: &Category) -> f64;
    fn unary_log_weight(&self, parent: &Category, comb: &Combinator, child: &Category) -> f64;
    fn leaf_log_weight(&self, cat: &Category, token: &str) -> f64;
}

/// Weight 1 for every expansion: inside weights reduce to derivation counts.
pub struct UniformScorer;

impl ExpansionScorer for UniformScorer {
    fn binary_log_weight(&self, _: &Category, _: &Combinator, _: &Category) -> f64 {
        0.0
    }
    fn unary_log_weight(&self, _: &Category, _: &Combinator, _: &Category) -> f64 {
        0.0
    }
    fn leaf_log_weight(&self, _: &Category, _: &str) -> f64 {
        0.0
    }
}

/// The argument category `Y` bound by a binary combinator schema, given the
/// two child categories.
pub fn argument_of(comb: &Combinator, left: &Category, right: &Category) -> Option<Category> {
    match comb {
        Combinator::FwdApp | Combinator::BwdRaiseApp { .. } => Some(right.clone()),
        Combinator::BwdApp | Combinator::FwdRaiseApp { .. } => Some(left.clone()),
        Combinator::FwdComp => match left {
            Category::Complex { argument, .. } => Some((**argument).clone()),
            _ => None,
        },
        Combinator::BwdComp => match right {
            Category::Complex { argument, .. } => Some((**argument).clone()),
            _ => None,
        },
        _ => None,
    }
}

pub type ItemId = usize;
type CatId = u32;

#[derive(Clone, Copy, Debug)]
enum CatNode {
    Atom,
    Complex {
        slash: Slash,
        result: CatId,
        argument: CatId,
    },
}

/// Per-chart category interner with cached structure, limits, and canonical
/// strings.
#[derive(Debug)]
struct CatTable {
    cats: Vec<Category>,
    nodes: Vec<CatNode>,
    depth: Vec<u32>,
    arity: Vec<u32>,
    canon: Vec<String>,
    ids: HashMap<Category, CatId>,
}

impl CatTable {
    fn new() -> Self {
        CatTable {
            cats: Vec::new(),
            nodes: Vec::new(),
            depth: Vec::new(),
            arity: Vec::new(),
            canon: Vec::new(),
            ids: HashMap::new(),
        }
    }

    fn intern(&mut self, cat: &Category) -> CatId {
        if let Some(&id) = self.ids.get(cat) {
            return id;
        }
        let node = match cat {
            Category::Atom(_) => CatNode::Atom,
            Category::Complex {
                result,
                slash,
                argument,
            } => {
                let r = self.intern(result);
                let a = self.intern(argument);
                CatNode::Complex {
                    slash: *slash,
                    result: r,
                    argument: a,
                }
            }
        };
        self.push(cat.clone(), node)
    }

    fn push(&mut self, cat: Category, node: CatNode) -> CatId {
        let id = self.cats.len() as CatId;
        let (depth, arity) = match node {
            CatNode::Atom => (1, 0),
            CatNode::Complex {
                result, argument, ..
            } => (
                1 + self.depth[result as usize].max(self.depth[argument as usize]),
                1 + self.arity[result as usize],
            ),
        };
        self.depth.push(depth);
        self.arity.push(arity);
        self.canon.push(cat.canonical());
        self.nodes.push(node);
        self.ids.insert(cat.clone(), id);
        self.cats.push(cat);
        id
    }

    fn cat(&self, id: CatId) -> &Category {
        &self.cats[id as usize]
    }

    /// Build `result slash argument` from interned parts, or `None` when the
    /// result would exceed the limits.
    fn make(&mut self, slash: Slash, result: CatId, argument: CatId, cfg: &RuleConfig) -> Option<CatId> {
        let depth = 1 + self.depth[result as usize].max(self.depth[argument as usize]);
        let arity = 1 + self.arity[result as usize];
        if depth as usize > cfg.max_depth || arity as usize > cfg.max_arity {
            return None;
        }
        let cat = Category::complex(
            self.cats[result as usize].clone(),
            slash,
            self.cats[argument as usize].clone(),
        );
        if let Some(&id) = self.ids.get(&cat) {
            return Some(id);
        }
        Some(self.push(
            cat,
            CatNode::Complex {
                slash,
                result,
                argument,
            },
        ))
    }
}

/// One edge into a chart item.
#[derive(Clone, Debug)]
pub enum BackPointer {
    Lex {
        /// Log of the lexicon weight for (token, category).
        lex_log_weight: f64,
    },
    Unary {
        comb: Combinator,
        child: ItemId,
    },
    Binary {
        comb: Combinator,
        left: ItemId,
        right: ItemId,
    },
}

/// A packed chart item: one per (span, category).
#[derive(Clone, Debug)]
pub struct ParseItem {
    pub start: usize,
    pub end: usize,
    cat: CatId,
    pub backpointers: Vec<BackPointer>,
}

#[derive(Debug, Default)]
struct Cell {
    items: Vec<ItemId>,
    /// Items in this cell with category `X/Y`, keyed by `Y`.
    fwd_by_arg: HashMap<CatId, Vec<ItemId>>,
    /// Items in this cell with category `X\Y`, keyed by `Y`.
    bwd_by_arg: HashMap<CatId, Vec<ItemId>>,
}

#[derive(Error, Debug, PartialEq)]
pub enum ParseError {
    #[error("empty input")]
    EmptyInput,
    #[error("token `{token}` at position {position} has no lexicon entry")]
    UnknownToken { token: String, position: usize },
}

#[derive(Error, Debug, PartialEq)]
pub enum SampleError {
    #[error("goal category is not derivable over the full span")]
    NoParse,
    #[error("inside weights have not been computed")]
    NoInside,
}

/// CKY packed forest over a token sequence.
#[derive(Debug)]
pub struct PackedChart {
    tokens: Vec<String>,
    token_syms: Vec<u32>,
    distinct_tokens: Vec<String>,
    goal: Category,
    rules: RuleConfig,
    items: Vec<ParseItem>,
    index: HashMap<(usize, usize, CatId), ItemId>,
    table: CatTable,
    /// Combinations suppressed by the depth/arity caps, reported distinctly
    /// from plain mismatches.
    pub over_limit_combinations: usize,
    inside: Option<Vec<f64>>,
}

/// Build the packed chart for `tokens` under `lex` and `rules`.
///
/// Unary type-raises are applied once per cell after the cell closes; a
/// raised item is not raised again.
pub fn build_chart(
    tokens: &[String],
    lex: &Lexicon,
    rules: &RuleConfig,
    goal: &Category,
) -> Result<PackedChart, ParseError> {
    if tokens.is_empty() {
        return Err(ParseError::EmptyInput);
    }
    for (i, tok) in tokens.iter().enumerate() {
        if lex.entries(tok).is_none_or(|e| e.is_empty()) {
            return Err(ParseError::UnknownToken {
                token: tok.clone(),
                position: i,
            });
        }
    }
    let n = tokens.len();
    let mut table = CatTable::new();
    let goal_cat = goal.clone();
    table.intern(goal);

    let mut token_syms = Vec::with_capacity(n);
    let mut distinct_tokens: Vec<String> = Vec::new();
    for tok in tokens {
        let sym = match distinct_tokens.iter().position(|t| t == tok) {
            Some(p) => p as u32,
            None => {
                distinct_tokens.push(tok.clone());
                (distinct_tokens.len() - 1) as u32
            }
        };
        token_syms.push(sym);
    }

    // Raise configuration at id level, in deterministic (canonical) order.
    let mut raise_targets: Vec<CatId> = rules.raise_targets.iter().map(|c| table.intern(c)).collect();
    raise_targets.sort_by(|a, b| table.canon[*a as usize].cmp(&table.canon[*b as usize]));
    let raisable: BTreeSet<CatId> = rules.raisable.iter().map(|c| table.intern(c)).collect();
    let target_set: BTreeSet<CatId> = raise_targets.iter().copied().collect();

    let mut items: Vec<ParseItem> = Vec::new();
    let mut index: HashMap<(usize, usize, CatId), ItemId> = HashMap::new();
    let mut cells: Vec<Cell> = (0..(n + 1) * (n + 1)).map(|_| Cell::default()).collect();
    let cell_of = |start: usize, end: usize| start * (n + 1) + end;
    let mut over_limit = 0usize;

    let add_item = |items: &mut Vec<ParseItem>,
                        index: &mut HashMap<(usize, usize, CatId), ItemId>,
                        cell: &mut Cell,
                        table: &CatTable,
                        start: usize,
                        end: usize,
                        cat: CatId,
                        bp: BackPointer|
     -> ItemId {
        match index.get(&(start, end, cat)) {
            Some(&id) => {
                items[id].backpointers.push(bp);
                id
            }
            None => {
                let id = items.len();
                items.push(ParseItem {
                    start,
                    end,
                    cat,
                    backpointers: vec![bp],
                });
                index.insert((start, end, cat), id);
                cell.items.push(id);
                if let CatNode::Complex {
                    slash, argument, ..
                } = table.nodes[cat as usize]
                {
                    let by_arg = match slash {
                        Slash::Forward => &mut cell.fwd_by_arg,
                        Slash::Backward => &mut cell.bwd_by_arg,
                    };
                    by_arg.entry(argument).or_default().push(id);
                }
                id
            }
        }
    };

    for width in 1..=n {
        for start in 0..=(n - width) {
            let end = start + width;
            let mut cell = Cell::default();

            if width == 1 {
                for (cat, weight) in lex.entries(&tokens[start]).unwrap() {
                    if !rules.within_limits(cat) {
                        over_limit += 1;
                        continue;
                    }
                    let id = table.intern(cat);
                    add_item(
                        &mut items,
                        &mut index,
                        &mut cell,
                        &table,
                        start,
                        end,
                        id,
                        BackPointer::Lex {
                            lex_log_weight: weight.ln(),
                        },
                    );
                }
            } else {
                for split in (start + 1)..end {
                    let lcell = std::mem::take(&mut cells[cell_of(start, split)]);
                    let rcell = std::mem::take(&mut cells[cell_of(split, end)]);

                    for kind in CombinatorKind::ALL {
                        if !kind.is_binary() || !rules.is_enabled(kind) {
                            continue;
                        }
                        match kind {
                            // X/Y  Y -> X
                            CombinatorKind::FwdApp => {
                                for &rid in &rcell.items {
                                    let y = items[rid].cat;
                                    let Some(ls) = lcell.fwd_by_arg.get(&y) else {
                                        continue;
                                    };
                                    for &lid in ls {
                                        let CatNode::Complex { result, .. } =
                                            table.nodes[items[lid].cat as usize]
                                        else {
                                            unreachable!()
                                        };
                                        add_item(
                                            &mut items,
                                            &mut index,
                                            &mut cell,
                                            &table,
                                            start,
                                            end,
                                            result,
                                            BackPointer::Binary {
                                                comb: Combinator::FwdApp,
                                                left: lid,
                                                right: rid,
                                            },
                                        );
                                    }
                                }
                            }
                            // Y  X\Y -> X
                            CombinatorKind::BwdApp => {
                                for &lid in &lcell.items {
                                    let y = items[lid].cat;
                                    let Some(rs) = rcell.bwd_by_arg.get(&y) else {
                                        continue;
                                    };
                                    for &rid in rs {
                                        let CatNode::Complex { result, .. } =
                                            table.nodes[items[rid].cat as usize]
                                        else {
                                            unreachable!()
                                        };
                                        add_item(
                                            &mut items,
                                            &mut index,
                                            &mut cell,
                                            &table,
                                            start,
                                            end,
                                            result,
                                            BackPointer::Binary {
                                                comb: Combinator::BwdApp,
                                                left: lid,
                                                right: rid,
                                            },
                                        );
                                    }
                                }
                            }
                            // X/Y  Y/Z -> X/Z
                            CombinatorKind::FwdComp => {
                                for &rid in &rcell.items {
                                    let CatNode::Complex {
                                        slash: Slash::Forward,
                                        result: y,
                                        argument: z,
                                    } = table.nodes[items[rid].cat as usize]
                                    else {
                                        continue;
                                    };
                                    let Some(ls) = lcell.fwd_by_arg.get(&y) else {
                                        continue;
                                    };
                                    for &lid in ls.clone().iter() {
                                        let CatNode::Complex { result: x, .. } =
                                            table.nodes[items[lid].cat as usize]
                                        else {
                                            unreachable!()
                                        };
                                        match table.make(Slash::Forward, x, z, rules) {
                                            Some(res) => {
                                                add_item(
                                                    &mut items,
                                                    &mut index,
                                                    &mut cell,
                                                    &table,
                                                    start,
                                                    end,
                                                    res,
                                                    BackPointer::Binary {
                                                        comb: Combinator::FwdComp,
                                                        left: lid,
                                                        right: rid,
                                                    },
                                                );
                                            }
                                            None => over_limit += 1,
                                        }
                                    }
                                }
                            }
                            // Y\Z  X\Y -> X\Z
                            CombinatorKind::BwdComp => {
                                for &lid in &lcell.items {
                                    let CatNode::Complex {
                                        slash: Slash::Backward,
                                        result: y,
                                        argument: z,
                                    } = table.nodes[items[lid].cat as usize]
                                    else {
                                        continue;
                                    };
                                    let Some(rs) = rcell.bwd_by_arg.get(&y) else {
                                        continue;
                                    };
                                    for &rid in rs.clone().iter() {
                                        let CatNode::Complex { result: x, .. } =
                                            table.nodes[items[rid].cat as usize]
                                        else {
                                            unreachable!()
                                        };
                                        match table.make(Slash::Backward, x, z, rules) {
                                            Some(res) => {
                                                add_item(
                                                    &mut items,
                                                    &mut index,
                                                    &mut cell,
                                                    &table,
                                                    start,
                                                    end,
                                                    res,
                                                    BackPointer::Binary {
                                                        comb: Combinator::BwdComp,
                                                        left: lid,
                                                        right: rid,
                                                    },
                                                );
                                            }
                                            None => over_limit += 1,
                                        }
                                    }
                                }
                            }
                            // Y  X\Y -> X with Y raisable and X a raise target
                            CombinatorKind::FwdRaiseApp => {
                                for &lid in &lcell.items {
                                    let y = items[lid].cat;
                                    if !raisable.contains(&y) {
                                        continue;
                                    }
                                    let Some(rs) = rcell.bwd_by_arg.get(&y) else {
                                        continue;
                                    };
                                    for &rid in rs {
                                        let CatNode::Complex { result: x, .. } =
                                            table.nodes[items[rid].cat as usize]
                                        else {
                                            unreachable!()
                                        };
                                        if !target_set.contains(&x) {
                                            continue;
                                        }
                                        let target = table.cat(x).clone();
                                        add_item(
                                            &mut items,
                                            &mut index,
                                            &mut cell,
                                            &table,
                                            start,
                                            end,
                                            x,
                                            BackPointer::Binary {
                                                comb: Combinator::FwdRaiseApp { target },
                                                left: lid,
                                                right: rid,
                                            },
                                        );
                                    }
                                }
                            }
                            // X/Y  Y -> X with Y raisable and X a raise target
                            CombinatorKind::BwdRaiseApp => {
                                for &rid in &rcell.items {
                                    let y = items[rid].cat;
                                    if !raisable.contains(&y) {
                                        continue;
                                    }
                                    let Some(ls) = lcell.fwd_by_arg.get(&y) else {
                                        continue;
                                    };
                                    for &lid in ls {
                                        let CatNode::Complex { result: x, .. } =
                                            table.nodes[items[lid].cat as usize]
                                        else {
                                            unreachable!()
                                        };
                                        if !target_set.contains(&x) {
                                            continue;
                                        }
                                        let target = table.cat(x).clone();
                                        add_item(
                                            &mut items,
                                            &mut index,
                                            &mut cell,
                                            &table,
                                            start,
                                            end,
                                            x,
                                            BackPointer::Binary {
                                                comb: Combinator::BwdRaiseApp { target },
                                                left: lid,
                                                right: rid,
                                            },
                                        );
                                    }
                                }
                            }
                            _ => {}
                        }
                    }

                    cells[cell_of(start, split)] = lcell;
                    cells[cell_of(split, end)] = rcell;
                }
            }

            // Unary type-raising pass over the items derived so far; raised
            // items are not raised again.
            let snapshot = cell.items.clone();
            for kind in [CombinatorKind::FwdRaise, CombinatorKind::BwdRaise] {
                if !rules.is_enabled(kind) {
                    continue;
                }
                for &iid in &snapshot {
                    let y = items[iid].cat;
                    if !raisable.contains(&y) {
                        continue;
                    }
                    for &x in &raise_targets {
                        let inner_slash = match kind {
                            CombinatorKind::FwdRaise => Slash::Backward,
                            _ => Slash::Forward,
                        };
                        let outer_slash = match kind {
                            CombinatorKind::FwdRaise => Slash::Forward,
                            _ => Slash::Backward,
                        };
                        let raised = table
                            .make(inner_slash, x, y, rules)
                            .and_then(|inner| table.make(outer_slash, x, inner, rules));
                        match raised {
                            Some(raised) => {
                                let target = table.cat(x).clone();
                                let comb = match kind {
                                    CombinatorKind::FwdRaise => Combinator::FwdRaise { target },
                                    _ => Combinator::BwdRaise { target },
                                };
                                add_item(
                                    &mut items,
                                    &mut index,
                                    &mut cell,
                                    &table,
                                    start,
                                    end,
                                    raised,
                                    BackPointer::Unary { comb, child: iid },
                                );
                            }
                            None => over_limit += 1,
                        }
                    }
                }
            }

            cells[cell_of(start, end)] = cell;
        }
    }

    Ok(PackedChart {
        tokens: tokens.to_vec(),
        token_syms,
        distinct_tokens,
        goal: goal_cat,
        rules: rules.clone(),
        items,
        index,
        table,
        over_limit_combinations: over_limit,
        inside: None,
    })
}

impl PackedChart {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn goal(&self) -> &Category {
        &self.goal
    }

    pub fn rules(&self) -> &RuleConfig {
        &self.rules
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn item(&self, id: ItemId) -> &ParseItem {
        &self.items[id]
    }

    pub fn item_category(&self, id: ItemId) -> &Category {
        self.table.cat(self.items[id].cat)
    }

    pub fn item_id(&self, start: usize, end: usize, cat: &Category) -> Option<ItemId> {
        let cid = *self.table.ids.get(cat)?;
        self.index.get(&(start, end, cid)).copied()
    }

    fn goal_item(&self, goal: &Category) -> Option<ItemId> {
        self.item_id(0, self.tokens.len(), goal)
    }

    /// Exact number of derivations of `goal` over the full span, saturating
    /// at [`COUNT_CAP`].
    pub fn count_derivations(&self, goal: &Category) -> u64 {
        let Some(root) = self.goal_item(goal) else {
            return 0;
        };
        let mut memo: Vec<Option<u64>> = vec![None; self.items.len()];
        self.count_item(root, &mut memo)
    }

    fn count_item(&self, id: ItemId, memo: &mut Vec<Option<u64>>) -> u64 {
        if let Some(c) = memo[id] {
            return c;
        }
        let mut total: u64 = 0;
        for i in 0..self.items[id].backpointers.len() {
            let c = match self.items[id].backpointers[i] {
                BackPointer::Lex { .. } => 1,
                BackPointer::Unary { child, .. } => self.count_item(child, memo),
                BackPointer::Binary { left, right, .. } => {
                    let l = self.count_item(left, memo) as u128;
                    let r = self.count_item(right, memo) as u128;
                    (l * r).min(COUNT_CAP as u128) as u64
                }
            };
            total = total.saturating_add(c).min(COUNT_CAP);
        }
        memo[id] = Some(total);
        total
    }

    fn edge_log_weight(
        &self,
        scorer: &dyn ExpansionScorer,
        id: ItemId,
        bp: &BackPointer,
        bin_cache: &mut HashMap<(CatId, u8, CatId), f64>,
        leaf_cache: &mut HashMap<(CatId, u32), f64>,
    ) -> f64 {
        let item = &self.items[id];
        match bp {
            BackPointer::Lex { lex_log_weight } => {
                let sym = self.token_syms[item.start];
                let w = *leaf_cache.entry((item.cat, sym)).or_insert_with(|| {
                    scorer.leaf_log_weight(
                        self.table.cat(item.cat),
                        &self.distinct_tokens[sym as usize],
                    )
                });
                lex_log_weight + w
            }
            BackPointer::Unary { comb, child } => scorer.unary_log_weight(
                self.table.cat(item.cat),
                comb,
                self.table.cat(self.items[*child].cat),
            ),
            BackPointer::Binary { comb, left, right } => {
                let arg = self.binary_argument(comb, *left, *right);
                let key = (item.cat, comb.kind().rank(), arg);
                *bin_cache.entry(key).or_insert_with(|| {
                    scorer.binary_log_weight(
                        self.table.cat(item.cat),
                        comb,
                        self.table.cat(arg),
                    )
                })
            }
        }
    }

    fn binary_argument(&self, comb: &Combinator, left: ItemId, right: ItemId) -> CatId {
        let lcat = self.items[left].cat;
        let rcat = self.items[right].cat;
        match comb.kind() {
            CombinatorKind::FwdApp | CombinatorKind::BwdRaiseApp => rcat,
            CombinatorKind::BwdApp | CombinatorKind::FwdRaiseApp => lcat,
            CombinatorKind::FwdComp => match self.table.nodes[lcat as usize] {
                CatNode::Complex { argument, .. } => argument,
                _ => unreachable!(),
            },
            CombinatorKind::BwdComp => match self.table.nodes[rcat as usize] {
                CatNode::Complex { argument, .. } => argument,
                _ => unreachable!(),
            },
            _ => unreachable!("binary argument of non-binary combinator"),
        }
    }

    /// Compute and store the log inside weight of every item: the log-sum
    /// over sub-derivations of the product of expansion weights.
    pub fn compute_inside(&mut self, scorer: &dyn ExpansionScorer) {
        let mut inside: Vec<Option<f64>> = vec![None; self.items.len()];
        let mut bin_cache = HashMap::new();
        let mut leaf_cache = HashMap::new();
        for id in 0..self.items.len() {
            self.inside_of(id, scorer, &mut inside, &mut bin_cache, &mut leaf_cache);
        }
        self.inside = Some(inside.into_iter().map(|x| x.unwrap()).collect());
    }

    fn inside_of(
        &self,
        id: ItemId,
        scorer: &dyn ExpansionScorer,
        memo: &mut Vec<Option<f64>>,
        bin_cache: &mut HashMap<(CatId, u8, CatId), f64>,
        leaf_cache: &mut HashMap<(CatId, u32), f64>,
    ) -> f64 {
        if let Some(v) = memo[id] {
            return v;
        }
        let nbps = self.items[id].backpointers.len();
        let mut terms = Vec::with_capacity(nbps);
        for i in 0..nbps {
            let bp = self.items[id].backpointers[i].clone();
            let edge = self.edge_log_weight(scorer, id, &bp, bin_cache, leaf_cache);
            let children = match bp {
                BackPointer::Lex { .. } => 0.0,
                BackPointer::Unary { child, .. } => {
                    self.inside_of(child, scorer, memo, bin_cache, leaf_cache)
                }
                BackPointer::Binary { left, right, .. } => {
                    self.inside_of(left, scorer, memo, bin_cache, leaf_cache)
                        + self.inside_of(right, scorer, memo, bin_cache, leaf_cache)
                }
            };
            terms.push(edge + children);
        }
        let v = log_sum_exp(&terms);
        memo[id] = Some(v);
        v
    }

    /// Log inside weight at `goal` over the full span; `None` when `goal`
    /// is not derivable or inside weights have not been computed.
    pub fn inside(&self, goal: &Category) -> Option<f64> {
        let inside = self.inside.as_ref()?;
        self.goal_item(goal).map(|id| inside[id])
    }

    /// A maximum-weight derivation of `goal`, or `None` if unparseable. Ties
    /// break deterministically by combinator kind, then argument canonical
    /// string, then split point ascending.
    pub fn viterbi_derivation(
        &self,
        goal: &Category,
        scorer: &dyn ExpansionScorer,
    ) -> Option<Derivation> {
        let root = self.goal_item(goal)?;
        let mut best: Vec<Option<(f64, usize)>> = vec![None; self.items.len()];
        let mut bin_cache = HashMap::new();
        let mut leaf_cache = HashMap::new();
        self.best_of(root, scorer, &mut best, &mut bin_cache, &mut leaf_cache);
        if best[root].unwrap().0 == f64::NEG_INFINITY {
            return None;
        }
        Some(self.follow_best(root, &best))
    }

    fn bp_sort_key(&self, bp: &BackPointer) -> (u8, String, usize) {
        match bp {
            BackPointer::Lex { .. } => (0, String::new(), 0),
            BackPointer::Unary { comb, child } => (
                comb.kind().rank(),
                self.table.canon[self.items[*child].cat as usize].clone(),
                0,
            ),
            BackPointer::Binary { comb, left, right } => (
                comb.kind().rank(),
                self.table.canon[self.binary_argument(comb, *left, *right) as usize].clone(),
                self.items[*left].end,
            ),
        }
    }

    fn best_of(
        &self,
        id: ItemId,
        scorer: &dyn ExpansionScorer,
        memo: &mut Vec<Option<(f64, usize)>>,
        bin_cache: &mut HashMap<(CatId, u8, CatId), f64>,
        leaf_cache: &mut HashMap<(CatId, u32), f64>,
    ) -> f64 {
        if let Some((w, _)) = memo[id] {
            return w;
        }
        let nbps = self.items[id].backpointers.len();
        // Evaluate backpointers in tie-break order; keep strictly greater.
        let mut order: Vec<usize> = (0..nbps).collect();
        order.sort_by(|&a, &b| {
            self.bp_sort_key(&self.items[id].backpointers[a])
                .cmp(&self.bp_sort_key(&self.items[id].backpointers[b]))
        });
        let mut best_w = f64::NEG_INFINITY;
        let mut best_i = order[0];
        for &i in &order {
            let bp = self.items[id].backpointers[i].clone();
            let edge = self.edge_log_weight(scorer, id, &bp, bin_cache, leaf_cache);
            let children = match bp {
                BackPointer::Lex { .. } => 0.0,
                BackPointer::Unary { child, .. } => {
                    self.best_of(child, scorer, memo, bin_cache, leaf_cache)
                }
                BackPointer::Binary { left, right, .. } => {
                    self.best_of(left, scorer, memo, bin_cache, leaf_cache)
                        + self.best_of(right, scorer, memo, bin_cache, leaf_cache)
                }
            };
            let w = edge + children;
            if w > best_w {
                best_w = w;
                best_i = i;
            }
        }
        memo[id] = Some((best_w, best_i));
        best_w
    }

    fn follow_best(&self, id: ItemId, best: &[Option<(f64, usize)>]) -> Derivation {
        let item = &self.items[id];
        let (_, choice) = best[id].unwrap();
        match &item.backpointers[choice] {
            BackPointer::Lex { .. } => Derivation::Leaf {
                start: item.start,
                cat: self.table.cat(item.cat).clone(),
                token: self.tokens[item.start].clone(),
            },
            BackPointer::Unary { comb, child } => Derivation::Unary {
                cat: self.table.cat(item.cat).clone(),
                comb: comb.clone(),
                child: Box::new(self.follow_best(*child, best)),
            },
            BackPointer::Binary { comb, left, right } => Derivation::Binary {
                cat: self.table.cat(item.cat).clone(),
                comb: comb.clone(),
                left: Box::new(self.follow_best(*left, best)),
                right: Box::new(self.follow_best(*right, best)),
            },
        }
    }

    /// Sample a derivation of `goal` with probability proportional to its
    /// weight, by exact top-down sampling from the stored inside weights.
    /// `scorer` must be the scorer `compute_inside` was called with.
    pub fn sample_derivation(
        &self,
        goal: &Category,
        scorer: &dyn ExpansionScorer,
        rng: &mut impl Rng,
    ) -> Result<Derivation, SampleError> {
        let inside = self.inside.as_ref().ok_or(SampleError::NoInside)?;
        let root = self.goal_item(goal).ok_or(SampleError::NoParse)?;
        if inside[root] == f64::NEG_INFINITY {
            return Err(SampleError::NoParse);
        }
        let mut bin_cache = HashMap::new();
        let mut leaf_cache = HashMap::new();
        Ok(self.sample_item(root, scorer, inside, rng, &mut bin_cache, &mut leaf_cache))
    }

    fn sample_item(
        &self,
        id: ItemId,
        scorer: &dyn ExpansionScorer,
        inside: &[f64],
        rng: &mut impl Rng,
        bin_cache: &mut HashMap<(CatId, u8, CatId), f64>,
        leaf_cache: &mut HashMap<(CatId, u32), f64>,
    ) -> Derivation {
        let item = &self.items[id];
        let nbps = item.backpointers.len();
        let mut choice = nbps - 1;
        if nbps > 1 {
            let mut probs = Vec::with_capacity(nbps);
            for bp in &item.backpointers {
                let edge = self.edge_log_weight(scorer, id, bp, bin_cache, leaf_cache);
                let children = match bp {
                    BackPointer::Lex { .. } => 0.0,
                    BackPointer::Unary { child, .. } => inside[*child],
                    BackPointer::Binary { left, right, .. } => inside[*left] + inside[*right],
                };
                probs.push((edge + children - inside[id]).exp());
            }
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    choice = i;
                    break;
                }
            }
        }
        match &item.backpointers[choice] {
            BackPointer::Lex { .. } => Derivation::Leaf {
                start: item.start,
                cat: self.table.cat(item.cat).clone(),
                token: self.tokens[item.start].clone(),
            },
            BackPointer::Unary { comb, child } => Derivation::Unary {
                cat: self.table.cat(item.cat).clone(),
                comb: comb.clone(),
                child: Box::new(self.sample_item(*child, scorer, inside, rng, bin_cache, leaf_cache)),
            },
            BackPointer::Binary { comb, left, right } => Derivation::Binary {
                cat: self.table.cat(item.cat).clone(),
                comb: comb.clone(),
                left: Box::new(self.sample_item(*left, scorer, inside, rng, bin_cache, leaf_cache)),
                right: Box::new(self.sample_item(*right, scorer, inside, rng, bin_cache, leaf_cache)),
            },
        }
    }

    /// Verify that every backpointer recombines to its item's category.
    pub fn audit(&self) -> Result<(), String> {
        for (id, item) in self.items.iter().enumerate() {
            for bp in &item.backpointers {
                let ok = match bp {
                    BackPointer::Lex { .. } => true,
                    BackPointer::Unary { comb, child } => {
                        crate::category::combine(
                            comb,
                            self.table.cat(self.items[*child].cat),
                            None,
                            &self.rules,
                        )
                        .into_category()
                        .as_ref()
                            == Some(self.table.cat(item.cat))
                    }
                    BackPointer::Binary { comb, left, right } => {
                        crate::category::combine(
                            comb,
                            self.table.cat(self.items[*left].cat),
                            Some(self.table.cat(self.items[*right].cat)),
                            &self.rules,
                        )
                        .into_category()
                        .as_ref()
                            == Some(self.table.cat(item.cat))
                    }
                };
                if !ok {
                    return Err(format!(
                        "item {id} ({},{},{}) has a non-recombining backpointer",
                        item.start,
                        item.end,
                        self.table.canon[item.cat as usize]
                    ));
                }
            }
        }
        Ok(())
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// A single derivation tree extracted from a chart.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Derivation {
    Leaf {
        start: usize,
        cat: Category,
        token: String,
    },
    Unary {
        cat: Category,
        comb: Combinator,
        child: Box<Derivation>,
    },
    Binary {
        cat: Category,
        comb: Combinator,
        left: Box<Derivation>,
        right: Box<Derivation>,
    },
}

impl Derivation {
    pub fn cat(&self) -> &Category {
        match self {
            Derivation::Leaf { cat, .. }
            | Derivation::Unary { cat, .. }
            | Derivation::Binary { cat, .. } => cat,
        }
    }

    pub fn span(&self) -> (usize, usize) {
        match self {
            Derivation::Leaf { start, .. } => (*start, start + 1),
            Derivation::Unary { child, .. } => child.span(),
            Derivation::Binary { left, right, .. } => (left.span().0, right.span().1),
        }
    }

    /// Leaf (token, category) pairs in sentence order.
    pub fn leaves(&self) -> Vec<(&str, &Category)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(&'a str, &'a Category)>) {
        match self {
            Derivation::Leaf { token, cat, .. } => out.push((token, cat)),
            Derivation::Unary { child, .. } => child.collect_leaves(out),
            Derivation::Binary { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    /// Bracketed text form, e.g. `(S (NP (NP/N the) (N dog)) (S\NP sleeps))`.
    pub fn bracketed(&self) -> String {
        let mut s = String::new();
        self.write_bracketed(&mut s);
        s
    }

    fn write_bracketed(&self, out: &mut String) {
        match self {
            Derivation::Leaf { cat, token, .. } => {
                let _ = write!(out, "({} {})", cat, token);
            }
            Derivation::Unary { cat, child, .. } => {
                let _ = write!(out, "({} ", cat);
                child.write_bracketed(out);
                out.push(')');
            }
            Derivation::Binary {
                cat, left, right, ..
            } => {
                let _ = write!(out, "({} ", cat);
                left.write_bracketed(out);
                out.push(' ');
                right.write_bracketed(out);
                out.push(')');
            }
        }
    }

    /// Internal-node spans, excluding width-1 spans and the full-sentence
    /// span (the standard unlabeled bracketing convention).
    pub fn extract_spans(&self) -> BTreeSet<(usize, usize)> {
        let full = self.span();
        let mut spans = BTreeSet::new();
        self.collect_spans(full, &mut spans);
        spans
    }

    fn collect_spans(&self, full: (usize, usize), spans: &mut BTreeSet<(usize, usize)>) {
        match self {
            Derivation::Leaf { .. } => {}
            Derivation::Unary { child, .. } => {
                let span = self.span();
                if span != full && span.1 - span.0 > 1 {
                    spans.insert(span);
                }
                child.collect_spans(full, spans);
            }
            Derivation::Binary { left, right, .. } => {
                let span = self.span();
                if span != full && span.1 - span.0 > 1 {
                    spans.insert(span);
                }
                left.collect_spans(full, spans);
                right.collect_spans(full, spans);
            }
        }
    }
}

/// Log weight a chart would assign to `d`: lexicon weights at leaves plus
/// scorer weights at every node. Used for Metropolis-Hastings corrections
/// where the proposal density of a derivation is needed without the chart.
pub fn derivation_log_weight(
    d: &Derivation,
    scorer: &dyn ExpansionScorer,
    lex: &Lexicon,
) -> f64 {
    match d {
        Derivation::Leaf { cat, token, .. } => {
            let lw = lex.log_weight(token, cat).unwrap_or(f64::NEG_INFINITY);
            lw + scorer.leaf_log_weight(cat, token)
        }
        Derivation::Unary { cat, comb, child } => {
            scorer.unary_log_weight(cat, comb, child.cat())
                + derivation_log_weight(child, scorer, lex)
        }
        Derivation::Binary {
            cat,
            comb,
            left,
            right,
        } => {
            let arg = argument_of(comb, left.cat(), right.cat())
                .expect("binary node with non-binary combinator");
            scorer.binary_log_weight(cat, comb, &arg)
                + derivation_log_weight(left, scorer, lex)
                + derivation_log_weight(right, scorer, lex)
        }
    }
}
