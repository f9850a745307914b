//! Nonparametric CCG induction over tagged corpora.
//!
//! Every internal derivation node is an expansion event (parent z,
//! combinator c, argument y); leaves emit POS tag ids. Per parent, a finite
//! Dirichlet-multinomial picks the expansion kind (leaf or a binary
//! combinator); per (parent, kind), a Dirichlet process with base G0 over
//! the infinite category space picks the argument. Inference is collapsed
//! Gibbs over per-sentence derivations: resample each derivation from a
//! chart scored with the predictive distributions, with a
//! Metropolis-Hastings correction for the within-derivation count updates
//! the chart proposal ignores.
//!
//! Type-raising enters as fused binary kinds (raise immediately consumed by
//! an application), so the generative story stays binary throughout.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::category::{Category, Combinator, CombinatorKind, RuleConfig, Slash};
use crate::chart::{
    build_chart, derivation_log_weight, Derivation, ExpansionScorer, Lexicon, UniformScorer,
};
use crate::corpus::TaggedCorpus;

#[derive(Error, Debug, PartialEq)]
pub enum HdpError {
    #[error("invalid base distribution: {0}")]
    BadBase(String),
    #[error("invalid hyperparameter: {0}")]
    BadHyperparameter(String),
    #[error("sentence {sentence} has no derivation even after widening the pool")]
    NoParse { sentence: usize },
    #[error("corpus contains no sentences")]
    EmptyCorpus,
    #[error("leaf token `{0}` is not a tag id")]
    BadLeafToken(String),
}

/// Proper base distribution G0 over the infinite category space:
/// P(atom) = (1 - p_slash) * P_atom(a), and
/// P(r sl a) = p_slash * P_dir(sl) * P(r) * P(a).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseDistribution {
    atoms: BTreeMap<String, f64>,
    p_slash: f64,
    p_forward: f64,
}

impl BaseDistribution {
    pub fn new(
        atoms: BTreeMap<String, f64>,
        p_slash: f64,
        p_forward: f64,
    ) -> Result<BaseDistribution, HdpError> {
        if atoms.is_empty() || atoms.values().any(|&p| p <= 0.0) {
            return Err(HdpError::BadBase("atom probabilities must be positive".into()));
        }
        let sum: f64 = atoms.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(HdpError::BadBase(format!(
                "atom probabilities sum to {sum}, expected 1"
            )));
        }
        if !(0.0..1.0).contains(&p_slash) {
            return Err(HdpError::BadBase("p_slash must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&p_forward) {
            return Err(HdpError::BadBase("p_forward must lie in [0, 1]".into()));
        }
        Ok(BaseDistribution {
            atoms,
            p_slash,
            p_forward,
        })
    }

    /// Uniform atom probabilities over `atoms`.
    pub fn uniform(atoms: impl IntoIterator<Item = String>, p_slash: f64) -> BaseDistribution {
        let names: Vec<String> = atoms.into_iter().collect();
        let p = 1.0 / names.len() as f64;
        BaseDistribution::new(names.into_iter().map(|a| (a, p)).collect(), p_slash, 0.5)
            .expect("uniform base is valid")
    }

    pub fn p_slash(&self) -> f64 {
        self.p_slash
    }

    /// log G0(cat). Atoms outside the configured set get zero probability.
    pub fn g0_log_prob(&self, cat: &Category) -> f64 {
        match cat {
            Category::Atom(a) => match self.atoms.get(a) {
                Some(&p) => (1.0 - self.p_slash).ln() + p.ln(),
                None => f64::NEG_INFINITY,
            },
            Category::Complex {
                result,
                slash,
                argument,
            } => {
                let dir = match slash {
                    Slash::Forward => self.p_forward,
                    Slash::Backward => 1.0 - self.p_forward,
                };
                self.p_slash.ln()
                    + dir.ln()
                    + self.g0_log_prob(result)
                    + self.g0_log_prob(argument)
            }
        }
    }

    /// Total G0 mass on categories of depth at most `max_depth`, by the
    /// mass recursion m_1 = 1 - p_slash, m_d = (1 - p_slash) + p_slash *
    /// m_{d-1}^2 (atom probabilities and direction sum to 1 and drop out).
    pub fn mass_within_depth(&self, max_depth: usize) -> f64 {
        let mut m = 0.0;
        for _ in 0..max_depth {
            m = (1.0 - self.p_slash) + self.p_slash * m * m;
        }
        m
    }
}

/// One expansion or emission event, the unit the restaurants count.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Event {
    Expand {
        parent: Category,
        kind: CombinatorKind,
        argument: Category,
    },
    Emit { parent: Category, tag: usize },
}

/// Pre-order event list of a derivation. Leaf tokens must be tag ids.
pub fn derivation_events(d: &Derivation) -> Result<Vec<Event>, HdpError> {
    fn walk(d: &Derivation, out: &mut Vec<Event>) -> Result<(), HdpError> {
        match d {
            Derivation::Leaf { cat, token, .. } => {
                let tag: usize = token
                    .parse()
                    .map_err(|_| HdpError::BadLeafToken(token.clone()))?;
                out.push(Event::Emit {
                    parent: cat.clone(),
                    tag,
                });
            }
            Derivation::Unary { .. } => {
                return Err(HdpError::BadLeafToken(
                    "unary nodes are not generative events".into(),
                ));
            }
            Derivation::Binary {
                cat,
                comb,
                left,
                right,
            } => {
                let argument = crate::chart::argument_of(comb, left.cat(), right.cat())
                    .expect("binary combinator");
                out.push(Event::Expand {
                    parent: cat.clone(),
                    kind: comb.kind(),
                    argument,
                });
                walk(left, out)?;
                walk(right, out)?;
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(d, &mut out)?;
    Ok(out)
}

/// Argument restaurant: customer counts per category under one
/// (parent, kind). The single-level DP predictive depends only on counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Restaurant {
    pub counts: BTreeMap<Category, u32>,
    pub total: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HdpConfig {
    pub alpha_dp: f64,
    pub gamma: f64,
    pub kind_prior: f64,
    pub emit_prior: f64,
    pub base: BaseDistribution,
    pub rules: RuleConfig,
    pub root: Category,
    pub n_tags: usize,
    /// Cap on lexicon categories offered to every tag when building charts.
    pub max_leaf_pool: usize,
}

impl HdpConfig {
    pub fn validate(&self) -> Result<(), HdpError> {
        for (name, v) in [
            ("alpha_dp", self.alpha_dp),
            ("gamma", self.gamma),
            ("kind_prior", self.kind_prior),
            ("emit_prior", self.emit_prior),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(HdpError::BadHyperparameter(name.into()));
            }
        }
        if self.n_tags == 0 {
            return Err(HdpError::BadHyperparameter("n_tags".into()));
        }
        if self.max_leaf_pool == 0 {
            return Err(HdpError::BadHyperparameter("max_leaf_pool".into()));
        }
        Ok(())
    }

    /// Binary kinds the generative model ranges over, in canonical order.
    pub fn binary_kinds(&self) -> Vec<CombinatorKind> {
        CombinatorKind::ALL
            .into_iter()
            .filter(|k| k.is_binary() && self.rules.enabled.contains(k))
            .collect()
    }
}

/// Collapsed state: seated counts plus the current per-sentence derivations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HdpState {
    pub config: HdpConfig,
    kind_counts: BTreeMap<Category, BTreeMap<CombinatorKind, u32>>,
    kind_totals: BTreeMap<Category, u32>,
    #[serde(with = "restaurants_serde")]
    restaurants: BTreeMap<(Category, CombinatorKind), Restaurant>,
    emit_counts: BTreeMap<Category, Vec<u32>>,
    derivations: Vec<Derivation>,
}

mod restaurants_serde {
    use super::Restaurant;
    use crate::category::{Category, CombinatorKind};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<(Category, CombinatorKind), Restaurant>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let v: Vec<(&Category, CombinatorKind, &Restaurant)> =
            m.iter().map(|((c, k), r)| (c, *k, r)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<(Category, CombinatorKind), Restaurant>, D::Error> {
        let v: Vec<(Category, CombinatorKind, Restaurant)> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|(c, k, r)| ((c, k), r)).collect())
    }
}

impl HdpState {
    fn kind_dim(&self) -> usize {
        self.config.binary_kinds().len() + 1
    }

    pub fn derivations(&self) -> &[Derivation] {
        &self.derivations
    }

    pub fn restaurant(&self, parent: &Category, kind: CombinatorKind) -> Option<&Restaurant> {
        self.restaurants.get(&(parent.clone(), kind))
    }

    /// Seat one event's counts without touching the stored derivations.
    /// External checks can replay event sequences with this; callers must
    /// unseat what they seat or the audit will flag the state.
    pub fn seat_event(&mut self, e: &Event) {
        self.seat(e);
    }

    /// Remove one seated event's counts. Panics if the event is not seated.
    pub fn unseat_event(&mut self, e: &Event) {
        self.unseat(e);
    }

    fn seat(&mut self, e: &Event) {
        match e {
            Event::Expand {
                parent,
                kind,
                argument,
            } => {
                *self
                    .kind_counts
                    .entry(parent.clone())
                    .or_default()
                    .entry(*kind)
                    .or_insert(0) += 1;
                *self.kind_totals.entry(parent.clone()).or_insert(0) += 1;
                let r = self
                    .restaurants
                    .entry((parent.clone(), *kind))
                    .or_default();
                *r.counts.entry(argument.clone()).or_insert(0) += 1;
                r.total += 1;
            }
            Event::Emit { parent, tag } => {
                *self
                    .kind_counts
                    .entry(parent.clone())
                    .or_default()
                    .entry(CombinatorKind::Lex)
                    .or_insert(0) += 1;
                *self.kind_totals.entry(parent.clone()).or_insert(0) += 1;
                let row = self
                    .emit_counts
                    .entry(parent.clone())
                    .or_insert_with(|| vec![0; self.config.n_tags]);
                row[*tag] += 1;
            }
        }
    }

    fn unseat(&mut self, e: &Event) {
        match e {
            Event::Expand {
                parent,
                kind,
                argument,
            } => {
                let kc = self
                    .kind_counts
                    .get_mut(parent)
                    .and_then(|m| m.get_mut(kind))
                    .expect("unseat of unseated kind");
                *kc -= 1;
                *self.kind_totals.get_mut(parent).unwrap() -= 1;
                let r = self
                    .restaurants
                    .get_mut(&(parent.clone(), *kind))
                    .expect("unseat of unseated restaurant");
                let c = r.counts.get_mut(argument).expect("unseat of unseated argument");
                *c -= 1;
                if *c == 0 {
                    r.counts.remove(argument);
                }
                r.total -= 1;
            }
            Event::Emit { parent, tag } => {
                let kc = self
                    .kind_counts
                    .get_mut(parent)
                    .and_then(|m| m.get_mut(&CombinatorKind::Lex))
                    .expect("unseat of unseated leaf kind");
                *kc -= 1;
                *self.kind_totals.get_mut(parent).unwrap() -= 1;
                let row = self.emit_counts.get_mut(parent).expect("unseat of unseated emission");
                row[*tag] -= 1;
            }
        }
    }

    fn kind_log_pred(&self, parent: &Category, kind: CombinatorKind) -> f64 {
        let count = self
            .kind_counts
            .get(parent)
            .and_then(|m| m.get(&kind))
            .copied()
            .unwrap_or(0) as f64;
        let total = self.kind_totals.get(parent).copied().unwrap_or(0) as f64;
        let kp = self.config.kind_prior;
        ((count + kp) / (total + self.kind_dim() as f64 * kp)).ln()
    }

    /// log of (count(y) + alpha_dp * G0(y)) / (total + alpha_dp).
    pub fn crp_log_predictive(
        &self,
        parent: &Category,
        kind: CombinatorKind,
        argument: &Category,
    ) -> f64 {
        let (count, total) = match self.restaurants.get(&(parent.clone(), kind)) {
            Some(r) => (
                r.counts.get(argument).copied().unwrap_or(0) as f64,
                r.total as f64,
            ),
            None => (0.0, 0.0),
        };
        let a = self.config.alpha_dp;
        let g0 = self.config.base.g0_log_prob(argument).exp();
        ((count + a * g0) / (total + a)).ln()
    }

    fn emit_log_pred(&self, parent: &Category, tag: usize) -> f64 {
        let (count, total) = match self.emit_counts.get(parent) {
            Some(row) => (
                row[tag] as f64,
                row.iter().sum::<u32>() as f64,
            ),
            None => (0.0, 0.0),
        };
        let ep = self.config.emit_prior;
        ((count + ep) / (total + self.config.n_tags as f64 * ep)).ln()
    }

    /// Predictive log probability of one event under the current counts.
    pub fn event_log_predictive(&self, e: &Event) -> f64 {
        match e {
            Event::Expand {
                parent,
                kind,
                argument,
            } => self.kind_log_pred(parent, *kind) + self.crp_log_predictive(parent, *kind, argument),
            Event::Emit { parent, tag } => {
                self.kind_log_pred(parent, CombinatorKind::Lex) + self.emit_log_pred(parent, *tag)
            }
        }
    }

    /// Collapsed log probability of every seated event: Dirichlet-
    /// multinomial marginals for kinds and emissions, Polya-urn marginals
    /// for the argument restaurants. Order-independent by construction.
    pub fn log_joint(&self) -> f64 {
        let mut lp = 0.0;
        let kp = self.config.kind_prior;
        let dim = self.kind_dim() as f64;
        for (parent, counts) in &self.kind_counts {
            let total = self.kind_totals[parent] as f64;
            lp += ln_gamma(dim * kp) - ln_gamma(dim * kp + total);
            for &c in counts.values() {
                if c > 0 {
                    lp += ln_gamma(kp + c as f64) - ln_gamma(kp);
                }
            }
        }
        let a = self.config.alpha_dp;
        for r in self.restaurants.values() {
            lp += ln_gamma(a) - ln_gamma(a + r.total as f64);
            for (y, &n) in &r.counts {
                if n > 0 {
                    let ag0 = a * self.config.base.g0_log_prob(y).exp();
                    lp += ln_gamma(ag0 + n as f64) - ln_gamma(ag0);
                }
            }
        }
        let ep = self.config.emit_prior;
        let k = self.config.n_tags as f64;
        for row in self.emit_counts.values() {
            let total: u32 = row.iter().sum();
            lp += ln_gamma(k * ep) - ln_gamma(k * ep + total as f64);
            for &n in row {
                if n > 0 {
                    lp += ln_gamma(ep + n as f64) - ln_gamma(ep);
                }
            }
        }
        lp
    }

    /// Rebuild all counts from the stored derivations and compare.
    pub fn audit(&self) -> Result<(), String> {
        let mut fresh = HdpState {
            config: self.config.clone(),
            kind_counts: BTreeMap::new(),
            kind_totals: BTreeMap::new(),
            restaurants: BTreeMap::new(),
            emit_counts: BTreeMap::new(),
            derivations: Vec::new(),
        };
        for d in &self.derivations {
            let events = derivation_events(d).map_err(|e| e.to_string())?;
            for e in &events {
                fresh.seat(e);
            }
        }
        let mut kc = self.kind_counts.clone();
        for m in kc.values_mut() {
            m.retain(|_, &mut c| c > 0);
        }
        kc.retain(|_, m| !m.is_empty());
        let mut fkc = fresh.kind_counts;
        for m in fkc.values_mut() {
            m.retain(|_, &mut c| c > 0);
        }
        fkc.retain(|_, m| !m.is_empty());
        if kc != fkc {
            return Err("kind counts inconsistent with derivations".to_string());
        }
        let mut rests = self.restaurants.clone();
        rests.retain(|_, r| r.total > 0);
        if rests != fresh.restaurants {
            return Err("restaurant counts inconsistent with derivations".to_string());
        }
        let mut ec = self.emit_counts.clone();
        ec.retain(|_, row| row.iter().any(|&n| n > 0));
        if ec != fresh.emit_counts {
            return Err("emission counts inconsistent with derivations".to_string());
        }
        for ((parent, _), r) in &self.restaurants {
            for y in r.counts.keys() {
                if !self.config.rules.within_limits(y) || !self.config.rules.within_limits(parent) {
                    return Err(format!(
                        "seated category exceeds limits: {parent} -> {y}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Categories offered to every tag as lexicon entries: atoms, all
    /// single-slash functors over atoms, then seated leaf categories by
    /// emission count, capped at `max_leaf_pool`.
    pub fn leaf_pool(&self) -> Vec<Category> {
        let mut pool: Vec<Category> = Vec::new();
        let atoms: Vec<Category> = self
            .config
            .rules
            .atoms
            .iter()
            .map(|a| Category::atom(a.clone()))
            .collect();
        pool.extend(atoms.iter().cloned());
        for r in &atoms {
            for a in &atoms {
                for slash in [Slash::Forward, Slash::Backward] {
                    let c = Category::complex(r.clone(), slash, a.clone());
                    if self.config.rules.within_limits(&c) {
                        pool.push(c);
                    }
                }
            }
        }
        // Seated leaf categories, most-used first.
        let mut seated: Vec<(&Category, u32)> = self
            .emit_counts
            .iter()
            .filter_map(|(c, row)| {
                let total: u32 = row.iter().sum();
                (total > 0).then_some((c, total))
            })
            .collect();
        seated.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.canonical().cmp(&b.0.canonical())));
        for (c, _) in seated {
            if pool.len() >= self.config.max_leaf_pool {
                break;
            }
            if !pool.contains(c) {
                pool.push(c.clone());
            }
        }
        pool
    }

    /// Seated expansions with count >= `min_count`, sorted by parent, then
    /// predictive probability descending, then argument.
    pub fn extract_grammar(&self, min_count: u32) -> Vec<GrammarRule> {
        let mut rules: Vec<GrammarRule> = Vec::new();
        for ((parent, kind), r) in &self.restaurants {
            for (y, &n) in &r.counts {
                if n >= min_count.max(1) {
                    rules.push(GrammarRule {
                        parent: parent.clone(),
                        kind: *kind,
                        argument: y.clone(),
                        count: n,
                        prob: self.crp_log_predictive(parent, *kind, y).exp(),
                    });
                }
            }
        }
        rules.sort_by(|a, b| {
            a.parent
                .canonical()
                .cmp(&b.parent.canonical())
                .then_with(|| b.prob.partial_cmp(&a.prob).unwrap())
                .then_with(|| a.argument.canonical().cmp(&b.argument.canonical()))
        });
        rules
    }

    /// Per-parent leaf emission predictive rows, for reporting.
    pub fn emission_table(&self) -> BTreeMap<Category, Vec<f64>> {
        self.emit_counts
            .keys()
            .map(|parent| {
                let row = (0..self.config.n_tags)
                    .map(|t| self.emit_log_pred(parent, t).exp())
                    .collect();
                (parent.clone(), row)
            })
            .collect()
    }

    /// Read-only stick-breaking view of one restaurant: posterior weights
    /// per seated argument plus the G0 remainder mass.
    pub fn stick_weights(
        &self,
        parent: &Category,
        kind: CombinatorKind,
    ) -> (Vec<(Category, f64)>, f64) {
        match self.restaurants.get(&(parent.clone(), kind)) {
            Some(r) => {
                let denom = r.total as f64 + self.config.alpha_dp;
                let weights = r
                    .counts
                    .iter()
                    .map(|(y, &n)| (y.clone(), n as f64 / denom))
                    .collect();
                (weights, self.config.alpha_dp / denom)
            }
            None => (Vec::new(), 1.0),
        }
    }
}

/// One induced rule row of the grammar dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrammarRule {
    pub parent: Category,
    pub kind: CombinatorKind,
    pub argument: Category,
    pub count: u32,
    pub prob: f64,
}

/// Chart scorer backed by the collapsed predictive distributions.
pub struct HdpScorer<'a> {
    state: &'a HdpState,
}

impl<'a> HdpScorer<'a> {
    pub fn new(state: &'a HdpState) -> Self {
        HdpScorer { state }
    }
}

impl ExpansionScorer for HdpScorer<'_> {
    fn binary_log_weight(&self, parent: &Category, comb: &Combinator, argument: &Category) -> f64 {
        self.state.kind_log_pred(parent, comb.kind())
            + self.state.crp_log_predictive(parent, comb.kind(), argument)
    }

    fn unary_log_weight(&self, _: &Category, _: &Combinator, _: &Category) -> f64 {
        // Raising is modeled only through the fused binary kinds.
        f64::NEG_INFINITY
    }

    fn leaf_log_weight(&self, cat: &Category, token: &str) -> f64 {
        match token.parse::<usize>() {
            Ok(tag) if tag < self.state.config.n_tags => {
                self.state.kind_log_pred(cat, CombinatorKind::Lex)
                    + self.state.emit_log_pred(cat, tag)
            }
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Chart tokens for a tagged sentence: the tag ids as strings.
pub fn tag_tokens(sent: &crate::corpus::TaggedSentence) -> Vec<String> {
    sent.tags.iter().map(|t| t.to_string()).collect()
}

/// Lexicon offering every pool category to every tag, at weight 1.
pub fn pool_lexicon(pool: &[Category], n_tags: usize) -> Lexicon {
    let mut lex = Lexicon::new();
    for t in 0..n_tags {
        let tok = t.to_string();
        for c in pool {
            lex.insert(tok.clone(), c.clone(), 1.0);
        }
    }
    lex
}

/// Initialize by sampling each sentence's derivation from a uniform-weight
/// chart over the atom-and-functor pool, then seating all events.
pub fn hdp_init(
    corpus: &TaggedCorpus,
    config: HdpConfig,
    rng: &mut impl Rng,
) -> Result<HdpState, HdpError> {
    config.validate()?;
    if corpus.sentences.is_empty() {
        return Err(HdpError::EmptyCorpus);
    }
    let mut state = HdpState {
        config,
        kind_counts: BTreeMap::new(),
        kind_totals: BTreeMap::new(),
        restaurants: BTreeMap::new(),
        emit_counts: BTreeMap::new(),
        derivations: Vec::new(),
    };
    let pool = state.leaf_pool();
    let lex = pool_lexicon(&pool, state.config.n_tags);
    let root = state.config.root.clone();
    let rules = state.config.rules.clone();
    for (s, sent) in corpus.sentences.iter().enumerate() {
        let tokens = tag_tokens(sent);
        let mut chart = build_chart(&tokens, &lex, &rules, &root)
            .map_err(|_| HdpError::NoParse { sentence: s })?;
        chart.compute_inside(&UniformScorer);
        let d = chart
            .sample_derivation(&root, &UniformScorer, rng)
            .map_err(|_| HdpError::NoParse { sentence: s })?;
        for e in &derivation_events(&d)? {
            state.seat(e);
        }
        state.derivations.push(d);
    }
    Ok(state)
}

/// One collapsed Gibbs iteration: resample every sentence's derivation from
/// the predictive-scored chart with a Metropolis-Hastings correction, then
/// return the collapsed log joint.
pub fn hdp_gibbs_iteration(
    state: &mut HdpState,
    corpus: &TaggedCorpus,
    rng: &mut impl Rng,
) -> Result<f64, HdpError> {
    let root = state.config.root.clone();
    for s in 0..corpus.sentences.len() {
        let d_old = state.derivations[s].clone();
        let old_events = derivation_events(&d_old)?;
        for e in &old_events {
            state.unseat(e);
        }

        // Lexicon pool from the remaining counts, plus the old derivation's
        // leaf categories so the reverse move stays proposable.
        let mut pool = state.leaf_pool();
        for (_, cat) in d_old.leaves() {
            if !pool.contains(cat) {
                pool.push(cat.clone());
            }
        }
        let lex = pool_lexicon(&pool, state.config.n_tags);
        let tokens = tag_tokens(&corpus.sentences[s]);

        let mut widened = state.config.rules.clone();
        widened.max_depth += 1;
        let (d_new, q_new, q_old) = {
            let scorer = HdpScorer::new(state);
            let mut attempt = |rules: &RuleConfig| {
                let mut chart = build_chart(&tokens, &lex, rules, &root).ok()?;
                chart.compute_inside(&scorer);
                chart.sample_derivation(&root, &scorer, rng).ok()
            };
            let d_new = match attempt(&state.config.rules) {
                Some(d) => d,
                // Escape rule: widen the depth cap by one and retry once.
                None => attempt(&widened).ok_or(HdpError::NoParse { sentence: s })?,
            };
            let q_new = derivation_log_weight(&d_new, &scorer, &lex);
            let q_old = derivation_log_weight(&d_old, &scorer, &lex);
            (d_new, q_new, q_old)
        };
        let new_events = derivation_events(&d_new)?;

        // True collapsed probabilities via sequential seating.
        let p_new = seq_log_prob(state, &new_events);
        let p_old = seq_log_prob(state, &old_events);

        let ln_accept = (p_new - q_new) - (p_old - q_old);
        let accept = ln_accept >= 0.0 || rng.gen::<f64>().ln() < ln_accept;
        let chosen_events = if accept { &new_events } else { &old_events };
        for e in chosen_events {
            state.seat(e);
        }
        if accept {
            state.derivations[s] = d_new;
        }
    }
    Ok(state.log_joint())
}

/// Log probability of seating `events` in order, leaving counts unchanged.
fn seq_log_prob(state: &mut HdpState, events: &[Event]) -> f64 {
    let mut lp = 0.0;
    for e in events {
        lp += state.event_log_predictive(e);
        state.seat(e);
    }
    for e in events.iter().rev() {
        state.unseat(e);
    }
    lp
}
