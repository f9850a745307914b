//! Synthetic corpus generation from an explicit probabilistic CCG: the
//! oracle source for end-to-end evaluation. Sentences are generated
//! top-down from the root; gold trees, gold tags, and (optionally) paired
//! scenes are recorded.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::category::{enumerate_expansions, Category, CombinatorKind, RuleConfig};
use crate::chart::Derivation;
use crate::corpus::{TaggedCorpus, TaggedSentence};
use crate::grounding::{Alphabets, Modality, Scene, SceneObject};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRule {
    pub parent: Category,
    pub kind: CombinatorKind,
    pub argument: Category,
    pub prob: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTemplates {
    pub alphabets: Alphabets,
    /// word -> (modality name, symbol id); bound words force that symbol
    /// into their sentence's scene.
    pub bindings: BTreeMap<String, (String, usize)>,
    #[serde(default)]
    pub n_distractors: usize,
}

/// An explicit generator grammar: per parent, a leaf probability plus
/// binary expansion rules; leaves emit tags, tags emit word forms.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthGrammarSpec {
    pub root: Category,
    pub rules: Vec<SynthRule>,
    /// P(leaf | parent), keyed by category; absent means 0.
    pub leaf_prob: BTreeMap<Category, f64>,
    /// Leaf tag distribution per category; probabilities sum to 1.
    pub lexicon: BTreeMap<Category, Vec<(usize, f64)>>,
    /// Word forms per tag id, drawn uniformly.
    pub words: Vec<Vec<String>>,
    pub length_cap: usize,
    #[serde(default = "default_n_sentences")]
    pub n_sentences: usize,
    #[serde(default)]
    pub rule_config: RuleConfig,
    #[serde(default)]
    pub scene: Option<SceneTemplates>,
}

fn default_n_sentences() -> usize {
    100
}

/// Minimum probability of generating a tree within the length cap before
/// the spec is declared non-generating.
const MIN_TERMINATION_PROB: f64 = 0.05;
const MAX_TREE_TRIES: usize = 10_000;

impl SynthGrammarSpec {
    /// Left/right children of one rule, via the expansion inversion.
    pub fn children(&self, rule: &SynthRule) -> Option<(Category, Category)> {
        let pool: BTreeSet<Category> = [rule.argument.clone()].into_iter().collect();
        enumerate_expansions(&rule.parent, &self.rule_config, &pool)
            .into_iter()
            .find(|e| e.comb.kind() == rule.kind)
            .and_then(|e| Some((e.left, e.right?)))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.length_cap == 0 {
            return Err(HarnessError::Spec("length_cap must be positive".into()));
        }
        // Per-parent probabilities sum to 1.
        let mut parents: BTreeSet<&Category> = self.rules.iter().map(|r| &r.parent).collect();
        parents.extend(self.leaf_prob.keys());
        for parent in parents {
            let leaf = self.leaf_prob.get(parent).copied().unwrap_or(0.0);
            if !(0.0..=1.0).contains(&leaf) {
                return Err(HarnessError::Spec(format!(
                    "leaf probability for {parent} outside [0, 1]"
                )));
            }
            let total: f64 = leaf
                + self
                    .rules
                    .iter()
                    .filter(|r| &r.parent == parent)
                    .map(|r| r.prob)
                    .sum::<f64>();
            if (total - 1.0).abs() > 1e-9 {
                return Err(HarnessError::Spec(format!(
                    "probabilities for {parent} sum to {total}, expected 1"
                )));
            }
            if leaf > 0.0 && !self.lexicon.contains_key(parent) {
                return Err(HarnessError::Spec(format!(
                    "{parent} can be a leaf but has no lexicon entry"
                )));
            }
        }
        for rule in &self.rules {
            if rule.prob < 0.0 {
                return Err(HarnessError::Spec("negative rule probability".into()));
            }
            if self.children(rule).is_none() {
                return Err(HarnessError::Spec(format!(
                    "rule {} -{:?}-> {} does not satisfy its combinator schema",
                    rule.parent, rule.kind, rule.argument
                )));
            }
        }
        for (cat, dist) in &self.lexicon {
            let total: f64 = dist.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(HarnessError::Spec(format!(
                    "lexicon distribution for {cat} sums to {total}"
                )));
            }
            for &(tag, p) in dist {
                if p < 0.0 {
                    return Err(HarnessError::Spec("negative lexicon probability".into()));
                }
                if tag >= self.words.len() || self.words[tag].is_empty() {
                    return Err(HarnessError::Spec(format!(
                        "tag {tag} has no word forms"
                    )));
                }
            }
        }
        if let Some(scene) = &self.scene {
            for (word, (modality, sym)) in &scene.bindings {
                let m = parse_modality(modality).ok_or_else(|| {
                    HarnessError::Spec(format!("unknown modality `{modality}` for `{word}`"))
                })?;
                if *sym >= scene.alphabets.size(m) {
                    return Err(HarnessError::Spec(format!(
                        "binding for `{word}` uses symbol {sym} outside the {modality} alphabet"
                    )));
                }
            }
        }
        // Expectation check: probability of finishing within the length cap.
        let p = self.termination_prob();
        if p < MIN_TERMINATION_PROB {
            return Err(HarnessError::Spec(format!(
                "grammar generates a tree within the length cap with probability {p:.4} < {MIN_TERMINATION_PROB}"
            )));
        }
        Ok(())
    }

    /// P(tree rooted at `root` has at most `length_cap` leaves), by fixed-
    /// point iteration of the leaf-count distribution.
    pub fn termination_prob(&self) -> f64 {
        // Reachable categories.
        let mut reach: BTreeSet<Category> = [self.root.clone()].into_iter().collect();
        loop {
            let mut added = false;
            for rule in &self.rules {
                if reach.contains(&rule.parent) {
                    if let Some((l, r)) = self.children(rule) {
                        added |= reach.insert(l);
                        added |= reach.insert(r);
                    }
                }
            }
            if !added {
                break;
            }
        }
        let cap = self.length_cap;
        let mut f: BTreeMap<&Category, Vec<f64>> =
            reach.iter().map(|c| (c, vec![0.0; cap + 1])).collect();
        let iters = 4 * (cap + reach.len()) + 50;
        for _ in 0..iters {
            let mut next: BTreeMap<&Category, Vec<f64>> =
                reach.iter().map(|c| (c, vec![0.0; cap + 1])).collect();
            for cat in &reach {
                if let Some(&leaf) = self.leaf_prob.get(cat) {
                    next.get_mut(cat).unwrap()[1] = leaf;
                }
            }
            for rule in &self.rules {
                if !reach.contains(&rule.parent) {
                    continue;
                }
                let (l, r) = self.children(rule).expect("validated rule");
                let fl = &f[&l];
                let fr = &f[&r];
                let row = next.get_mut(&rule.parent).unwrap();
                for i in 1..=cap {
                    if fl[i] == 0.0 {
                        continue;
                    }
                    for j in 1..=(cap - i) {
                        row[i + j] += rule.prob * fl[i] * fr[j];
                    }
                }
            }
            f = next;
        }
        f[&self.root].iter().sum()
    }

    fn sample_tree(&self, cat: &Category, rng: &mut impl Rng, budget: &mut usize) -> Option<Derivation> {
        if *budget == 0 {
            return None;
        }
        let leaf = self.leaf_prob.get(cat).copied().unwrap_or(0.0);
        let u: f64 = rng.gen();
        if u < leaf {
            *budget -= 1;
            let dist = &self.lexicon[cat];
            let mut v: f64 = rng.gen();
            let mut tag = dist.last().unwrap().0;
            for &(t, p) in dist {
                if v < p {
                    tag = t;
                    break;
                }
                v -= p;
            }
            return Some(Derivation::Leaf {
                start: 0,
                cat: cat.clone(),
                token: tag.to_string(),
            });
        }
        let mut v = u - leaf;
        let mut chosen = None;
        for rule in self.rules.iter().filter(|r| &r.parent == cat) {
            if v < rule.prob {
                chosen = Some(rule);
                break;
            }
            v -= rule.prob;
        }
        let rule = chosen?;
        let (lcat, rcat) = self.children(rule).expect("validated rule");
        let left = self.sample_tree(&lcat, rng, budget)?;
        let right = self.sample_tree(&rcat, rng, budget)?;
        let expansion = enumerate_expansions(
            cat,
            &self.rule_config,
            &[rule.argument.clone()].into_iter().collect(),
        )
        .into_iter()
        .find(|e| e.comb.kind() == rule.kind)
        .expect("validated rule");
        Some(Derivation::Binary {
            cat: cat.clone(),
            comb: expansion.comb,
            left: Box::new(left),
            right: Box::new(right),
        })
    }
}

fn parse_modality(name: &str) -> Option<Modality> {
    Modality::GROUNDED.into_iter().find(|m| m.label() == name)
}

fn renumber_leaves(d: &mut Derivation, next: &mut usize) {
    match d {
        Derivation::Leaf { start, .. } => {
            *start = *next;
            *next += 1;
        }
        Derivation::Unary { child, .. } => renumber_leaves(child, next),
        Derivation::Binary { left, right, .. } => {
            renumber_leaves(left, next);
            renumber_leaves(right, next);
        }
    }
}

/// Generated corpus bundle.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    /// Raw word sentences.
    pub sentences: Vec<Vec<String>>,
    /// Gold tags aligned with `sentences`.
    pub tagged: TaggedCorpus,
    /// Gold derivations; leaf tokens are tag ids.
    pub gold_trees: Vec<Derivation>,
    pub scenes: Option<Vec<Scene>>,
}

/// Generate `n` sentences (overriding `spec.n_sentences`).
pub fn synth_corpus(
    spec: &SynthGrammarSpec,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SynthOutput, HarnessError> {
    spec.validate()?;
    let mut sentences = Vec::with_capacity(n);
    let mut tagged = Vec::with_capacity(n);
    let mut gold_trees = Vec::with_capacity(n);
    let mut scenes = spec.scene.as_ref().map(|_| Vec::with_capacity(n));
    for _ in 0..n {
        let mut tree = None;
        for _ in 0..MAX_TREE_TRIES {
            let mut budget = spec.length_cap;
            if let Some(t) = spec.sample_tree(&spec.root, rng, &mut budget) {
                tree = Some(t);
                break;
            }
        }
        let mut tree = tree.ok_or_else(|| {
            HarnessError::Spec("failed to generate a tree within the length cap".into())
        })?;
        renumber_leaves(&mut tree, &mut 0);
        let tags: Vec<usize> = tree
            .leaves()
            .iter()
            .map(|(tok, _)| tok.parse().expect("synth leaves are tag ids"))
            .collect();
        let words: Vec<String> = tags
            .iter()
            .map(|&t| {
                let forms = &spec.words[t];
                forms[rng.gen_range(0..forms.len())].clone()
            })
            .collect();
        if let (Some(scenes), Some(tmpl)) = (scenes.as_mut(), spec.scene.as_ref()) {
            scenes.push(generate_scene(tmpl, &words, rng));
        }
        tagged.push(TaggedSentence {
            tokens: words.clone(),
            tags,
        });
        sentences.push(words);
        gold_trees.push(tree);
    }
    Ok(SynthOutput {
        sentences,
        tagged: TaggedCorpus {
            sentences: tagged,
            n_tags: spec.words.len(),
        },
        gold_trees,
        scenes,
    })
}

/// A scene consistent with the sentence's bound words: bound action, color,
/// geometry, and spatial symbols are forced present; everything else is
/// random.
fn generate_scene(tmpl: &SceneTemplates, words: &[String], rng: &mut impl Rng) -> Scene {
    let al = &tmpl.alphabets;
    let mut action_sym = rng.gen_range(0..al.action);
    let mut referent = SceneObject {
        color_sym: rng.gen_range(0..al.color),
        geom_sym: rng.gen_range(0..al.geometry),
        position: vec![rng.gen::<f64>(), rng.gen::<f64>()],
    };
    let mut spatial_bind: Option<usize> = None;
    for w in words {
        if let Some((modality, sym)) = tmpl.bindings.get(w) {
            match parse_modality(modality).expect("validated binding") {
                Modality::Action => action_sym = *sym,
                Modality::Color => referent.color_sym = *sym,
                Modality::Geometry => referent.geom_sym = *sym,
                Modality::Spatial => spatial_bind = Some(*sym),
                Modality::None_ => {}
            }
        }
    }
    let mut objects = vec![referent];
    let n_objects = if spatial_bind.is_some() {
        1 + tmpl.n_distractors.max(1)
    } else {
        1 + tmpl.n_distractors
    };
    while objects.len() < n_objects {
        objects.push(SceneObject {
            color_sym: rng.gen_range(0..al.color),
            geom_sym: rng.gen_range(0..al.geometry),
            position: vec![rng.gen::<f64>(), rng.gen::<f64>()],
        });
    }
    let mut spatial = BTreeMap::new();
    for i in 0..objects.len() {
        for j in 0..objects.len() {
            if i != j {
                spatial.insert((i, j), rng.gen_range(0..al.spatial));
            }
        }
    }
    if let Some(sym) = spatial_bind {
        spatial.insert((0, 1), sym);
    }
    Scene {
        action_sym,
        objects,
        spatial,
    }
}
