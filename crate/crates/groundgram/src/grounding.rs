//! Cross-situational word grounding: each word type selects one of four
//! perceptual modalities (action, color, spatial, geometry) or none, and a
//! per-(word, modality) multinomial over that modality's quantized symbol
//! alphabet. Inference is collapsed Gibbs over per-token (modality, symbol)
//! assignments, restricted to symbols present in the paired scene.
//!
//! The joint over assignments is a product of Dirichlet-multinomial
//! marginals (modality counts per word, symbol counts per word-modality)
//! supported on scene-present symbols, so the full conditional is the
//! predictive restricted to the available options.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::corpus::TaggedSentence;

/// Grounding modalities, in tie-break order; `None_` grounds nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    Action,
    Color,
    Spatial,
    Geometry,
    None_,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Action,
        Modality::Color,
        Modality::Spatial,
        Modality::Geometry,
        Modality::None_,
    ];

    pub const GROUNDED: [Modality; 4] = [
        Modality::Action,
        Modality::Color,
        Modality::Spatial,
        Modality::Geometry,
    ];

    pub fn index(self) -> usize {
        match self {
            Modality::Action => 0,
            Modality::Color => 1,
            Modality::Spatial => 2,
            Modality::Geometry => 3,
            Modality::None_ => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Modality::Action => "action",
            Modality::Color => "color",
            Modality::Spatial => "spatial",
            Modality::Geometry => "geometry",
            Modality::None_ => "none",
        }
    }
}

/// Symbol alphabet sizes per grounded modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabets {
    pub action: usize,
    pub color: usize,
    pub spatial: usize,
    pub geometry: usize,
}

impl Alphabets {
    pub fn size(&self, m: Modality) -> usize {
        match m {
            Modality::Action => self.action,
            Modality::Color => self.color,
            Modality::Spatial => self.spatial,
            Modality::Geometry => self.geometry,
            Modality::None_ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub color_sym: usize,
    pub geom_sym: usize,
    pub position: Vec<f64>,
}

/// One perceived scene: a quantized action symbol, objects with quantized
/// color/geometry, and a quantized spatial symbol per ordered object pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub action_sym: usize,
    pub objects: Vec<SceneObject>,
    /// Keyed by ordered pair (from-object, to-object). Serialized as
    /// (from, to, symbol) triples so the file format stays plain JSON.
    #[serde(with = "spatial_serde")]
    pub spatial: BTreeMap<(usize, usize), usize>,
}

mod spatial_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<(usize, usize), usize>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let v: Vec<(usize, usize, usize)> = m.iter().map(|(&(a, b), &c)| (a, b, c)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<(usize, usize), usize>, D::Error> {
        let v: Vec<(usize, usize, usize)> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|(a, b, c)| ((a, b), c)).collect())
    }
}

impl Scene {
    pub fn validate(&self, alphabets: &Alphabets) -> Result<(), GroundingError> {
        if self.objects.is_empty() {
            return Err(GroundingError::EmptyScene);
        }
        if self.action_sym >= alphabets.action {
            return Err(GroundingError::SymbolOutOfRange {
                modality: Modality::Action,
                symbol: self.action_sym,
            });
        }
        for o in &self.objects {
            if o.color_sym >= alphabets.color {
                return Err(GroundingError::SymbolOutOfRange {
                    modality: Modality::Color,
                    symbol: o.color_sym,
                });
            }
            if o.geom_sym >= alphabets.geometry {
                return Err(GroundingError::SymbolOutOfRange {
                    modality: Modality::Geometry,
                    symbol: o.geom_sym,
                });
            }
        }
        for (&(i, j), &s) in &self.spatial {
            if i == j || i >= self.objects.len() || j >= self.objects.len() {
                return Err(GroundingError::BadSpatialPair { from: i, to: j });
            }
            if s >= alphabets.spatial {
                return Err(GroundingError::SymbolOutOfRange {
                    modality: Modality::Spatial,
                    symbol: s,
                });
            }
        }
        Ok(())
    }

    /// Sorted distinct symbols present for a modality.
    pub fn present(&self, m: Modality) -> Vec<usize> {
        let mut syms: Vec<usize> = match m {
            Modality::Action => vec![self.action_sym],
            Modality::Color => self.objects.iter().map(|o| o.color_sym).collect(),
            Modality::Geometry => self.objects.iter().map(|o| o.geom_sym).collect(),
            Modality::Spatial => self.spatial.values().copied().collect(),
            Modality::None_ => Vec::new(),
        };
        syms.sort_unstable();
        syms.dedup();
        syms
    }
}

#[derive(Error, Debug, PartialEq)]
pub enum GroundingError {
    #[error("scene has no objects")]
    EmptyScene,
    #[error("sentence {0} has no paired scene")]
    MissingScene(usize),
    #[error("{} symbol {symbol} outside its alphabet", modality.label())]
    SymbolOutOfRange { modality: Modality, symbol: usize },
    #[error("spatial pair ({from},{to}) is invalid")]
    BadSpatialPair { from: usize, to: usize },
    #[error("priors must be positive")]
    BadPrior,
}

/// Dirichlet priors: a modality pseudo-count row per POS tag id, and a
/// symmetric symbol pseudo-count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundingPriors {
    /// phi[tag][modality index]; tags past the end use the last row.
    pub phi: Vec<[f64; 5]>,
    pub theta: f64,
}

impl GroundingPriors {
    pub fn symmetric(n_tags: usize, phi: f64, theta: f64) -> Self {
        GroundingPriors {
            phi: vec![[phi; 5]; n_tags.max(1)],
            theta,
        }
    }

    /// Grounded modalities get pseudo-count 1, `none` gets 0.1. A fully
    /// symmetric prior lets `none` beat even a perfectly consistent
    /// grounding, because grounding always pays the symbol marginal
    /// (about ln alphabet-size in the best case) while `none` pays nothing.
    pub fn default_for(n_tags: usize, theta: f64) -> Self {
        GroundingPriors {
            phi: vec![[1.0, 1.0, 1.0, 1.0, 0.1]; n_tags.max(1)],
            theta,
        }
    }

    fn row(&self, tag: usize) -> &[f64; 5] {
        self.phi.get(tag).unwrap_or_else(|| self.phi.last().unwrap())
    }

    fn validate(&self) -> Result<(), GroundingError> {
        if self.theta <= 0.0
            || self.phi.is_empty()
            || self.phi.iter().flatten().any(|&p| p <= 0.0)
        {
            return Err(GroundingError::BadPrior);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Assignment {
    modality: Modality,
    symbol: Option<usize>,
}

/// Collapsed Gibbs state over per-token (modality, symbol) assignments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundingState {
    vocab: Vec<String>,
    alphabets: Alphabets,
    priors: GroundingPriors,
    /// Fixed per-word modality prior row, chosen from the word's majority tag.
    word_phi: Vec<[f64; 5]>,
    /// Token stream: (word id, pair id).
    tokens: Vec<(usize, usize)>,
    assignments: Vec<Assignment>,
    /// Sorted distinct present symbols, per pair per grounded modality.
    present: Vec<[Vec<usize>; 4]>,
    mod_counts: Vec<[u32; 5]>,
    sym_counts: Vec<[Vec<u32>; 4]>,
}

impl GroundingState {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn alphabets(&self) -> &Alphabets {
        &self.alphabets
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.vocab.iter().position(|w| w == word)
    }

    /// Current per-token (modality, symbol) assignments in corpus order.
    pub fn token_assignments(&self) -> Vec<(Modality, Option<usize>)> {
        self.assignments.iter().map(|a| (a.modality, a.symbol)).collect()
    }

    fn remove(&mut self, t: usize) {
        let (w, _) = self.tokens[t];
        let a = self.assignments[t];
        self.mod_counts[w][a.modality.index()] -= 1;
        if let Some(s) = a.symbol {
            self.sym_counts[w][a.modality.index()][s] -= 1;
        }
    }

    fn insert(&mut self, t: usize, a: Assignment) {
        let (w, _) = self.tokens[t];
        self.assignments[t] = a;
        self.mod_counts[w][a.modality.index()] += 1;
        if let Some(s) = a.symbol {
            self.sym_counts[w][a.modality.index()][s] += 1;
        }
    }

    /// Predictive probability of modality `m` for word `w` (token removed).
    fn mod_pred(&self, w: usize, m: Modality) -> f64 {
        let phi = &self.word_phi[w];
        let total: f64 =
            self.mod_counts[w].iter().sum::<u32>() as f64 + phi.iter().sum::<f64>();
        (self.mod_counts[w][m.index()] as f64 + phi[m.index()]) / total
    }

    /// Predictive probability of symbol `s` under (word `w`, modality `m`).
    fn sym_pred(&self, w: usize, m: Modality, s: usize) -> f64 {
        let a = self.alphabets.size(m) as f64;
        let counts = &self.sym_counts[w][m.index()];
        let total: u32 = counts.iter().sum();
        (counts[s] as f64 + self.priors.theta) / (total as f64 + a * self.priors.theta)
    }

    /// One Gibbs sweep over all tokens; returns the collapsed log joint.
    pub fn gibbs_sweep(&mut self, rng: &mut impl Rng) -> f64 {
        let mut options: Vec<(Assignment, f64)> = Vec::new();
        for t in 0..self.tokens.len() {
            self.remove(t);
            let (w, p) = self.tokens[t];
            options.clear();
            for m in Modality::GROUNDED {
                let mp = self.mod_pred(w, m);
                for si in 0..self.present[p][m.index()].len() {
                    let s = self.present[p][m.index()][si];
                    options.push((
                        Assignment {
                            modality: m,
                            symbol: Some(s),
                        },
                        mp * self.sym_pred(w, m, s),
                    ));
                }
            }
            options.push((
                Assignment {
                    modality: Modality::None_,
                    symbol: None,
                },
                self.mod_pred(w, Modality::None_),
            ));
            let total: f64 = options.iter().map(|(_, p)| p).sum();
            let u: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut choice = options.len() - 1;
            for (i, (_, p)) in options.iter().enumerate() {
                acc += p;
                if u < acc {
                    choice = i;
                    break;
                }
            }
            let a = options[choice].0;
            self.insert(t, a);
        }
        self.log_joint()
    }

    /// Collapsed log joint of all assignments: Dirichlet-multinomial
    /// marginals over modality counts per word and symbol counts per
    /// (word, modality).
    pub fn log_joint(&self) -> f64 {
        let mut lp = 0.0;
        for w in 0..self.vocab.len() {
            lp += dir_mult_log_weighted(&self.mod_counts[w], &self.word_phi[w]);
            for m in Modality::GROUNDED {
                lp += dir_mult_log(&self.sym_counts[w][m.index()], self.priors.theta);
            }
        }
        lp
    }

    /// Rebuild counts from assignments and verify presence constraints.
    pub fn audit(&self) -> Result<(), String> {
        let mut mod_counts = vec![[0u32; 5]; self.vocab.len()];
        let mut sym_counts: Vec<[Vec<u32>; 4]> = (0..self.vocab.len())
            .map(|_| {
                [
                    vec![0; self.alphabets.action],
                    vec![0; self.alphabets.color],
                    vec![0; self.alphabets.spatial],
                    vec![0; self.alphabets.geometry],
                ]
            })
            .collect();
        for (t, &(w, p)) in self.tokens.iter().enumerate() {
            let a = self.assignments[t];
            mod_counts[w][a.modality.index()] += 1;
            match (a.modality, a.symbol) {
                (Modality::None_, None) => {}
                (Modality::None_, Some(_)) => {
                    return Err(format!("token {t} assigned none carries a symbol"));
                }
                (m, Some(s)) => {
                    if !self.present[p][m.index()].contains(&s) {
                        return Err(format!(
                            "token {t} grounded in {} symbol {s} absent from its scene",
                            m.label()
                        ));
                    }
                    sym_counts[w][m.index()][s] += 1;
                }
                (m, None) => {
                    return Err(format!("token {t} assigned {} without a symbol", m.label()));
                }
            }
        }
        if mod_counts != self.mod_counts {
            return Err("modality counts inconsistent with assignments".to_string());
        }
        if sym_counts != self.sym_counts {
            return Err("symbol counts inconsistent with assignments".to_string());
        }
        Ok(())
    }

    /// Posterior summary per word, sorted by word.
    pub fn grounded_lexicon(&self) -> Vec<GroundedLexiconEntry> {
        let mut order: Vec<usize> = (0..self.vocab.len()).collect();
        order.sort_by(|&a, &b| self.vocab[a].cmp(&self.vocab[b]));
        order
            .into_iter()
            .map(|w| {
                let phi = &self.word_phi[w];
                let total: f64 =
                    self.mod_counts[w].iter().sum::<u32>() as f64 + phi.iter().sum::<f64>();
                let posterior: Vec<f64> = (0..5)
                    .map(|m| (self.mod_counts[w][m] as f64 + phi[m]) / total)
                    .collect();
                // Argmax with ties toward the earlier modality.
                let mut best = 0;
                for m in 1..5 {
                    if posterior[m] > posterior[best] {
                        best = m;
                    }
                }
                let dominant = Modality::ALL[best];
                let symbol_distribution = match dominant {
                    Modality::None_ => Vec::new(),
                    m => (0..self.alphabets.size(m))
                        .map(|s| self.sym_pred(w, m, s))
                        .collect(),
                };
                GroundedLexiconEntry {
                    word: self.vocab[w].clone(),
                    dominant,
                    confidence: posterior[best],
                    modality_posterior: posterior,
                    symbol_distribution,
                }
            })
            .collect()
    }
}

/// Posterior grounding summary for one word type.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundedLexiconEntry {
    pub word: String,
    pub dominant: Modality,
    /// Posterior over (action, color, spatial, geometry, none).
    pub modality_posterior: Vec<f64>,
    /// Posterior predictive over the dominant modality's alphabet; empty
    /// when the dominant modality is none.
    pub symbol_distribution: Vec<f64>,
    pub confidence: f64,
}

fn dir_mult_log(counts: &[u32], alpha: f64) -> f64 {
    let d = counts.len() as f64;
    let total: u32 = counts.iter().sum();
    let mut lp = ln_gamma(d * alpha) - ln_gamma(d * alpha + total as f64);
    for &n in counts {
        if n > 0 {
            lp += ln_gamma(alpha + n as f64) - ln_gamma(alpha);
        }
    }
    lp
}

fn dir_mult_log_weighted(counts: &[u32; 5], alpha: &[f64; 5]) -> f64 {
    let asum: f64 = alpha.iter().sum();
    let total: u32 = counts.iter().sum();
    let mut lp = ln_gamma(asum) - ln_gamma(asum + total as f64);
    for (i, &n) in counts.iter().enumerate() {
        if n > 0 {
            lp += ln_gamma(alpha[i] + n as f64) - ln_gamma(alpha[i]);
        }
    }
    lp
}

/// Initialize with uniformly random assignments over each token's available
/// (modality, symbol) options.
pub fn ground_init(
    sentences: &[TaggedSentence],
    scenes: &[Scene],
    alphabets: Alphabets,
    priors: GroundingPriors,
    rng: &mut impl Rng,
) -> Result<GroundingState, GroundingError> {
    priors.validate()?;
    if sentences.len() != scenes.len() {
        return Err(GroundingError::MissingScene(
            sentences.len().min(scenes.len()),
        ));
    }
    for scene in scenes {
        scene.validate(&alphabets)?;
    }

    let mut vocab: Vec<String> = Vec::new();
    let mut ids: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut tokens: Vec<(usize, usize)> = Vec::new();
    // Majority tag per word, ties toward the lowest tag id.
    let mut tag_counts: Vec<std::collections::BTreeMap<usize, u32>> = Vec::new();
    for (p, sent) in sentences.iter().enumerate() {
        for (tok, &tag) in sent.tokens.iter().zip(&sent.tags) {
            let w = *ids.entry(tok.as_str()).or_insert_with(|| {
                vocab.push(tok.clone());
                tag_counts.push(std::collections::BTreeMap::new());
                vocab.len() - 1
            });
            *tag_counts[w].entry(tag).or_insert(0) += 1;
            tokens.push((w, p));
        }
    }

    let word_phi: Vec<[f64; 5]> = tag_counts
        .iter()
        .map(|tc| {
            let (&tag, _) = tc.iter().max_by_key(|&(&t, &n)| (n, std::cmp::Reverse(t))).unwrap();
            *priors.row(tag)
        })
        .collect();

    let present: Vec<[Vec<usize>; 4]> = scenes
        .iter()
        .map(|scene| {
            [
                scene.present(Modality::Action),
                scene.present(Modality::Color),
                scene.present(Modality::Spatial),
                scene.present(Modality::Geometry),
            ]
        })
        .collect();

    let sym_counts = (0..vocab.len())
        .map(|_| {
            [
                vec![0; alphabets.action],
                vec![0; alphabets.color],
                vec![0; alphabets.spatial],
                vec![0; alphabets.geometry],
            ]
        })
        .collect();
    let n_tokens = tokens.len();
    let mut state = GroundingState {
        mod_counts: vec![[0; 5]; vocab.len()],
        sym_counts,
        assignments: vec![
            Assignment {
                modality: Modality::None_,
                symbol: None
            };
            n_tokens
        ],
        vocab,
        alphabets,
        priors,
        word_phi,
        tokens,
        present,
    };

    for t in 0..state.tokens.len() {
        let p = state.tokens[t].1;
        let mut options: Vec<Assignment> = Vec::new();
        for m in Modality::GROUNDED {
            for &s in &state.present[p][m.index()] {
                options.push(Assignment {
                    modality: m,
                    symbol: Some(s),
                });
            }
        }
        options.push(Assignment {
            modality: Modality::None_,
            symbol: None,
        });
        let a = options[rng.gen_range(0..options.len())];
        // Counts start at zero, so no removal precedes the first insert.
        state.insert(t, a);
    }
    Ok(state)
}

/// Resolved instruction slots; `ambiguous` flags an exact tie in any slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub action: Option<usize>,
    pub referent: Option<usize>,
    pub referent_color: Option<usize>,
    pub landmark: Option<usize>,
    pub ambiguous: bool,
}

/// Resolve an instruction against a scene: pick the action symbol, referent
/// object, referent color, and landmark object maximizing the grounded
/// likelihood of the sentence's modality-dominant words. Deterministic in
/// (state, sentence, scene); ties go to the lowest index and set the
/// ambiguity flag.
pub fn resolve_instruction(
    sentence: &TaggedSentence,
    scene: &Scene,
    state: &GroundingState,
) -> Resolution {
    let lexicon = state.grounded_lexicon();
    let dominant = |word: &str| -> Option<Modality> {
        lexicon
            .iter()
            .find(|e| e.word == word)
            .map(|e| e.dominant)
    };
    let mut by_modality: [Vec<usize>; 4] = Default::default();
    for tok in &sentence.tokens {
        if let (Some(m), Some(w)) = (dominant(tok), state.word_id(tok)) {
            if m != Modality::None_ {
                by_modality[m.index()].push(w);
            }
        }
    }

    let mut ambiguous = false;
    // Best index among scored candidates; ties -> lowest, flagged.
    let mut argmax = |scores: &[f64]| -> Option<usize> {
        if scores.is_empty() {
            return None;
        }
        let mut best = 0;
        for (i, &sc) in scores.iter().enumerate().skip(1) {
            if sc > scores[best] {
                best = i;
            } else if sc == scores[best] {
                ambiguous = true;
            }
        }
        Some(best)
    };

    let word_score = |words: &[usize], m: Modality, sym: usize| -> f64 {
        words.iter().map(|&w| state.sym_pred(w, m, sym)).product()
    };

    let action_words = &by_modality[Modality::Action.index()];
    let action = if action_words.is_empty() {
        None
    } else {
        let present = scene.present(Modality::Action);
        let scores: Vec<f64> = present
            .iter()
            .map(|&s| word_score(action_words, Modality::Action, s))
            .collect();
        argmax(&scores).map(|i| present[i])
    };

    let color_words = &by_modality[Modality::Color.index()];
    let geom_words = &by_modality[Modality::Geometry.index()];
    let referent = if color_words.is_empty() && geom_words.is_empty() {
        None
    } else {
        let scores: Vec<f64> = scene
            .objects
            .iter()
            .map(|o| {
                word_score(color_words, Modality::Color, o.color_sym)
                    * word_score(geom_words, Modality::Geometry, o.geom_sym)
            })
            .collect();
        argmax(&scores)
    };

    let referent_color = if color_words.is_empty() {
        None
    } else {
        let present = scene.present(Modality::Color);
        let scores: Vec<f64> = present
            .iter()
            .map(|&s| word_score(color_words, Modality::Color, s))
            .collect();
        argmax(&scores).map(|i| present[i])
    };

    let spatial_words = &by_modality[Modality::Spatial.index()];
    let landmark = match (referent, spatial_words.is_empty()) {
        (Some(r), false) => {
            let candidates: Vec<usize> =
                (0..scene.objects.len()).filter(|&o| o != r).collect();
            let scores: Vec<f64> = candidates
                .iter()
                .map(|&o| {
                    scene
                        .spatial
                        .get(&(r, o))
                        .map(|&s| word_score(spatial_words, Modality::Spatial, s))
                        .unwrap_or(0.0)
                })
                .collect();
            argmax(&scores).map(|i| candidates[i])
        }
        _ => None,
    };

    Resolution {
        action,
        referent,
        referent_color,
        landmark,
        ambiguous,
    }
}
