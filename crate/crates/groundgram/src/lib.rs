//! An unsupervised pipeline from words to grammar for situated instruction
//! understanding: induce numeric POS tags over raw token sequences, ground
//! word types in discretized multimodal perceptual symbols by
//! cross-situational learning, and induce Combinatory Categorial Grammar
//! over the tagged corpus with a Bayesian nonparametric model.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`category`]: CCG categories and the combinator algebra, including the
//!   inverse "expansion" view used by the generative induction model.
//! - [`chart`]: a CKY packed-forest parser with exact counting, inside
//!   weights, Viterbi extraction, and exact derivation sampling.
//! - [`pos`]: collapsed Gibbs sampling for a Dirichlet-multinomial bigram
//!   HMM over raw tokens.
//! - [`grounding`]: a cross-situational learner linking word types to
//!   quantized perceptual symbols across four modalities, plus instruction
//!   resolution into (action, referent, color, landmark).
//! - [`hdp`]: the HDP-CCG induction model over expansion events, with
//!   collapsed Gibbs inference alternating chart sampling and reseating.
//! - [`harness`]: corpus and scene I/O, synthetic data generation,
//!   vector quantization, evaluation metrics, and pipeline configuration.

pub mod category;
pub mod chart;
pub mod corpus;
pub mod grounding;
pub mod harness;
pub mod hdp;
pub mod pos;
