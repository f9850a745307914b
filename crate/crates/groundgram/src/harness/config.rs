//! Strict TOML pipeline configuration. Unknown keys are rejected so a typo
//! cannot silently fall back to a default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::category::{Category, RuleConfig};
use crate::grounding::{Alphabets, GroundingPriors};
use crate::hdp::{BaseDistribution, HdpConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub lowercase: bool,
    pub rules: RuleConfig,
    pub pos: PosSection,
    pub grounding: GroundingSection,
    pub hdp: HdpSection,
    pub synth: Option<crate::harness::synth::SynthGrammarSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            lowercase: false,
            rules: RuleConfig::default(),
            pos: PosSection::default(),
            grounding: GroundingSection::default(),
            hdp: HdpSection::default(),
            synth: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PosSection {
    pub k: usize,
    pub alpha_t: f64,
    pub alpha_e: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
}

impl Default for PosSection {
    fn default() -> Self {
        PosSection {
            k: 10,
            alpha_t: 1.0,
            alpha_e: 0.1,
            sweeps: 200,
            burn_in: 100,
            thinning: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundingSection {
    pub theta: f64,
    pub phi_grounded: f64,
    pub phi_none: f64,
    pub sweeps: usize,
    pub alphabets: Alphabets,
}

impl Default for GroundingSection {
    fn default() -> Self {
        GroundingSection {
            theta: 0.1,
            phi_grounded: 1.0,
            phi_none: 0.1,
            sweeps: 200,
            alphabets: Alphabets {
                action: 4,
                color: 4,
                spatial: 4,
                geometry: 4,
            },
        }
    }
}

impl GroundingSection {
    pub fn priors(&self, n_tags: usize) -> GroundingPriors {
        let g = self.phi_grounded;
        GroundingPriors {
            phi: vec![[g, g, g, g, self.phi_none]; n_tags.max(1)],
            theta: self.theta,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HdpSection {
    pub alpha_dp: f64,
    pub gamma: f64,
    pub kind_prior: f64,
    pub emit_prior: f64,
    pub p_slash: f64,
    pub p_forward: f64,
    /// Optional explicit atom probabilities; default uniform over the
    /// configured atom set.
    pub atom_probs: Option<BTreeMap<String, f64>>,
    pub iterations: usize,
    pub chains: usize,
    pub max_leaf_pool: usize,
    pub root: String,
    pub min_rule_count: u32,
}

impl Default for HdpSection {
    fn default() -> Self {
        HdpSection {
            alpha_dp: 1.0,
            gamma: 1.0,
            kind_prior: 1.0,
            emit_prior: 0.1,
            p_slash: 0.4,
            p_forward: 0.5,
            atom_probs: None,
            iterations: 500,
            chains: 3,
            max_leaf_pool: 30,
            root: "S".to_string(),
            min_rule_count: 5,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.rules
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.pos.k < 2 {
            return Err(HarnessError::Config("pos.k must be at least 2".into()));
        }
        if self.pos.thinning == 0 {
            return Err(HarnessError::Config("pos.thinning must be positive".into()));
        }
        for (name, v) in [
            ("pos.alpha_t", self.pos.alpha_t),
            ("pos.alpha_e", self.pos.alpha_e),
            ("grounding.theta", self.grounding.theta),
            ("grounding.phi_grounded", self.grounding.phi_grounded),
            ("grounding.phi_none", self.grounding.phi_none),
            ("hdp.alpha_dp", self.hdp.alpha_dp),
            ("hdp.gamma", self.hdp.gamma),
            ("hdp.kind_prior", self.hdp.kind_prior),
            ("hdp.emit_prior", self.hdp.emit_prior),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(HarnessError::Config(format!("{name} must be positive")));
            }
        }
        if self.hdp.chains == 0 {
            return Err(HarnessError::Config("hdp.chains must be positive".into()));
        }
        self.hdp_config(1)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(spec) = &self.synth {
            spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Assemble the induction config for a corpus with `n_tags` tags.
    pub fn hdp_config(&self, n_tags: usize) -> Result<HdpConfig, crate::hdp::HdpError> {
        let base = match &self.hdp.atom_probs {
            Some(probs) => {
                BaseDistribution::new(probs.clone(), self.hdp.p_slash, self.hdp.p_forward)?
            }
            None => BaseDistribution::uniform(
                self.rules.atoms.iter().cloned().collect::<Vec<_>>(),
                self.hdp.p_slash,
            ),
        };
        let root: Category = self
            .hdp
            .root
            .parse()
            .map_err(|_| crate::hdp::HdpError::BadHyperparameter("root".into()))?;
        let cfg = HdpConfig {
            alpha_dp: self.hdp.alpha_dp,
            gamma: self.hdp.gamma,
            kind_prior: self.hdp.kind_prior,
            emit_prior: self.hdp.emit_prior,
            base,
            rules: self.rules.clone(),
            root,
            n_tags: n_tags.max(1),
            max_leaf_pool: self.hdp.max_leaf_pool,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config digest recorded in run manifests.
    pub fn sha256(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        format!("{:x}", h.finalize())
    }
}
