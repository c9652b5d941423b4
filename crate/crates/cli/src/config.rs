//! Run configuration: a TOML file mirrored into every produced artifact.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use atisr::corpus::SyntheticSpec;
use atisr::isr::IsrConfig;
use atisr::network::{ArchConfig, ScorerKind};
use atisr::seq2seq::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// 0 means "use all available cores".
    pub threads: usize,
    pub synthetic: SyntheticSpec,
    pub arch: ArchConfig,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub isr: IsrConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synthetic = SyntheticSpec::default();
        // Desk-scale model sized for the synthetic task; real-speech runs
        // should override [arch] in the config file.
        let arch = ArchConfig {
            feature_dim: synthetic.feature_dim,
            enc_proj: 32,
            enc_hidden: 32,
            dec_embed: 32,
            dec_hidden: 64,
            attn_hidden: 48,
            scorer: ScorerKind::Mlp,
        };
        ExperimentConfig {
            seed: 42,
            threads: 0,
            synthetic,
            arch,
            teacher: TrainConfig::default(),
            student: TrainConfig::default(),
            isr: IsrConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&body)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Apply a `--seed` override to the run seed and everything derived
    /// from it.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthetic.seed = seed;
        self.teacher.seed = seed;
        self.student.seed = seed;
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        atisr::checkpoint::sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn provenance(&self, extra: &[(&str, String)]) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("config".to_string(), self.canonical_json());
        map.insert("config_hash".to_string(), self.hash());
        for (k, v) in extra {
            map.insert((*k).to_string(), v.clone());
        }
        map
    }
}
