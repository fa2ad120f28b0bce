//! Experiment configuration: a TOML file with nested sections, resolved into
//! core types. Every seed is explicit; the secret transform scale lives in a
//! separate key file whose path comes from the config or from
//! `EMBEDLAB_TRANSFORM_KEY_FILE` (the only environment variable read).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use embedlab_core::defense::{DefenseSpec, NoiseConfig, SecretTransform};
use embedlab_core::embedder::{EmbedderConfig, Metric, Pooling};
use embedlab_core::inversion::{EditKinds, Guidance, InversionConfig};

pub const TRANSFORM_KEY_ENV: &str = "EMBEDLAB_TRANSFORM_KEY_FILE";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub embedder: EmbedderSection,
    #[serde(default)]
    pub index: IndexSpec,
    #[serde(default)]
    pub defense: Option<DefenseSection>,
    #[serde(default)]
    pub inversion: InversionSection,
    #[serde(default)]
    pub poisoning: Option<PoisonSection>,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub data: Option<DataSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSection {
    pub dim: usize,
    /// "mean" or "recurrent"
    pub pooling: String,
    /// "dot" or "cosine"
    pub metric: String,
    pub seed: u64,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_vocab_size() -> usize {
    1024
}

fn default_max_len() -> usize {
    32
}

impl EmbedderSection {
    pub fn to_core(&self) -> Result<EmbedderConfig> {
        let cfg = EmbedderConfig {
            dim: self.dim,
            pooling: Pooling::from_str(&self.pooling)?,
            metric: Metric::from_str(&self.metric)?,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pooling(&self) -> Result<Pooling> {
        Ok(Pooling::from_str(&self.pooling)?)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum IndexSpec {
    #[default]
    Exact,
    Projection {
        target_dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Pq {
        m: usize,
        #[serde(default = "default_bits")]
        bits: u8,
        #[serde(default = "default_pq_iters")]
        train_iters: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_bits() -> u8 {
    8
}

fn default_pq_iters() -> usize {
    25
}

impl IndexSpec {
    pub fn label(&self) -> String {
        match self {
            IndexSpec::Exact => "exact".to_string(),
            IndexSpec::Projection { target_dim, .. } => format!("projection({target_dim})"),
            IndexSpec::Pq { m, bits, .. } => format!("pq(m={m},bits={bits})"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    /// Gaussian noise scale; omit for no noise.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default)]
    pub noise_on_queries: bool,
    /// Path to the secret-transform key file. Presence enables the
    /// transform; `EMBEDLAB_TRANSFORM_KEY_FILE` overrides the path.
    #[serde(default)]
    pub transform_keyfile: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_beam")]
    pub beam: usize,
    #[serde(default = "default_width")]
    pub proposal_width: usize,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    50
}

fn default_beam() -> usize {
    4
}

fn default_width() -> usize {
    8
}

impl Default for InversionSection {
    fn default() -> Self {
        InversionSection {
            steps: default_steps(),
            beam: default_beam(),
            proposal_width: default_width(),
            budget: None,
            seed: 0,
        }
    }
}

impl InversionSection {
    pub fn to_core(&self, pooling: Pooling, max_len: usize) -> InversionConfig {
        InversionConfig {
            steps: self.steps,
            beam: self.beam,
            proposal_width: self.proposal_width,
            max_len,
            edit_kinds: EditKinds::default(),
            budget: self.budget,
            seed: self.seed,
            guidance: Guidance::for_pooling(pooling),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonSection {
    pub k: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_ns")]
    pub ns: Vec<usize>,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_flip_len")]
    pub flip_len: usize,
    #[serde(default = "default_flip_sweeps")]
    pub flip_sweeps: usize,
    #[serde(default)]
    pub flip_cap: Option<usize>,
}

fn default_methods() -> Vec<String> {
    vec!["inversion".into(), "oracle".into()]
}

fn default_ns() -> Vec<usize> {
    vec![1, 5, 10, 100]
}

fn default_kmeans_iters() -> usize {
    25
}

fn default_flip_len() -> usize {
    8
}

fn default_flip_sweeps() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    /// Reconstruction sample size; clamps to the held-out pool with a
    /// warning when the pool is smaller.
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_ks() -> Vec<usize> {
    vec![10, 20, 100, 1000]
}

fn default_sample_size() -> usize {
    1000
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { ks: default_ks(), sample_size: default_sample_size(), seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub train_queries: Option<PathBuf>,
    #[serde(default)]
    pub test_queries: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<crate::synth::SynthSpec>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&raw)
    }

    pub fn from_toml(raw: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(raw).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.to_core()?;
        if let Some(poison) = &self.poisoning {
            if poison.k == 0 {
                bail!("poisoning.k must be >= 1");
            }
            for m in &poison.methods {
                embedlab_core::poison::AttackMethod::from_str(m)
                    .with_context(|| format!("poisoning method {m:?}"))?;
            }
            if poison.ns.is_empty() {
                bail!("poisoning.ns must be non-empty");
            }
        }
        if self.eval.ks.is_empty() {
            bail!("eval.ks must be non-empty");
        }
        if let Some(data) = &self.data {
            let has_paths =
                data.corpus.is_some() || data.train_queries.is_some() || data.test_queries.is_some();
            if has_paths && data.synthetic.is_some() {
                bail!("data section must use either paths or synthetic, not both");
            }
            for path in [&data.corpus, &data.train_queries, &data.test_queries]
                .into_iter()
                .flatten()
            {
                if !path.exists() {
                    bail!("referenced data file {} does not exist", path.display());
                }
            }
        }
        Ok(())
    }

    /// Canonical serialization used for the config hash.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Resolve the defense section into a core spec, reading the secret key
    /// file when a transform is configured. Returns the spec plus the key
    /// file content (for the data hash; never echoed into reports).
    pub fn resolve_defense(&self) -> Result<(DefenseSpec, Option<String>)> {
        let Some(section) = &self.defense else {
            return Ok((DefenseSpec::none(), None));
        };
        let noise = match section.lambda {
            Some(lambda) => Some(NoiseConfig::new(lambda, section.noise_seed)?),
            None => None,
        };
        let (transform, key_content) = match resolve_keyfile_path(section) {
            Some(path) => {
                let raw = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading transform key file {}", path.display()))?;
                let scale: f64 = raw
                    .trim()
                    .parse()
                    .with_context(|| format!("parsing transform scale from {}", path.display()))?;
                (Some(SecretTransform::new(scale)?), Some(raw))
            }
            None => (None, None),
        };
        Ok((
            DefenseSpec { noise, transform, noise_on_queries: section.noise_on_queries },
            key_content,
        ))
    }

    /// Human-readable defense label; never includes the secret scale.
    pub fn defense_label(&self) -> String {
        match &self.defense {
            None => "none".to_string(),
            Some(d) => {
                let mut parts = Vec::new();
                if let Some(lambda) = d.lambda {
                    let side = if d.noise_on_queries { "docs+queries" } else { "docs" };
                    parts.push(format!("noise(lambda={lambda},side={side})"));
                }
                if resolve_keyfile_path(d).is_some() {
                    parts.push("transform(secret)".to_string());
                }
                if parts.is_empty() {
                    "none".to_string()
                } else {
                    parts.join("+")
                }
            }
        }
    }
}

fn resolve_keyfile_path(section: &DefenseSection) -> Option<PathBuf> {
    if let Ok(from_env) = std::env::var(TRANSFORM_KEY_ENV) {
        if !from_env.is_empty() {
            return Some(PathBuf::from(from_env));
        }
    }
    section.transform_keyfile.clone()
}
