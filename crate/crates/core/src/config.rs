//! Run configuration: one TOML file with `world`, `encoder`, `lm`, `train`
//! and `eval` tables. Every key has a default; unknown keys are rejected.
//! Module seeds are derived from the top-level `seed` at fixed offsets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphenc::{ContrastiveConfig, DEFAULT_GRAPH_DIM, DEFAULT_TEMPERATURE};
use crate::rng;
use crate::synthgen::WorldConfig;
use crate::tasks::CorpusConfig;
use crate::textenc::DEFAULT_FEATURE_DIM;
use crate::toylm::{LmConfig, PretrainConfig};
use crate::trainer::{Precision, TrainConfig};

/// Seed offsets per consumer.
pub mod stream {
    pub const WORLD: u64 = 100;
    pub const SPLIT: u64 = 101;
    pub const TEXTENC: u64 = 102;
    pub const GRAPHENC: u64 = 103;
    pub const LM_INIT: u64 = 104;
    pub const LM_CORPUS: u64 = 105;
    pub const LM_TRAIN: u64 = 106;
    pub const PROJECTOR: u64 = 107;
    pub const STAGE1: u64 = 108;
    pub const STAGE2: u64 = 109;
    pub const TASKS: u64 = 110;
    pub const BASELINE: u64 = 111;
    pub const EVAL: u64 = 112;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub n_firms: usize,
    pub n_industries: usize,
    pub mean_out_degree: f64,
    /// Width of the ring band each industry supplies into.
    pub compat_reach: usize,
    pub compat_decay: f64,
    pub competitor_rate: f64,
    pub test_fraction: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            n_firms: 300,
            n_industries: 10,
            mean_out_degree: 3.6,
            compat_reach: crate::synthgen::DEFAULT_COMPAT_REACH,
            compat_decay: crate::synthgen::DEFAULT_COMPAT_DECAY,
            competitor_rate: 0.3,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub feature_dim: usize,
    pub graph_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub neighbor_cap: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let c = ContrastiveConfig::default();
        Self {
            feature_dim: DEFAULT_FEATURE_DIM,
            graph_dim: DEFAULT_GRAPH_DIM,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            temperature: DEFAULT_TEMPERATURE,
            neighbor_cap: c.neighbor_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context: usize,
    pub epochs: usize,
    pub lr: f64,
    pub chunk_len: usize,
    pub batch_size: usize,
    pub membership_per_firm: usize,
    pub copies_per_firm: usize,
    pub equality_per_firm: usize,
}

impl Default for LmSection {
    fn default() -> Self {
        let m = LmConfig::new(0);
        let p = PretrainConfig::default();
        let c = CorpusConfig::default();
        Self {
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            context: m.context,
            epochs: p.epochs,
            lr: p.lr,
            chunk_len: p.chunk_len,
            batch_size: p.batch_size,
            membership_per_firm: c.membership_per_firm,
            copies_per_firm: c.copies_per_firm,
            equality_per_firm: c.equality_per_firm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage2_mix: usize,
    /// SRP training pairs drawn per stage II epoch; 0 uses all of them.
    pub srp_per_epoch: usize,
    /// `"f32"` or `"f64"`.
    pub precision: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::stage2();
        Self {
            lr: t.lr,
            momentum: t.momentum,
            batch_size: t.batch_size,
            grad_clip: t.grad_clip,
            stage1_epochs: TrainConfig::stage1().epochs,
            stage2_epochs: t.epochs,
            stage2_mix: t.stage2_mix,
            srp_per_epoch: t.srp_per_epoch,
            precision: "f32".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Competitor positives (and as many negatives) in the zero-shot set.
    pub competitor_per_class: usize,
    pub baseline_epochs: usize,
    pub baseline_lr: f64,
    pub baseline_hidden: usize,
    /// Stamped into reports; fixed so reruns are byte-identical.
    pub timestamp: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            competitor_per_class: 100,
            baseline_epochs: 100,
            baseline_lr: 0.01,
            baseline_hidden: 64,
            timestamp: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldSection,
    pub encoder: EncoderSection,
    pub lm: LmSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seed_for(&self, stream: u64) -> u64 {
        rng::derive(self.seed, stream)
    }

    pub fn validate(&self) -> Result<()> {
        self.world_config().validate()?;
        if !(self.world.test_fraction > 0.0 && self.world.test_fraction < 1.0) {
            return Err(Error::Config("world.test_fraction must lie in (0,1)".into()));
        }
        if self.lm.n_heads == 0 || self.lm.d_model % self.lm.n_heads != 0 {
            return Err(Error::Config("lm.d_model must be a positive multiple of lm.n_heads".into()));
        }
        if self.encoder.feature_dim == 0 || self.encoder.graph_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        self.precision()?;
        self.stage_config(1).validate()?;
        if self.train.lr <= 0.0 {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        Ok(())
    }

    pub fn world_config(&self) -> WorldConfig {
        let w = &self.world;
        let mut c = WorldConfig::new(w.n_firms, w.n_industries, w.mean_out_degree, self.seed_for(stream::WORLD));
        c.compat = crate::synthgen::cyclic_compat(w.n_industries, w.compat_decay, w.compat_reach);
        c.competitor_within_industry_rate = w.competitor_rate;
        c
    }

    pub fn contrastive_config(&self) -> ContrastiveConfig {
        let e = &self.encoder;
        ContrastiveConfig {
            epochs: e.epochs,
            batch_size: e.batch_size,
            lr: e.lr,
            temperature: e.temperature,
            neighbor_cap: e.neighbor_cap,
            seed: self.seed_for(stream::GRAPHENC),
        }
    }

    pub fn lm_config(&self, vocab_size: usize) -> LmConfig {
        let l = &self.lm;
        LmConfig {
            vocab_size,
            d_model: l.d_model,
            n_layers: l.n_layers,
            n_heads: l.n_heads,
            d_ff: l.d_ff,
            context: l.context,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let l = &self.lm;
        PretrainConfig {
            epochs: l.epochs,
            lr: l.lr,
            chunk_len: l.chunk_len,
            batch_size: l.batch_size,
            seed: self.seed_for(stream::LM_TRAIN),
            ..PretrainConfig::default()
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        let l = &self.lm;
        CorpusConfig {
            membership_per_firm: l.membership_per_firm,
            copies_per_firm: l.copies_per_firm,
            equality_per_firm: l.equality_per_firm,
            seed: self.seed_for(stream::LM_CORPUS),
            ..CorpusConfig::default()
        }
    }

    /// Trainer settings for stage 1 or 2.
    pub fn stage_config(&self, stage: u8) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            momentum: t.momentum,
            epochs: if stage == 1 { t.stage1_epochs } else { t.stage2_epochs },
            batch_size: t.batch_size,
            grad_clip: t.grad_clip,
            seed: self.seed_for(if stage == 1 { stream::STAGE1 } else { stream::STAGE2 }),
            stage2_mix: t.stage2_mix,
            srp_per_epoch: t.srp_per_epoch,
        }
    }

    pub fn precision(&self) -> Result<Precision> {
        match self.train.precision.as_str() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("train.precision must be f32 or f64, got `{other}`"))),
        }
    }
}
