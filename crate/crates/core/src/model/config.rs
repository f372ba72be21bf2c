use serde::{Deserialize, Serialize};

use super::tokenizer::Vocab;
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_rank() -> usize {
    4
}

fn default_alpha() -> f64 {
    8.0
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            rank: default_rank(),
            alpha: default_alpha(),
        }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiInit {
    #[default]
    Random,
    /// `ψ(x) = relu(x) − relu(−x) = x`; needs `psi_hidden >= 2 · llm_dim`.
    Identity,
}

/// Architecture hyperparameters. Together with the base vocabulary this fully
/// determines the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub llm_dim: usize,
    pub llm_layers: usize,
    pub llm_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    /// Base words; special tokens and `[ATTN]` are added around them.
    pub vocab: Vec<String>,
    pub psi_hidden: usize,
    #[serde(default)]
    pub psi_init: PsiInit,
    pub decoder_channels: Vec<usize>,
    #[serde(default = "default_decoder_heads")]
    pub decoder_heads: usize,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default)]
    pub lora: LoraConfig,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_decoder_heads() -> usize {
    4
}

fn default_bn_momentum() -> f64 {
    0.1
}

fn default_bn_eps() -> f64 {
    1e-5
}

pub const DECODER_STAGES: usize = 5;

impl ModelConfig {
    /// Small configuration used by tests and the synthetic experiments.
    pub fn toy(vocab: Vec<String>) -> Self {
        Self {
            image_height: 32,
            image_width: 32,
            patch_size: 8,
            embed_dim: 32,
            llm_dim: 32,
            llm_layers: 2,
            llm_heads: 4,
            ffn_dim: 64,
            max_seq_len: 96,
            vocab,
            psi_hidden: 64,
            psi_init: PsiInit::Random,
            decoder_channels: vec![16, 16, 8, 8, 1],
            decoder_heads: 4,
            bn_momentum: default_bn_momentum(),
            bn_eps: default_bn_eps(),
            lora: LoraConfig::default(),
            init_seed: 0,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + super::tokenizer::SPECIAL_TOKENS.len() + 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.patch_size == 0 || self.image_height == 0 || self.image_width == 0 {
            return err("image and patch sizes must be positive".into());
        }
        if !self.image_height.is_multiple_of(self.patch_size) || !self.image_width.is_multiple_of(self.patch_size) {
            return err(format!(
                "image {}x{} is not divisible by patch size {}",
                self.image_height, self.image_width, self.patch_size
            ));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("llm_dim", self.llm_dim),
            ("llm_layers", self.llm_layers),
            ("ffn_dim", self.ffn_dim),
            ("psi_hidden", self.psi_hidden),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.llm_heads == 0 || !self.llm_dim.is_multiple_of(self.llm_heads) {
            return err(format!("llm_heads {} must divide llm_dim {}", self.llm_heads, self.llm_dim));
        }
        if self.decoder_heads == 0 || !self.llm_dim.is_multiple_of(self.decoder_heads) {
            return err(format!("decoder_heads {} must divide llm_dim {}", self.decoder_heads, self.llm_dim));
        }
        if self.decoder_channels.len() != DECODER_STAGES || self.decoder_channels.last() != Some(&1) {
            return err("decoder_channels must list 5 stages ending in 1".into());
        }
        if self.decoder_channels.contains(&0) {
            return err("decoder channel counts must be positive".into());
        }
        if self.psi_init == PsiInit::Identity && self.psi_hidden < 2 * self.llm_dim {
            return err("identity psi needs psi_hidden >= 2 * llm_dim".into());
        }
        if self.max_seq_len <= self.num_patches() {
            return err("max_seq_len must exceed the number of visual tokens".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return err("bn_momentum must be in [0,1] and bn_eps positive".into());
        }
        if self.lora.enabled {
            self.check_lora(&self.lora)?;
        }
        Vocab::new(&self.vocab)?;
        Ok(())
    }

    pub fn check_lora(&self, lora: &LoraConfig) -> Result<(), ModelError> {
        if lora.rank == 0 || lora.rank >= self.llm_dim {
            return Err(ModelError::Config(format!(
                "LoRA rank {} must be in 1..{} (smaller than the projection size)",
                lora.rank, self.llm_dim
            )));
        }
        if !lora.alpha.is_finite() {
            return Err(ModelError::Config("LoRA alpha must be finite".into()));
        }
        Ok(())
    }
}
