use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture fields, named after their fairseq flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub ffn_embed_dim: usize,
    pub layers: usize,
    pub attention_heads: usize,
    pub normalize_before: bool,
    pub share_input_output_embed: bool,
    pub learned_positions: bool,
    pub max_positions: usize,
    /// Pre-training dropout. Only 0 is supported.
    #[serde(default)]
    pub dropout: f64,
}

/// Named architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Tiny,
    Small,
    /// The 2.7B configuration. Representable, not instantiable here.
    Medium,
    /// The 13B configuration. Representable, not instantiable here.
    Large,
}

/// Parameter count above which [`ModelConfig::validate_instantiable`] refuses.
pub const DESK_PARAM_LIMIT: usize = 50_000_000;

impl ModelConfig {
    pub fn preset(preset: Preset, vocab_size: usize) -> Self {
        let (embed_dim, layers, attention_heads, max_positions) = match preset {
            Preset::Tiny => (64, 2, 4, 512),
            Preset::Small => (128, 4, 4, 512),
            Preset::Medium => (2560, 32, 32, 2048),
            Preset::Large => (5120, 40, 40, 2048),
        };
        Self {
            vocab_size,
            embed_dim,
            ffn_embed_dim: 4 * embed_dim,
            layers,
            attention_heads,
            normalize_before: true,
            share_input_output_embed: true,
            learned_positions: false,
            max_positions,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.attention_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.vocab_size == 0 || self.embed_dim == 0 || self.layers == 0 || self.attention_heads == 0 {
            return bad("vocab_size, embed_dim, layers and attention_heads must be positive".into());
        }
        if self.embed_dim % self.attention_heads != 0 {
            return bad(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.attention_heads));
        }
        if !self.learned_positions && self.embed_dim % 2 != 0 {
            return bad("sinusoidal positions need an even embed_dim".into());
        }
        if self.ffn_embed_dim == 0 || self.max_positions == 0 {
            return bad("ffn_embed_dim and max_positions must be positive".into());
        }
        Ok(())
    }

    /// Checks everything [`validate`](Self::validate) does, plus the limits of this
    /// implementation: pre-norm blocks, no dropout, and a desk-sized parameter count.
    pub fn validate_instantiable(&self) -> Result<(), ModelError> {
        self.validate()?;
        if !self.normalize_before {
            return Err(ModelError::Config("post-norm blocks are not implemented".into()));
        }
        if self.dropout != 0.0 {
            return Err(ModelError::Config("dropout is not implemented; use 0".into()));
        }
        let n = self.param_count();
        if n > DESK_PARAM_LIMIT {
            return Err(ModelError::Config(format!("{n} parameters exceed the desk limit of {DESK_PARAM_LIMIT}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, f, v) = (self.embed_dim, self.ffn_embed_dim, self.vocab_size);
        let per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        let pos = if self.learned_positions { self.max_positions * d } else { 0 };
        let out = if self.share_input_output_embed { 0 } else { v * d };
        v * d + pos + self.layers * per_layer + 2 * d + out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_presets_are_representable_only() {
        let medium = ModelConfig::preset(Preset::Medium, 50_000);
        assert_eq!((medium.embed_dim, medium.ffn_embed_dim, medium.layers, medium.attention_heads), (2560, 10240, 32, 32));
        let large = ModelConfig::preset(Preset::Large, 50_000);
        assert_eq!((large.embed_dim, large.ffn_embed_dim, large.layers, large.attention_heads), (5120, 20480, 40, 40));
        for c in [&medium, &large] {
            assert!(c.normalize_before && c.share_input_output_embed && !c.learned_positions);
            c.validate().unwrap();
            assert!(c.validate_instantiable().is_err());
        }
        assert!(medium.param_count() > 2_000_000_000);
    }

    #[test]
    fn desk_presets() {
        let tiny = ModelConfig::preset(Preset::Tiny, 289);
        assert_eq!((tiny.layers, tiny.embed_dim, tiny.attention_heads, tiny.max_positions), (2, 64, 4, 512));
        tiny.validate_instantiable().unwrap();
        let small = ModelConfig::preset(Preset::Small, 289);
        assert_eq!((small.layers, small.embed_dim, small.ffn_embed_dim), (4, 128, 512));
        small.validate_instantiable().unwrap();
    }

    #[test]
    fn rejects_bad_head_split() {
        let mut c = ModelConfig::preset(Preset::Tiny, 10);
        c.attention_heads = 5;
        assert!(c.validate().is_err());
    }
}
