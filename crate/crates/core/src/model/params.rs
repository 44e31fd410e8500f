use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one block's tensors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc1: usize,
    pub b_fc1: usize,
    pub w_fc2: usize,
    pub b_fc2: usize,
}

/// Declared tensor order. Checkpoints store tensors in exactly this order.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub(crate) embed: usize,
    pub(crate) pos: Option<usize>,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) out: Option<usize>,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f, v) = (cfg.embed_dim, cfg.ffn_embed_dim, cfg.vocab_size);
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let spec = TensorSpec { name, shape, offset: total };
            total += spec.len();
            let off = spec.offset;
            tensors.push(spec);
            off
        };
        let embed = add("embed_tokens".into(), vec![v, d]);
        let pos = cfg.learned_positions.then(|| add("embed_positions".into(), vec![cfg.max_positions, d]));
        let layers = (0..cfg.layers)
            .map(|l| {
                let mut t = |s: &str, shape: Vec<usize>| add(format!("layers.{l}.{s}"), shape);
                LayerOffsets {
                    ln1_g: t("attn_norm.weight", vec![d]),
                    ln1_b: t("attn_norm.bias", vec![d]),
                    w_qkv: t("attn.qkv.weight", vec![d, 3 * d]),
                    b_qkv: t("attn.qkv.bias", vec![3 * d]),
                    w_o: t("attn.out.weight", vec![d, d]),
                    b_o: t("attn.out.bias", vec![d]),
                    ln2_g: t("ffn_norm.weight", vec![d]),
                    ln2_b: t("ffn_norm.bias", vec![d]),
                    w_fc1: t("fc1.weight", vec![d, f]),
                    b_fc1: t("fc1.bias", vec![f]),
                    w_fc2: t("fc2.weight", vec![f, d]),
                    b_fc2: t("fc2.bias", vec![d]),
                }
            })
            .collect();
        let lnf_g = add("final_norm.weight".into(), vec![d]);
        let lnf_b = add("final_norm.bias".into(), vec![d]);
        let out = (!cfg.share_input_output_embed).then(|| add("output_projection".into(), vec![v, d]));
        Self { tensors, total, embed, pos, layers, lnf_g, lnf_b, out }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// The model parameters as one flat vector (also the shape of gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub data: Vec<f64>,
}

impl Params {
    pub fn zeros(layout: &ParamLayout) -> Self {
        Self { data: vec![0.0; layout.total] }
    }

    /// Normal(0, 0.02) weights, embeddings Normal(0, d^-1/2), zero biases, unit norm gains.
    pub fn init(cfg: &ModelConfig, layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; layout.total];
        let weight = Normal::new(0.0, 0.02).unwrap();
        let embed = Normal::new(0.0, (cfg.embed_dim as f64).powf(-0.5)).unwrap();
        for t in &layout.tensors {
            let slice = &mut data[t.range()];
            if t.name.ends_with("norm.weight") {
                slice.fill(1.0);
            } else if t.name.ends_with(".bias") {
                // zero
            } else if t.name.starts_with("embed_") || t.name == "output_projection" {
                slice.iter_mut().for_each(|x| *x = embed.sample(&mut rng));
            } else {
                slice.iter_mut().for_each(|x| *x = weight.sample(&mut rng));
            }
        }
        Self { data }
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(ModelError::NonFinite(format!("parameter {i}"))),
            None => Ok(()),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}
