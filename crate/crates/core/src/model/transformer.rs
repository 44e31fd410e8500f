//! Forward pass and hand-written backward pass of a pre-norm decoder-only transformer.

use rayon::prelude::*;

use super::linalg::{add_bias, axpy, col_sum_acc, dot, log_softmax, matmul, matmul_at_acc, matmul_bt};
use super::{ModelConfig, ModelError, ParamLayout, Params};
use crate::vocab::TokenId;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// A token sequence with per-token loss weights. `weights[i]` weighs the
/// prediction of `tokens[i]` from `tokens[..i]`; `weights[0]` is never used.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSequence {
    pub tokens: Vec<TokenId>,
    pub weights: Vec<f64>,
}

impl WeightedSequence {
    pub fn new(tokens: Vec<TokenId>, weights: Vec<f64>) -> Self {
        Self { tokens, weights }
    }

    pub fn unweighted(tokens: Vec<TokenId>) -> Self {
        let weights = vec![1.0; tokens.len()];
        Self { tokens, weights }
    }

    /// Weight mass this sequence contributes to the loss.
    pub fn scored_weight(&self) -> f64 {
        self.weights.iter().skip(1).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Params,
    positions: Vec<f64>,
}

struct LayerCache {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a1: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    a2: Vec<f64>,
    h1: Vec<f64>,
    g: Vec<f64>,
}

struct Cache {
    layers: Vec<LayerCache>,
    xhatf: Vec<f64>,
    rstdf: Vec<f64>,
    xf: Vec<f64>,
}

/// fairseq-style sinusoidal table: the first half of each row holds sines, the second cosines.
pub fn sinusoidal_positions(max_positions: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let step = if half > 1 { (10_000f64).ln() / (half - 1) as f64 } else { 0.0 };
    let mut table = vec![0.0; max_positions * dim];
    for p in 0..max_positions {
        for i in 0..half {
            let angle = p as f64 * (-(i as f64) * step).exp();
            table[p * dim + i] = angle.sin();
            table[p * dim + half + i] = angle.cos();
        }
    }
    table
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (row[i] - mean) * rs;
            xhat[r * d + i] = h;
            out[r * d + i] = h * g[i] + b[i];
        }
    }
    (out, xhat, rstd)
}

/// Accumulates gain/bias gradients and returns `dx`.
fn layer_norm_backward(dy: &[f64], xhat: &[f64], rstd: &[f64], g: &[f64], dg: &mut [f64], db: &mut [f64], d: usize) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for (r, &rs) in rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        let (mut mean_dxhat, mut mean_dxhat_xhat) = (0.0, 0.0);
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for i in 0..d {
            dx[r * d + i] = rs * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

/// The `len` parameters starting at `off`.
fn param<'a>(data: &'a [f64], off: usize, len: usize) -> &'a [f64] {
    &data[off..off + len]
}

impl Transformer {
    /// A freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate_instantiable()?;
        let layout = ParamLayout::new(&config);
        let params = Params::init(&config, &layout, seed);
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self, ModelError> {
        config.validate_instantiable()?;
        let layout = ParamLayout::new(&config);
        if params.data.len() != layout.total {
            return Err(ModelError::Shape(format!("expected {} parameters, got {}", layout.total, params.data.len())));
        }
        let positions = if config.learned_positions {
            Vec::new()
        } else {
            sinusoidal_positions(config.max_positions, config.embed_dim)
        };
        Ok(Self { config, layout, params, positions })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn check_input(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Shape("empty input".into()));
        }
        if tokens.len() > self.config.max_positions {
            return Err(ModelError::TooLong { len: tokens.len(), max: self.config.max_positions });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(ModelError::Shape(format!("token id {t} outside vocab of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    fn output_table(&self) -> &[f64] {
        let off = self.layout.out.unwrap_or(self.layout.embed);
        param(&self.params.data, off, self.config.vocab_size * self.config.embed_dim)
    }

    /// Final hidden states `[T, d]`, optionally keeping activations for backward.
    fn hidden(&self, tokens: &[TokenId], keep: bool) -> (Vec<f64>, Option<Cache>) {
        let cfg = &self.config;
        let (t_len, d, f, h, dh) = (tokens.len(), cfg.embed_dim, cfg.ffn_embed_dim, cfg.attention_heads, cfg.head_dim());
        let p = &self.params.data;
        let scale_emb = (d as f64).sqrt();
        let mut x = vec![0.0; t_len * d];
        let embed = param(p, self.layout.embed, cfg.vocab_size * d);
        let pos = match self.layout.pos {
            Some(off) => param(p, off, cfg.max_positions * d),
            None => &self.positions,
        };
        for (t, &tok) in tokens.iter().enumerate() {
            let row = &mut x[t * d..(t + 1) * d];
            let e = &embed[tok as usize * d..(tok as usize + 1) * d];
            let pr = &pos[t * d..(t + 1) * d];
            for i in 0..d {
                row[i] = e[i] * scale_emb + pr[i];
            }
        }
        let mut layers = Vec::new();
        let attn_scale = 1.0 / (dh as f64).sqrt();
        for lo in &self.layout.layers {
            let (a1, xhat1, rstd1) = layer_norm(&x, param(p, lo.ln1_g, d), param(p, lo.ln1_b, d), d);
            let mut qkv = vec![0.0; t_len * 3 * d];
            matmul(&a1, param(p, lo.w_qkv, d * 3 * d), &mut qkv, t_len, d, 3 * d);
            add_bias(&mut qkv, param(p, lo.b_qkv, 3 * d));
            let mut probs = vec![0.0; h * t_len * t_len];
            let mut attn = vec![0.0; t_len * d];
            for head in 0..h {
                let (qo, ko, vo) = (head * dh, d + head * dh, 2 * d + head * dh);
                for i in 0..t_len {
                    let q = &qkv[i * 3 * d + qo..i * 3 * d + qo + dh];
                    let row = &mut probs[(head * t_len + i) * t_len..(head * t_len + i) * t_len + i + 1];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = attn_scale * dot(q, &qkv[j * 3 * d + ko..j * 3 * d + ko + dh]);
                    }
                    log_softmax(row);
                    row.iter_mut().for_each(|s| *s = s.exp());
                    let out = &mut attn[i * d + head * dh..i * d + head * dh + dh];
                    for (j, &pij) in row.iter().enumerate() {
                        axpy(pij, &qkv[j * 3 * d + vo..j * 3 * d + vo + dh], out);
                    }
                }
            }
            let mut y = vec![0.0; t_len * d];
            matmul(&attn, param(p, lo.w_o, d * d), &mut y, t_len, d, d);
            add_bias(&mut y, param(p, lo.b_o, d));
            x.iter_mut().zip(&y).for_each(|(a, b)| *a += b);
            let (a2, xhat2, rstd2) = layer_norm(&x, param(p, lo.ln2_g, d), param(p, lo.ln2_b, d), d);
            let mut h1 = vec![0.0; t_len * f];
            matmul(&a2, param(p, lo.w_fc1, d * f), &mut h1, t_len, d, f);
            add_bias(&mut h1, param(p, lo.b_fc1, f));
            let g: Vec<f64> = h1.iter().map(|&v| gelu(v)).collect();
            let mut y2 = vec![0.0; t_len * d];
            matmul(&g, param(p, lo.w_fc2, f * d), &mut y2, t_len, f, d);
            add_bias(&mut y2, param(p, lo.b_fc2, d));
            x.iter_mut().zip(&y2).for_each(|(a, b)| *a += b);
            if keep {
                layers.push(LayerCache { xhat1, rstd1, a1, qkv, probs, attn, xhat2, rstd2, a2, h1, g });
            }
        }
        let (xf, xhatf, rstdf) = layer_norm(&x, param(p, self.layout.lnf_g, d), param(p, self.layout.lnf_b, d), d);
        let cache = keep.then(|| Cache { layers, xhatf, rstdf, xf: xf.clone() });
        (xf, cache)
    }

    /// Logits `[T, V]`, row-major. Row `t` predicts token `t + 1`.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        self.check_input(tokens)?;
        let (xf, _) = self.hidden(tokens, false);
        let (t_len, d, v) = (tokens.len(), self.config.embed_dim, self.config.vocab_size);
        let mut logits = vec![0.0; t_len * v];
        matmul_bt(&xf, self.output_table(), &mut logits, t_len, d, v);
        Ok(logits)
    }

    /// Logits of the last position only.
    pub fn next_logits(&self, tokens: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        self.check_input(tokens)?;
        let (xf, _) = self.hidden(tokens, false);
        let d = self.config.embed_dim;
        let last = &xf[(tokens.len() - 1) * d..];
        let mut logits = vec![0.0; self.config.vocab_size];
        matmul_bt(last, self.output_table(), &mut logits, 1, d, self.config.vocab_size);
        Ok(logits)
    }

    /// Weighted next-token NLL summed over one sequence, plus the scored weight mass.
    fn sequence_nll(&self, seq: &WeightedSequence) -> Result<(f64, f64), ModelError> {
        check_weights(seq)?;
        let logits = self.forward(&seq.tokens)?;
        let v = self.config.vocab_size;
        let mut total = 0.0;
        for t in 1..seq.tokens.len() {
            let w = seq.weights[t];
            if w == 0.0 {
                continue;
            }
            let mut row = logits[(t - 1) * v..t * v].to_vec();
            log_softmax(&mut row);
            total -= w * row[seq.tokens[t] as usize];
        }
        Ok((total, seq.scored_weight()))
    }

    /// Mean weighted NLL over every weighted position of the batch.
    pub fn loss(&self, batch: &[WeightedSequence]) -> Result<f64, ModelError> {
        let parts: Vec<_> = batch.par_iter().map(|s| self.sequence_nll(s)).collect::<Result<_, _>>()?;
        let (nll, mass) = parts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        if mass == 0.0 {
            return Err(ModelError::ZeroWeights);
        }
        Ok(nll / mass)
    }

    /// Batch loss and its exact gradient. Per-sequence gradients are computed in
    /// parallel and summed in batch order, so results are bitwise reproducible.
    pub fn loss_and_gradient(&self, batch: &[WeightedSequence]) -> Result<(f64, Params), ModelError> {
        let mass: f64 = batch.iter().map(WeightedSequence::scored_weight).sum();
        if mass == 0.0 {
            return Err(ModelError::ZeroWeights);
        }
        let parts: Vec<(f64, Vec<f64>)> =
            batch.par_iter().map(|s| self.sequence_gradient(s, 1.0 / mass)).collect::<Result<_, _>>()?;
        let mut grad = vec![0.0; self.layout.total];
        let mut loss = 0.0;
        for (nll, g) in &parts {
            loss += nll;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let loss = loss / mass;
        if !loss.is_finite() {
            return Err(ModelError::NonFinite("loss".into()));
        }
        Ok((loss, Params { data: grad }))
    }

    /// Summed weighted NLL of one sequence and the gradient of `scale ×` that sum.
    fn sequence_gradient(&self, seq: &WeightedSequence, scale: f64) -> Result<(f64, Vec<f64>), ModelError> {
        check_weights(seq)?;
        self.check_input(&seq.tokens)?;
        let cfg = &self.config;
        let (t_len, d, f, v, h, dh) =
            (seq.tokens.len(), cfg.embed_dim, cfg.ffn_embed_dim, cfg.vocab_size, cfg.attention_heads, cfg.head_dim());
        let p = &self.params.data;
        let mut grad = vec![0.0; self.layout.total];
        let (_, cache) = self.hidden(&seq.tokens, true);
        let cache = cache.expect("kept");

        // Only rows that predict a weighted target carry gradient.
        let rows: Vec<usize> = (1..t_len).filter(|&t| seq.weights[t] != 0.0).map(|t| t - 1).collect();
        let mut nll = 0.0;
        let mut dlogits = vec![0.0; rows.len() * v];
        let mut xf_rows = vec![0.0; rows.len() * d];
        for (r, &row) in rows.iter().enumerate() {
            xf_rows[r * d..(r + 1) * d].copy_from_slice(&cache.xf[row * d..(row + 1) * d]);
        }
        matmul_bt(&xf_rows, self.output_table(), &mut dlogits, rows.len(), d, v);
        for (r, &row) in rows.iter().enumerate() {
            let w = seq.weights[row + 1];
            let target = seq.tokens[row + 1] as usize;
            let lp = &mut dlogits[r * v..(r + 1) * v];
            log_softmax(lp);
            nll -= w * lp[target];
            for x in lp.iter_mut() {
                *x = scale * w * x.exp();
            }
            lp[target] -= scale * w;
        }
        let mut dxf = vec![0.0; t_len * d];
        {
            let mut dx_rows = vec![0.0; rows.len() * d];
            matmul(&dlogits, self.output_table(), &mut dx_rows, rows.len(), v, d);
            for (r, &row) in rows.iter().enumerate() {
                dxf[row * d..(row + 1) * d].copy_from_slice(&dx_rows[r * d..(r + 1) * d]);
            }
            let out_off = self.layout.out.unwrap_or(self.layout.embed);
            matmul_at_acc(&dlogits, &xf_rows, &mut grad[out_off..out_off + v * d], rows.len(), v, d);
        }
        let (gf, gb) = grad[self.layout.lnf_g..self.layout.lnf_g + 2 * d].split_at_mut(d);
        debug_assert_eq!(self.layout.lnf_b, self.layout.lnf_g + d);
        let mut dx = layer_norm_backward(&dxf, &cache.xhatf, &cache.rstdf, param(p, self.layout.lnf_g, d), gf, gb, d);

        let attn_scale = 1.0 / (dh as f64).sqrt();
        for (lo, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
            // Feed-forward branch: x = x_mid + fc2(gelu(fc1(ln2(x_mid)))).
            col_sum_acc(&dx, &mut grad[lo.b_fc2..lo.b_fc2 + d]);
            matmul_at_acc(&lc.g, &dx, &mut grad[lo.w_fc2..lo.w_fc2 + f * d], t_len, f, d);
            let mut dg = vec![0.0; t_len * f];
            matmul_bt(&dx, param(p, lo.w_fc2, f * d), &mut dg, t_len, d, f);
            for (dgi, &hi) in dg.iter_mut().zip(&lc.h1) {
                *dgi *= gelu_grad(hi);
            }
            col_sum_acc(&dg, &mut grad[lo.b_fc1..lo.b_fc1 + f]);
            matmul_at_acc(&lc.a2, &dg, &mut grad[lo.w_fc1..lo.w_fc1 + d * f], t_len, d, f);
            let mut da2 = vec![0.0; t_len * d];
            matmul_bt(&dg, param(p, lo.w_fc1, d * f), &mut da2, t_len, f, d);
            let (g2, b2) = grad[lo.ln2_g..lo.ln2_g + 2 * d].split_at_mut(d);
            let dmid = layer_norm_backward(&da2, &lc.xhat2, &lc.rstd2, param(p, lo.ln2_g, d), g2, b2, d);
            dx.iter_mut().zip(&dmid).for_each(|(a, b)| *a += b);

            // Attention branch: x_mid = x_in + out(attn(ln1(x_in))).
            col_sum_acc(&dx, &mut grad[lo.b_o..lo.b_o + d]);
            matmul_at_acc(&lc.attn, &dx, &mut grad[lo.w_o..lo.w_o + d * d], t_len, d, d);
            let mut dattn = vec![0.0; t_len * d];
            matmul_bt(&dx, param(p, lo.w_o, d * d), &mut dattn, t_len, d, d);
            let mut dqkv = vec![0.0; t_len * 3 * d];
            let mut dp = vec![0.0; t_len];
            for head in 0..h {
                let (qo, ko, vo) = (head * dh, d + head * dh, 2 * d + head * dh);
                for i in 0..t_len {
                    let do_i = &dattn[i * d + head * dh..i * d + head * dh + dh];
                    let probs = &lc.probs[(head * t_len + i) * t_len..(head * t_len + i) * t_len + i + 1];
                    let mut inner = 0.0;
                    for (j, &pij) in probs.iter().enumerate() {
                        dp[j] = dot(do_i, &lc.qkv[j * 3 * d + vo..j * 3 * d + vo + dh]);
                        inner += pij * dp[j];
                        axpy(pij, do_i, &mut dqkv[j * 3 * d + vo..j * 3 * d + vo + dh]);
                    }
                    for (j, &pij) in probs.iter().enumerate() {
                        let ds = pij * (dp[j] - inner) * attn_scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let (head_i, tail) = dqkv.split_at_mut(i.max(j) * 3 * d);
                        // Row i's q-gradient and row j's k-gradient may live in the same row (i == j).
                        if i == j {
                            let row = &mut tail[..3 * d];
                            for c in 0..dh {
                                row[qo + c] += ds * lc.qkv[j * 3 * d + ko + c];
                                row[ko + c] += ds * lc.qkv[i * 3 * d + qo + c];
                            }
                        } else {
                            // j < i: row j is in `head_i`, row i in `tail`.
                            axpy(ds, &lc.qkv[j * 3 * d + ko..j * 3 * d + ko + dh], &mut tail[qo..qo + dh]);
                            axpy(ds, &lc.qkv[i * 3 * d + qo..i * 3 * d + qo + dh], &mut head_i[j * 3 * d + ko..j * 3 * d + ko + dh]);
                        }
                    }
                }
            }
            col_sum_acc(&dqkv, &mut grad[lo.b_qkv..lo.b_qkv + 3 * d]);
            matmul_at_acc(&lc.a1, &dqkv, &mut grad[lo.w_qkv..lo.w_qkv + d * 3 * d], t_len, d, 3 * d);
            let mut da1 = vec![0.0; t_len * d];
            matmul_bt(&dqkv, param(p, lo.w_qkv, d * 3 * d), &mut da1, t_len, 3 * d, d);
            let (g1, b1) = grad[lo.ln1_g..lo.ln1_g + 2 * d].split_at_mut(d);
            let din = layer_norm_backward(&da1, &lc.xhat1, &lc.rstd1, param(p, lo.ln1_g, d), g1, b1, d);
            dx.iter_mut().zip(&din).for_each(|(a, b)| *a += b);
        }

        let scale_emb = (d as f64).sqrt();
        for (t, &tok) in seq.tokens.iter().enumerate() {
            let off = self.layout.embed + tok as usize * d;
            axpy(scale_emb, &dx[t * d..(t + 1) * d], &mut grad[off..off + d]);
            if let Some(pos) = self.layout.pos {
                axpy(1.0, &dx[t * d..(t + 1) * d], &mut grad[pos + t * d..pos + (t + 1) * d]);
            }
        }
        Ok((nll, grad))
    }
}

fn check_weights(seq: &WeightedSequence) -> Result<(), ModelError> {
    if seq.tokens.len() != seq.weights.len() {
        return Err(ModelError::Shape(format!("{} tokens but {} weights", seq.tokens.len(), seq.weights.len())));
    }
    Ok(())
}

/// Mean negative log-likelihood of `targets` under `logits` (`[L, V]`) over the
/// weighted positions. `targets[i]` is scored against row `i`.
pub fn weighted_loss(logits: &[f64], targets: &[TokenId], weights: &[f64], vocab: usize) -> Result<f64, ModelError> {
    let (loss, _) = weighted_loss_grad(logits, targets, weights, vocab)?;
    Ok(loss)
}

/// [`weighted_loss`] and its gradient with respect to `logits`.
pub fn weighted_loss_grad(logits: &[f64], targets: &[TokenId], weights: &[f64], vocab: usize) -> Result<(f64, Vec<f64>), ModelError> {
    if logits.len() != targets.len() * vocab || weights.len() != targets.len() {
        return Err(ModelError::Shape("logits, targets and weights disagree in length".into()));
    }
    let mass: f64 = weights.iter().sum();
    if mass == 0.0 {
        return Err(ModelError::ZeroWeights);
    }
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let mut row = logits[i * vocab..(i + 1) * vocab].to_vec();
        log_softmax(&mut row);
        total -= w * row[t as usize];
        for (g, lp) in grad[i * vocab..(i + 1) * vocab].iter_mut().zip(&row) {
            *g = w * lp.exp() / mass;
        }
        grad[i * vocab + t as usize] -= w / mass;
    }
    Ok((total / mass, grad))
}
