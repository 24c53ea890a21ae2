//! Pre-norm transformer encoder–decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Forward;
use crate::params::{xavier, ModelParams};
use crate::tensor::{Tensor, Var};
use crate::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-6;
const MASK_VALUE: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size_src: usize,
    pub vocab_size_tgt: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    pub pad_id: usize,
    pub bos_id: usize,
    pub eos_id: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size_src: 0,
            vocab_size_tgt: 0,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ffn: 128,
            max_len: 64,
            dropout_rate: 0.1,
            pad_id: 0,
            bos_id: 1,
            eos_id: 2,
        }
    }
}

impl ModelConfig {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (name, v) in [
            ("model.vocab_size_src", self.vocab_size_src),
            ("model.vocab_size_tgt", self.vocab_size_tgt),
            ("model.d_model", self.d_model),
            ("model.n_heads", self.n_heads),
            ("model.n_enc_layers", self.n_enc_layers),
            ("model.n_dec_layers", self.n_dec_layers),
            ("model.d_ffn", self.d_ffn),
            ("model.max_len", self.max_len),
        ] {
            if v == 0 {
                p.push(format!("{name} must be positive"));
            }
        }
        if self.n_heads > 0 && self.d_model % self.n_heads != 0 {
            p.push(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            p.push(format!("model.dropout_rate {} must lie in [0, 1)", self.dropout_rate));
        }
        let ids = [self.pad_id, self.bos_id, self.eos_id];
        if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
            p.push("model.pad_id, bos_id and eos_id must be distinct".into());
        }
        let min_vocab = self.vocab_size_src.min(self.vocab_size_tgt);
        if min_vocab > 0 && ids.iter().any(|&i| i >= min_vocab) {
            p.push("special token ids must be below both vocabulary sizes".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

/// A row-padded index matrix: `rows × cols` ids with `mask[i]` true for real
/// tokens and false for padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Padded {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub rows: usize,
    pub cols: usize,
}

impl Padded {
    pub fn from_rows(rows: &[Vec<usize>], pad_id: usize) -> Result<Self> {
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        if rows.is_empty() || cols == 0 {
            return Err(Error::invalid("pad", "cannot pad an empty batch"));
        }
        let mut ids = Vec::with_capacity(rows.len() * cols);
        let mut mask = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ids.extend_from_slice(r);
            mask.extend(std::iter::repeat_n(true, r.len()));
            ids.extend(std::iter::repeat_n(pad_id, cols - r.len()));
            mask.extend(std::iter::repeat_n(false, cols - r.len()));
        }
        Ok(Padded {
            ids,
            mask,
            rows: rows.len(),
            cols,
        })
    }

    pub fn row(&self, r: usize) -> &[usize] {
        let len = self.mask[r * self.cols..(r + 1) * self.cols]
            .iter()
            .filter(|&&m| m)
            .count();
        &self.ids[r * self.cols..r * self.cols + len]
    }

    pub fn real_tokens(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn pad_tokens(&self) -> usize {
        self.mask.len() - self.real_tokens()
    }
}

fn sinusoid(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![len, d], data)
}

fn init_attention(p: &mut ModelParams, prefix: &str, d: usize, zero_out: bool, rng: &mut Rng) -> Result<()> {
    for w in ["wq", "wk", "wv"] {
        p.insert(format!("{prefix}.{w}"), xavier(d, d, rng))?;
    }
    let wo = if zero_out { Tensor::zeros([d, d]) } else { xavier(d, d, rng) };
    p.insert(format!("{prefix}.wo"), wo)
}

fn init_ffn(p: &mut ModelParams, prefix: &str, d: usize, f: usize, zero_out: bool, rng: &mut Rng) -> Result<()> {
    p.insert(format!("{prefix}.w1"), xavier(d, f, rng))?;
    p.insert(format!("{prefix}.b1"), Tensor::zeros([f]))?;
    let w2 = if zero_out { Tensor::zeros([f, d]) } else { xavier(f, d, rng) };
    p.insert(format!("{prefix}.w2"), w2)?;
    p.insert(format!("{prefix}.b2"), Tensor::zeros([d]))
}

pub(crate) fn init_layer_norm(p: &mut ModelParams, prefix: &str, d: usize) -> Result<()> {
    p.insert(format!("{prefix}.g"), Tensor::ones([d]))?;
    p.insert(format!("{prefix}.b"), Tensor::zeros([d]))
}

/// Standard pre-norm block (self-attention then feed-forward). With
/// `zero_out` both sublayer output projections start at zero so the block is
/// the identity map.
pub(crate) fn init_block(
    p: &mut ModelParams,
    prefix: &str,
    cfg: &ModelConfig,
    zero_out: bool,
    rng: &mut Rng,
) -> Result<()> {
    init_layer_norm(p, &format!("{prefix}.ln1"), cfg.d_model)?;
    init_attention(p, &format!("{prefix}.attn"), cfg.d_model, zero_out, rng)?;
    init_layer_norm(p, &format!("{prefix}.ln2"), cfg.d_model)?;
    init_ffn(p, &format!("{prefix}.ffn"), cfg.d_model, cfg.d_ffn, zero_out, rng)
}

pub(crate) fn init_ffn_block(
    p: &mut ModelParams,
    prefix: &str,
    cfg: &ModelConfig,
    zero_out: bool,
    rng: &mut Rng,
) -> Result<()> {
    init_layer_norm(p, &format!("{prefix}.ln"), cfg.d_model)?;
    init_ffn(p, &format!("{prefix}.ffn"), cfg.d_model, cfg.d_ffn, zero_out, rng)
}

/// Fresh encoder–decoder parameters (θ without any domain components).
pub fn init_params(cfg: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    cfg.validate()?;
    let d = cfg.d_model;
    let emb_bound = (3.0 / d as f64).sqrt();
    let mut p = ModelParams::new();
    p.insert("src_emb", Tensor::uniform([cfg.vocab_size_src, d], emb_bound, rng))?;
    p.insert("tgt_emb", Tensor::uniform([cfg.vocab_size_tgt, d], emb_bound, rng))?;
    for l in 0..cfg.n_enc_layers {
        init_block(&mut p, &format!("enc.layer{l}"), cfg, false, rng)?;
    }
    init_layer_norm(&mut p, "enc.ln", d)?;
    for l in 0..cfg.n_dec_layers {
        let pre = format!("dec.layer{l}");
        init_layer_norm(&mut p, &format!("{pre}.ln1"), d)?;
        init_attention(&mut p, &format!("{pre}.self_attn"), d, false, rng)?;
        init_layer_norm(&mut p, &format!("{pre}.ln2"), d)?;
        init_attention(&mut p, &format!("{pre}.cross_attn"), d, false, rng)?;
        init_layer_norm(&mut p, &format!("{pre}.ln3"), d)?;
        init_ffn(&mut p, &format!("{pre}.ffn"), d, cfg.d_ffn, false, rng)?;
    }
    init_layer_norm(&mut p, "dec.ln", d)?;
    p.insert("out.w", xavier(d, cfg.vocab_size_tgt, rng))?;
    p.insert("out.b", Tensor::zeros([cfg.vocab_size_tgt]))?;
    Ok(p)
}

/// Paths belonging to the encoder–decoder proper.
pub fn is_seq2seq_param(name: &str) -> bool {
    !(name.starts_with("dtn.") || name.starts_with("cls."))
}

/// Which key positions each query may not attend to.
enum KeyMask<'m> {
    Padding(&'m Padded),
    CausalPadding(&'m Padded),
}

fn dims3(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::invalid("attention", format!("expected rank-3 input, got {shape:?}"))),
    }
}

impl Forward<'_> {
    pub(crate) fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p(&format!("{prefix}.g"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        self.tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    pub(crate) fn ffn(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let (w1, b1) = (self.p(&format!("{prefix}.w1"))?, self.p(&format!("{prefix}.b1"))?);
        let (w2, b2) = (self.p(&format!("{prefix}.w2"))?, self.p(&format!("{prefix}.b2"))?);
        let h = self.tape.matmul(x, w1)?;
        let h = self.tape.add(h, b1)?;
        let h = self.tape.relu(h);
        let o = self.tape.matmul(h, w2)?;
        self.tape.add(o, b2)
    }

    fn heads(&mut self, x: Var, w: Var, n_heads: usize) -> Result<Var> {
        let (b, t, d) = dims3(self.tape.shape(x))?;
        let y = self.tape.matmul(x, w)?;
        let y = self.tape.reshape(y, &[b, t, n_heads, d / n_heads])?;
        self.tape.permute(y, &[0, 2, 1, 3])
    }

    fn attention(&mut self, prefix: &str, query: Var, keys: Var, mask: KeyMask, n_heads: usize) -> Result<Var> {
        let (b, tq, d) = dims3(self.tape.shape(query))?;
        let (bk, tk, dk) = dims3(self.tape.shape(keys))?;
        if b != bk || d != dk {
            return Err(Error::Shape {
                op: "attention",
                lhs: vec![b, tq, d],
                rhs: vec![bk, tk, dk],
            });
        }
        let dh = d / n_heads;
        let wq = self.p(&format!("{prefix}.wq"))?;
        let wk = self.p(&format!("{prefix}.wk"))?;
        let wv = self.p(&format!("{prefix}.wv"))?;
        let wo = self.p(&format!("{prefix}.wo"))?;
        let q = self.heads(query, wq, n_heads)?;
        let k = self.heads(keys, wk, n_heads)?;
        let v = self.heads(keys, wv, n_heads)?;
        let kt = self.tape.transpose(k)?;
        let scores = self.tape.bmm(q, kt)?;
        let scores = self.tape.scale(scores, 1.0 / (dh as f64).sqrt());

        let (pad, causal) = match mask {
            KeyMask::Padding(p) => (p, false),
            KeyMask::CausalPadding(p) => (p, true),
        };
        if pad.rows != b || pad.cols != tk {
            return Err(Error::invalid(
                "attention",
                format!("mask {}x{} does not match keys {b}x{tk}", pad.rows, pad.cols),
            ));
        }
        let mut blocked = Vec::with_capacity(b * n_heads * tq * tk);
        for bi in 0..b {
            for _ in 0..n_heads {
                for qi in 0..tq {
                    for ki in 0..tk {
                        blocked.push(!pad.mask[bi * tk + ki] || (causal && ki > qi));
                    }
                }
            }
        }
        let scores = self.tape.masked_fill(scores, blocked, MASK_VALUE)?;
        let attn = self.tape.softmax(scores)?;
        let ctx = self.tape.bmm(attn, v)?;
        let ctx = self.tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.tape.reshape(ctx, &[b, tq, d])?;
        self.tape.matmul(ctx, wo)
    }

    /// One pre-norm self-attention + feed-forward block over `x`.
    pub(crate) fn encoder_block(&mut self, x: Var, prefix: &str, src: &Padded, n_heads: usize) -> Result<Var> {
        let h = self.layer_norm(x, &format!("{prefix}.ln1"))?;
        let a = self.attention(&format!("{prefix}.attn"), h, h, KeyMask::Padding(src), n_heads)?;
        let a = self.dropout(a)?;
        let x = self.tape.add(x, a)?;
        let h = self.layer_norm(x, &format!("{prefix}.ln2"))?;
        let f = self.ffn(h, &format!("{prefix}.ffn"))?;
        let f = self.dropout(f)?;
        self.tape.add(x, f)
    }

    pub(crate) fn ffn_block(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let h = self.layer_norm(x, &format!("{prefix}.ln"))?;
        let f = self.ffn(h, &format!("{prefix}.ffn"))?;
        let f = self.dropout(f)?;
        self.tape.add(x, f)
    }

    fn embed(&mut self, table: &str, ids: &Padded, vocab: usize, cfg: &ModelConfig) -> Result<Var> {
        if ids.cols > cfg.max_len {
            return Err(Error::invalid(
                "embed",
                format!("sequence length {} exceeds max_len {}", ids.cols, cfg.max_len),
            ));
        }
        if let Some(&bad) = ids.ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::invalid(
                "embed",
                format!("token id {bad} outside vocabulary of {vocab}"),
            ));
        }
        let t = self.p(table)?;
        let e = self.tape.embedding(t, &ids.ids, &[ids.rows, ids.cols])?;
        let e = self.tape.scale(e, (cfg.d_model as f64).sqrt());
        let pe = self.tape.constant(sinusoid(ids.cols, cfg.d_model));
        let x = self.tape.add(e, pe)?;
        self.dropout(x)
    }

    /// Encoder output `H`, shaped `rows × cols × d_model`.
    pub fn encode(&mut self, cfg: &ModelConfig, src: &Padded) -> Result<Var> {
        let mut x = self.embed("src_emb", src, cfg.vocab_size_src, cfg)?;
        for l in 0..cfg.n_enc_layers {
            x = self.encoder_block(x, &format!("enc.layer{l}"), src, cfg.n_heads)?;
        }
        self.layer_norm(x, "enc.ln")
    }

    /// Next-token logits for every target input position, shaped
    /// `rows × cols × vocab_size_tgt`.
    pub fn decode_logits(&mut self, cfg: &ModelConfig, memory: Var, src: &Padded, tgt_in: &Padded) -> Result<Var> {
        if tgt_in.rows != src.rows {
            return Err(Error::invalid(
                "decode",
                format!("{} target rows for {} source rows", tgt_in.rows, src.rows),
            ));
        }
        let mut x = self.embed("tgt_emb", tgt_in, cfg.vocab_size_tgt, cfg)?;
        for l in 0..cfg.n_dec_layers {
            let pre = format!("dec.layer{l}");
            let h = self.layer_norm(x, &format!("{pre}.ln1"))?;
            let a = self.attention(&format!("{pre}.self_attn"), h, h, KeyMask::CausalPadding(tgt_in), cfg.n_heads)?;
            let a = self.dropout(a)?;
            x = self.tape.add(x, a)?;
            let h = self.layer_norm(x, &format!("{pre}.ln2"))?;
            let c = self.attention(&format!("{pre}.cross_attn"), h, memory, KeyMask::Padding(src), cfg.n_heads)?;
            let c = self.dropout(c)?;
            x = self.tape.add(x, c)?;
            let h = self.layer_norm(x, &format!("{pre}.ln3"))?;
            let f = self.ffn(h, &format!("{pre}.ffn"))?;
            let f = self.dropout(f)?;
            x = self.tape.add(x, f)?;
        }
        let x = self.layer_norm(x, "dec.ln")?;
        let w = self.p("out.w")?;
        let b = self.p("out.b")?;
        let logits = self.tape.matmul(x, w)?;
        self.tape.add(logits, b)
    }

    /// Greedy decoding from `memory`: at most `max_steps` tokens per row,
    /// stopping at EOS. Returned sequences exclude BOS and EOS.
    pub fn greedy_decode(&mut self, cfg: &ModelConfig, memory: Var, src: &Padded, max_steps: usize) -> Result<Vec<Vec<usize>>> {
        if max_steps > cfg.max_len {
            return Err(Error::invalid(
                "greedy_decode",
                format!("max_steps {max_steps} exceeds max_len {}", cfg.max_len),
            ));
        }
        let rows = src.rows;
        let mut prefixes: Vec<Vec<usize>> = vec![vec![cfg.bos_id]; rows];
        let mut done = vec![false; rows];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); rows];
        for step in 0..max_steps {
            let tgt_in = Padded::from_rows(&prefixes, cfg.pad_id)?;
            let logits = self.decode_logits(cfg, memory, src, &tgt_in)?;
            let v = cfg.vocab_size_tgt;
            let data = self.tape.value(logits).data();
            for r in 0..rows {
                let off = (r * (step + 1) + step) * v;
                let row = &data[off..off + v];
                let mut best = 0;
                for (k, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = k;
                    }
                }
                prefixes[r].push(best);
                if !done[r] {
                    if best == cfg.eos_id {
                        done[r] = true;
                    } else {
                        out[r].push(best);
                    }
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }
}

/// Mean negative log-likelihood of `tgt_out` over its unmasked positions.
pub fn nll_loss(fwd: &mut Forward, logits: Var, tgt_out: &Padded) -> Result<Var> {
    let count = tgt_out.real_tokens();
    if count == 0 {
        return Err(Error::invalid("nll_loss", "every target position is masked"));
    }
    let lp = fwd.tape.log_softmax(logits)?;
    let picked = fwd.tape.pick(lp, &tgt_out.ids)?;
    let w = tgt_out
        .mask
        .iter()
        .map(|&m| if m { 1.0 / count as f64 } else { 0.0 })
        .collect();
    let weighted = fwd.tape.mul_const(picked, w)?;
    let s = fwd.tape.sum(weighted);
    Ok(fwd.tape.scale(s, -1.0))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::forward::Trainable;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size_src: 10,
            vocab_size_tgt: 12,
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ffn: 16,
            max_len: 16,
            dropout_rate: 0.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_validation_reports_every_problem() {
        let cfg = ModelConfig {
            d_model: 10,
            n_heads: 4,
            bos_id: 0,
            ..tiny()
        };
        let p = cfg.problems();
        assert_eq!(p.len(), 2, "{p:?}");
    }

    #[test]
    fn encode_shape() {
        let cfg = tiny();
        let params = init_params(&cfg, &mut Rng::seed_from_u64(0)).unwrap();
        let mut f = Forward::eval(&params);
        let src = Padded::from_rows(&[vec![3, 4, 5]], 0).unwrap();
        let h = f.encode(&cfg, &src).unwrap();
        assert_eq!(f.tape.shape(h), &[1, 3, 8]);
    }

    #[test]
    fn out_of_vocab_and_overlong_inputs_fail() {
        let cfg = tiny();
        let params = init_params(&cfg, &mut Rng::seed_from_u64(0)).unwrap();
        let mut f = Forward::eval(&params);
        let src = Padded::from_rows(&[vec![3, 10]], 0).unwrap();
        assert!(f.encode(&cfg, &src).is_err());
        let long = Padded::from_rows(&[vec![3; 17]], 0).unwrap();
        assert!(f.encode(&cfg, &long).is_err());
    }

    #[test]
    fn zero_output_projection_gives_uniform_distribution() {
        let cfg = tiny();
        let mut params = init_params(&cfg, &mut Rng::seed_from_u64(1)).unwrap();
        params.get_mut("out.w").unwrap().data_mut().fill(0.0);
        let mut f = Forward::eval(&params);
        let src = Padded::from_rows(&[vec![3, 4], vec![5, 6, 7]], 0).unwrap();
        let tgt = Padded::from_rows(&[vec![1, 4, 4], vec![1, 5]], 0).unwrap();
        let h = f.encode(&cfg, &src).unwrap();
        let logits = f.decode_logits(&cfg, h, &src, &tgt).unwrap();
        let lp = f.tape.log_softmax(logits).unwrap();
        let want = -(12f64).ln();
        assert!(f.tape.value(lp).data().iter().all(|v| (v - want).abs() < 1e-12));
    }

    #[test]
    fn nll_of_uniform_logits_is_log_vocab() {
        let params = ModelParams::new();
        let mut f = Forward::eval(&params);
        let logits = f.tape.constant(Tensor::zeros([2, 3, 16]));
        let tgt = Padded::from_rows(&[vec![4, 5, 6], vec![7]], 0).unwrap();
        let l = nll_loss(&mut f, logits, &tgt).unwrap();
        assert!((f.tape.value(l).item() - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_matches_scalar_computation() {
        // Two tokens over a 3-way vocabulary.
        let logits = [[0.5, -1.0, 2.0], [1.5, 0.0, -0.5]];
        let gold = [2usize, 0];
        let mut want = 0.0;
        for (row, &g) in logits.iter().zip(&gold) {
            let z: f64 = row.iter().map(|v: &f64| v.exp()).sum();
            want -= (row[g].exp() / z).ln();
        }
        want /= 2.0;

        let params = ModelParams::new();
        let mut f = Forward::eval(&params);
        let x = f
            .tape
            .constant(Tensor::new([1, 2, 3], logits.iter().flatten().copied().collect()).unwrap());
        let tgt = Padded::from_rows(&[gold.to_vec()], 0).unwrap();
        let l = nll_loss(&mut f, x, &tgt).unwrap();
        assert!((f.tape.value(l).item() - want).abs() < 1e-12);
    }

    #[test]
    fn peaked_logits_drive_nll_to_zero() {
        let params = ModelParams::new();
        let mut f = Forward::eval(&params);
        let mut data = vec![0.0; 4];
        data[1] = 800.0;
        let x = f.tape.constant(Tensor::new([1, 1, 4], data).unwrap());
        let tgt = Padded::from_rows(&[vec![1]], 0).unwrap();
        let l = nll_loss(&mut f, x, &tgt).unwrap();
        assert!(f.tape.value(l).item().abs() < 1e-12);
    }

    #[test]
    fn all_masked_targets_are_rejected() {
        let params = ModelParams::new();
        let mut f = Forward::eval(&params);
        let x = f.tape.constant(Tensor::zeros([1, 2, 4]));
        let tgt = Padded {
            ids: vec![0, 0],
            mask: vec![false, false],
            rows: 1,
            cols: 2,
        };
        assert!(nll_loss(&mut f, x, &tgt).is_err());
    }

    #[test]
    fn decoder_is_causal() {
        let cfg = tiny();
        let params = init_params(&cfg, &mut Rng::seed_from_u64(2)).unwrap();
        let src = Padded::from_rows(&[vec![3, 4, 5, 6]], 0).unwrap();
        let run = |tgt: Vec<usize>| {
            let mut f = Forward::eval(&params);
            let h = f.encode(&cfg, &src).unwrap();
            let t = Padded::from_rows(&[tgt], 0).unwrap();
            let l = f.decode_logits(&cfg, h, &src, &t).unwrap();
            f.tape.value(l).data().to_vec()
        };
        let base = run(vec![1, 5, 6, 7, 8]);
        for j in 1..5 {
            let mut t = vec![1, 5, 6, 7, 8];
            t[j] = 11;
            let changed = run(t);
            let v = cfg.vocab_size_tgt;
            assert_eq!(&base[..j * v], &changed[..j * v], "position {j} leaked backwards");
            assert_ne!(&base[j * v..], &changed[j * v..]);
        }
    }

    #[test]
    fn identical_rows_encode_identically_and_batch_order_permutes() {
        let cfg = tiny();
        let params = init_params(&cfg, &mut Rng::seed_from_u64(3)).unwrap();
        let a = vec![3, 4, 5];
        let b = vec![6, 7];
        let enc = |rows: &[Vec<usize>]| {
            let mut f = Forward::eval(&params);
            let src = Padded::from_rows(rows, 0).unwrap();
            let h = f.encode(&cfg, &src).unwrap();
            f.tape.value(h).data().to_vec()
        };
        let same = enc(&[a.clone(), a.clone()]);
        assert_eq!(&same[..24], &same[24..]);
        let ab = enc(&[a.clone(), b.clone()]);
        let ba = enc(&[b, a]);
        assert_eq!(&ab[..24], &ba[24..]);
        assert_eq!(&ab[24..], &ba[..24]);
    }

    #[test]
    fn greedy_decode_edge_cases() {
        let cfg = tiny();
        let params = init_params(&cfg, &mut Rng::seed_from_u64(4)).unwrap();
        let src = Padded::from_rows(&[vec![3, 4, 5], vec![6]], 0).unwrap();
        let mut f = Forward::eval(&params);
        let h = f.encode(&cfg, &src).unwrap();
        assert_eq!(f.greedy_decode(&cfg, h, &src, 0).unwrap(), vec![Vec::<usize>::new(); 2]);
        let a = f.greedy_decode(&cfg, h, &src, 6).unwrap();
        let b = f.greedy_decode(&cfg, h, &src, 6).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.len() <= 6 && !s.contains(&cfg.eos_id)));
        assert!(f.greedy_decode(&cfg, h, &src, 17).is_err());
    }

    #[test]
    fn dropout_changes_training_passes_only() {
        let cfg = ModelConfig {
            dropout_rate: 0.5,
            ..tiny()
        };
        let params = init_params(&cfg, &mut Rng::seed_from_u64(5)).unwrap();
        let src = Padded::from_rows(&[vec![3, 4, 5]], 0).unwrap();
        let mut rng = Rng::seed_from_u64(9);
        let mut train = Forward::new(&params, Trainable::Everything).with_dropout(cfg.dropout_rate, &mut rng);
        let h1 = train.encode(&cfg, &src).unwrap();
        let h1 = train.tape.value(h1).data().to_vec();
        let mut ev = Forward::eval(&params);
        let h2 = ev.encode(&cfg, &src).unwrap();
        assert_ne!(h1, ev.tape.value(h2).data());
    }
}
