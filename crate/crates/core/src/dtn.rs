//! Per-domain residual transformation networks.
//!
//! Each domain `n` owns a private stack of blocks under `dtn.<n>.*`. The
//! transform maps the shared encoder output `H` to `H' = F(H; W_n) + H`; the
//! residual is carried inside each pre-norm block, and because every block's
//! output projections start at zero a fresh bank is exactly the identity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Forward;
use crate::nmt::{init_block, init_ffn_block, ModelConfig, Padded};
use crate::params::ModelParams;
use crate::tensor::Var;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtnKind {
    /// Self-attention followed by a feed-forward sublayer.
    Attention,
    /// Feed-forward sublayers only.
    Ffn,
}

impl fmt::Display for DtnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DtnKind::Attention => "attention",
            DtnKind::Ffn => "ffn",
        })
    }
}

impl FromStr for DtnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(DtnKind::Attention),
            "ffn" => Ok(DtnKind::Ffn),
            other => Err(Error::invalid("dtn", format!("unknown kind `{other}`"))),
        }
    }
}

/// Layout of a transformation bank; its tensors live in [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtnBank {
    pub n_domains: usize,
    pub kind: DtnKind,
    pub depth: usize,
}

pub fn domain_prefix(domain: usize) -> String {
    format!("dtn.{domain}.")
}

impl DtnBank {
    /// Builds the bank and its freshly initialised parameters.
    pub fn init(cfg: &ModelConfig, n_domains: usize, kind: DtnKind, depth: usize, rng: &mut Rng) -> Result<(Self, ModelParams)> {
        if n_domains < 1 {
            return Err(Error::invalid("init_dtn", "need at least one domain"));
        }
        if depth < 1 {
            return Err(Error::invalid("init_dtn", "depth must be at least 1"));
        }
        let mut p = ModelParams::new();
        for n in 0..n_domains {
            for k in 0..depth {
                let prefix = format!("dtn.{n}.block{k}");
                match kind {
                    DtnKind::Attention => init_block(&mut p, &prefix, cfg, true, rng)?,
                    DtnKind::Ffn => init_ffn_block(&mut p, &prefix, cfg, true, rng)?,
                }
            }
        }
        Ok((DtnBank { n_domains, kind, depth }, p))
    }

    /// Scalar parameter count of one domain's transformation.
    pub fn params_per_domain(&self, params: &ModelParams) -> usize {
        params.numel_with_prefix(&domain_prefix(0))
    }

    pub fn check_domain(&self, domain: usize) -> Result<()> {
        if domain >= self.n_domains {
            return Err(Error::UnknownDomain {
                domain,
                n_domains: self.n_domains,
            });
        }
        Ok(())
    }
}

impl Forward<'_> {
    /// Domain-specific representation `H'` of encoder output `h`; only
    /// `dtn.<domain>.*` parameters participate.
    pub fn dtn_transform(&mut self, bank: &DtnBank, cfg: &ModelConfig, h: Var, src: &Padded, domain: usize) -> Result<Var> {
        bank.check_domain(domain)?;
        let mut x = h;
        for k in 0..bank.depth {
            let prefix = format!("dtn.{domain}.block{k}");
            x = match bank.kind {
                DtnKind::Attention => self.encoder_block(x, &prefix, src, cfg.n_heads)?,
                DtnKind::Ffn => self.ffn_block(x, &prefix)?,
            };
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::forward::{check_param_grad, Trainable};
    use crate::tensor::Tensor;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size_src: 10,
            vocab_size_tgt: 10,
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ffn: 12,
            max_len: 16,
            dropout_rate: 0.0,
            ..ModelConfig::default()
        }
    }

    fn random_h(rng: &mut Rng) -> Tensor {
        Tensor::uniform([2, 3, 8], 1.0, rng)
    }

    #[test]
    fn fresh_bank_is_identity_for_both_kinds() {
        let c = cfg();
        let src = Padded::from_rows(&[vec![3, 4, 5], vec![6, 7]], 0).unwrap();
        for kind in [DtnKind::Attention, DtnKind::Ffn] {
            let mut rng = Rng::seed_from_u64(11);
            let (bank, params) = DtnBank::init(&c, 3, kind, 2, &mut rng).unwrap();
            let h = random_h(&mut rng);
            for d in 0..3 {
                let mut f = Forward::eval(&params);
                let hv = f.tape.constant(h.clone());
                let out = f.dtn_transform(&bank, &c, hv, &src, d).unwrap();
                assert!(f.tape.value(out).bit_eq(&h), "{kind} domain {d}");
            }
        }
    }

    #[test]
    fn paths_are_disjoint_per_domain() {
        let (bank, params) = DtnBank::init(&cfg(), 4, DtnKind::Attention, 1, &mut Rng::seed_from_u64(0)).unwrap();
        assert_eq!(bank.n_domains, 4);
        let per = bank.params_per_domain(&params);
        for d in 0..4 {
            assert_eq!(params.numel_with_prefix(&domain_prefix(d)), per);
        }
        assert_eq!(params.numel(), 4 * per);
    }

    #[test]
    fn kinds_have_different_sizes() {
        let c = cfg();
        let (a, pa) = DtnBank::init(&c, 1, DtnKind::Attention, 1, &mut Rng::seed_from_u64(0)).unwrap();
        let (f, pf) = DtnBank::init(&c, 1, DtnKind::Ffn, 1, &mut Rng::seed_from_u64(0)).unwrap();
        let (na, nf) = (a.params_per_domain(&pa), f.params_per_domain(&pf));
        // attention block: 2 layer norms + 4 d×d projections + ffn
        let ffn = 8 * 12 + 12 + 12 * 8 + 8;
        assert_eq!(na, 2 * 16 + 4 * 64 + ffn);
        assert_eq!(nf, 16 + ffn);
    }

    #[test]
    fn unknown_domain_and_empty_bank_fail() {
        let c = cfg();
        assert!(DtnBank::init(&c, 0, DtnKind::Attention, 1, &mut Rng::seed_from_u64(0)).is_err());
        let (bank, params) = DtnBank::init(&c, 2, DtnKind::Attention, 1, &mut Rng::seed_from_u64(0)).unwrap();
        let mut f = Forward::eval(&params);
        let h = f.tape.constant(Tensor::zeros([1, 1, 8]));
        let src = Padded::from_rows(&[vec![3]], 0).unwrap();
        assert!(matches!(
            f.dtn_transform(&bank, &c, h, &src, 2),
            Err(Error::UnknownDomain { domain: 2, .. })
        ));
    }

    /// Perturbs the zero-initialised output projections so gradients are
    /// non-trivial.
    fn trained_like(params: &mut ModelParams, rng: &mut Rng) {
        for (name, t) in params.iter_mut() {
            if name.ends_with(".wo") || name.ends_with(".w2") {
                *t = Tensor::uniform(t.shape().to_vec(), 0.3, rng).with_requires_grad();
            }
        }
    }

    #[test]
    fn inactive_domains_get_exactly_zero_gradient() {
        let c = cfg();
        let mut rng = Rng::seed_from_u64(5);
        let (bank, mut params) = DtnBank::init(&c, 3, DtnKind::Attention, 1, &mut rng).unwrap();
        trained_like(&mut params, &mut rng);
        let h = random_h(&mut rng);
        let src = Padded::from_rows(&[vec![3, 4, 5], vec![6, 7]], 0).unwrap();
        let mut f = Forward::new(&params, Trainable::Everything);
        let hv = f.tape.constant(h);
        let out = f.dtn_transform(&bank, &c, hv, &src, 1).unwrap();
        let sq = f.tape.mul(out, out).unwrap();
        let loss = f.tape.sum(sq);
        f.backward(loss).unwrap();
        let grads = f.grads();
        assert!(!grads.is_empty());
        assert!(grads.iter().all(|(n, _)| n.starts_with("dtn.1.")));
        assert!(grads.iter().any(|(_, g)| g.iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn active_domain_gradient_matches_finite_differences() {
        let c = cfg();
        let mut rng = Rng::seed_from_u64(6);
        let (bank, mut params) = DtnBank::init(&c, 2, DtnKind::Attention, 1, &mut rng).unwrap();
        trained_like(&mut params, &mut rng);
        let h = random_h(&mut rng);
        let src = Padded::from_rows(&[vec![3, 4, 5], vec![6, 7]], 0).unwrap();
        for name in ["dtn.0.block0.attn.wq", "dtn.0.block0.ffn.w1", "dtn.0.block0.ln1.g"] {
            let n = params.get(name).unwrap().len();
            let coords: Vec<usize> = (0..n).step_by(3).collect();
            let report = check_param_grad(&params, name, &coords, 1e-5, 1e-3, |f| {
                let hv = f.tape.constant(h.clone());
                let out = f.dtn_transform(&bank, &c, hv, &src, 0)?;
                let sq = f.tape.mul(out, out)?;
                Ok(f.tape.sum(sq))
            })
            .unwrap();
            assert!(report.passed, "{name}: {}", report.max_rel_error);
        }
    }
}
