//! Desk-scale multi-domain transduction data.
//!
//! Every domain shares one "general" component, a fixed substitution cipher
//! over the alphabet, composed with a small domain-specific rule. Source
//! sentences also lean towards a per-domain block of the alphabet
//! (`domain_skew`), so the domain is partly recoverable from the input alone.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{DomainCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::Rng;

/// First id of the alphabet block in [`Vocabulary::synthetic`].
const FIRST_WORD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainRule {
    Copy,
    Reverse,
    /// Cyclic shift of every (ciphered) token value by +1.
    Shift,
    /// Drops tokens at even 0-based positions; never returns an empty output.
    DropEven,
}

impl DomainRule {
    pub const ALL: [DomainRule; 4] = [DomainRule::Copy, DomainRule::Reverse, DomainRule::Shift, DomainRule::DropEven];

    pub fn name(self) -> &'static str {
        match self {
            DomainRule::Copy => "copy",
            DomainRule::Reverse => "reverse",
            DomainRule::Shift => "shift",
            DomainRule::DropEven => "drop_even",
        }
    }

    /// Applies the rule to already-ciphered alphabet indices.
    pub fn apply(self, ciphered: &[usize], alphabet_size: usize) -> Vec<usize> {
        match self {
            DomainRule::Copy => ciphered.to_vec(),
            DomainRule::Reverse => ciphered.iter().rev().copied().collect(),
            DomainRule::Shift => ciphered.iter().map(|&a| (a + 1) % alphabet_size).collect(),
            DomainRule::DropEven => {
                if ciphered.len() < 2 {
                    ciphered.to_vec()
                } else {
                    ciphered.iter().skip(1).step_by(2).copied().collect()
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_domains: usize,
    /// Pairs per domain (train and held-out together).
    pub sizes: Vec<usize>,
    pub len_min: usize,
    pub len_max: usize,
    pub alphabet_size: usize,
    /// Probability that a source token is drawn from its domain's block of
    /// the alphabet rather than uniformly.
    pub domain_skew: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_domains: 4,
            sizes: vec![4000, 4000, 1000, 1000],
            len_min: 3,
            len_max: 12,
            alphabet_size: 24,
            domain_skew: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.n_domains == 0 || self.n_domains > DomainRule::ALL.len() {
            p.push(format!(
                "data.n_domains must be in 1..={}, got {}",
                DomainRule::ALL.len(),
                self.n_domains
            ));
        }
        if self.sizes.len() != self.n_domains {
            p.push(format!(
                "data.sizes has {} entries for {} domains",
                self.sizes.len(),
                self.n_domains
            ));
        }
        if self.alphabet_size < 4 {
            p.push(format!("data.alphabet_size must be >= 4, got {}", self.alphabet_size));
        }
        if self.len_min == 0 || self.len_min > self.len_max {
            p.push(format!(
                "data.len_min..=len_max must be a nonempty positive range, got {}..={}",
                self.len_min, self.len_max
            ));
        }
        if !(0.0..=1.0).contains(&self.domain_skew) {
            p.push(format!("data.domain_skew must lie in [0, 1], got {}", self.domain_skew));
        }
        p
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::synthetic(self.alphabet_size, self.n_domains)
    }

    /// The shared substitution cipher as a permutation of alphabet indices.
    pub fn cipher(&self, seed: u64) -> Vec<usize> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..self.alphabet_size).collect();
        perm.shuffle(&mut rng);
        perm
    }

    /// Target for `source` (token ids) under `rule`.
    pub fn transduce(&self, cipher: &[usize], rule: DomainRule, source: &[usize]) -> Vec<usize> {
        let ciphered: Vec<usize> = source.iter().map(|&id| cipher[id - FIRST_WORD]).collect();
        rule.apply(&ciphered, self.alphabet_size)
            .into_iter()
            .map(|a| a + FIRST_WORD)
            .collect()
    }
}

/// One corpus per domain, deterministic in `seed`. Domain `d` follows
/// `DomainRule::ALL[d]`.
pub fn generate_synthetic(seed: u64, spec: &SyntheticSpec) -> Result<Vec<DomainCorpus>> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let cipher = spec.cipher(seed);
    let a = spec.alphabet_size;
    let block = (a / spec.n_domains).max(1);
    let mut out = Vec::with_capacity(spec.n_domains);
    for (d, &size) in spec.sizes.iter().enumerate() {
        let rule = DomainRule::ALL[d];
        let mut rng = Rng::seed_from_u64(seed);
        rng.set_stream(1 + d as u64);
        let block_start = (d * block) % a;
        let pairs = (0..size)
            .map(|_| {
                let len = rng.random_range(spec.len_min..=spec.len_max);
                let src: Vec<usize> = (0..len)
                    .map(|_| {
                        let idx = if rng.random::<f64>() < spec.domain_skew {
                            block_start + rng.random_range(0..block)
                        } else {
                            rng.random_range(0..a)
                        };
                        idx + FIRST_WORD
                    })
                    .collect();
                let tgt = spec.transduce(&cipher, rule, &src);
                (src, tgt)
            })
            .collect();
        out.push(DomainCorpus::new(d, rule.name(), pairs));
    }
    Ok(out)
}
