//! Vocabulary, parallel corpora, batching and domain sampling.

mod io;
mod sampler;
mod synthetic;

pub use io::{load_corpus, load_dataset, save_corpus, save_dataset, MANIFEST_FILE, VOCAB_FILE};
pub use sampler::{sampling_probabilities, SamplerState};
pub use synthetic::{generate_synthetic, DomainRule, SyntheticSpec};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmt::Padded;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Bijective token ↔ id map; the four special tokens hold ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD, BOS, EOS, UNK] {
            v.push(t.to_string())?;
        }
        for t in tokens {
            v.push(t.into())?;
        }
        Ok(v)
    }

    fn push(&mut self, tok: String) -> Result<()> {
        if tok.is_empty() || tok.chars().any(char::is_whitespace) {
            return Err(Error::invalid("vocabulary", format!("bad token {tok:?}")));
        }
        if self.index.contains_key(&tok) {
            return Err(Error::invalid("vocabulary", format!("duplicate token {tok:?}")));
        }
        self.index.insert(tok.clone(), self.tokens.len());
        self.tokens.push(tok);
        Ok(())
    }

    /// Special tokens, then `w0..w{alphabet_size}`, then one `<dN>` tag per
    /// domain.
    pub fn synthetic(alphabet_size: usize, n_domain_tags: usize) -> Self {
        let words = (0..alphabet_size).map(|i| format!("w{i}"));
        let tags = (0..n_domain_tags).map(domain_tag);
        Self::new(words.chain(tags)).expect("generated tokens are unique")
    }

    /// Rebuilds a vocabulary from its full token list (specials included).
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..4] != [PAD, BOS, EOS, UNK] {
            return Err(Error::invalid(
                "vocabulary",
                "token list must start with <pad> <s> </s> <unk>",
            ));
        }
        Self::new(tokens.into_iter().skip(4))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps whitespace-separated tokens to ids; unknown tokens become `<unk>`.
    pub fn encode(&self, line: &str) -> Vec<usize> {
        line.split_whitespace()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tag_id(&self, domain: usize) -> Option<usize> {
        self.id(&domain_tag(domain))
    }
}

pub fn domain_tag(domain: usize) -> String {
    format!("<d{domain}>")
}

/// Parallel data of one domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCorpus {
    pub domain: usize,
    pub name: String,
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
}

impl DomainCorpus {
    pub fn new(domain: usize, name: impl Into<String>, pairs: Vec<(Vec<usize>, Vec<usize>)>) -> Self {
        DomainCorpus {
            domain,
            name: name.into(),
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &[usize]> {
        self.pairs.iter().map(|(s, _)| s.as_slice())
    }

    pub fn targets(&self) -> impl Iterator<Item = &[usize]> {
        self.pairs.iter().map(|(_, t)| t.as_slice())
    }

    /// Splits off the last `n_test` pairs.
    pub fn split(&self, n_test: usize) -> Result<(DomainCorpus, DomainCorpus)> {
        if n_test >= self.pairs.len() {
            return Err(Error::invalid(
                "split",
                format!(
                    "domain {} has {} pairs, cannot hold out {n_test}",
                    self.name,
                    self.pairs.len()
                ),
            ));
        }
        let cut = self.pairs.len() - n_test;
        Ok((
            DomainCorpus::new(self.domain, self.name.clone(), self.pairs[..cut].to_vec()),
            DomainCorpus::new(self.domain, self.name.clone(), self.pairs[cut..].to_vec()),
        ))
    }

    /// The same corpus with `tag` prepended to every source sentence.
    pub fn with_source_tag(&self, tag: usize) -> DomainCorpus {
        let pairs = self
            .pairs
            .iter()
            .map(|(s, t)| {
                let mut s2 = Vec::with_capacity(s.len() + 1);
                s2.push(tag);
                s2.extend_from_slice(s);
                (s2, t.clone())
            })
            .collect();
        DomainCorpus::new(self.domain, self.name.clone(), pairs)
    }
}

/// One single-domain training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub domain: usize,
    pub src: Padded,
    /// BOS-shifted decoder input.
    pub tgt_in: Padded,
    /// Gold next tokens (target followed by EOS).
    pub tgt_out: Padded,
    /// Indices of the member pairs in the originating corpus.
    pub pair_ids: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(domain: usize, pairs: &[(Vec<usize>, Vec<usize>)], pair_ids: Vec<usize>) -> Result<Self> {
        let src: Vec<Vec<usize>> = pairs.iter().map(|(s, _)| s.clone()).collect();
        let tin: Vec<Vec<usize>> = pairs
            .iter()
            .map(|(_, t)| std::iter::once(BOS_ID).chain(t.iter().copied()).collect())
            .collect();
        let tout: Vec<Vec<usize>> = pairs
            .iter()
            .map(|(_, t)| t.iter().copied().chain(std::iter::once(EOS_ID)).collect())
            .collect();
        Ok(Batch {
            domain,
            src: Padded::from_rows(&src, PAD_ID)?,
            tgt_in: Padded::from_rows(&tin, PAD_ID)?,
            tgt_out: Padded::from_rows(&tout, PAD_ID)?,
            pair_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.src.rows
    }

    pub fn is_empty(&self) -> bool {
        self.src.rows == 0
    }

    pub fn pad_tokens(&self) -> usize {
        self.src.pad_tokens() + self.tgt_out.pad_tokens()
    }

    pub fn real_tokens(&self) -> usize {
        self.src.real_tokens() + self.tgt_out.real_tokens()
    }
}

/// Width a pair occupies in a padded batch (decoder side includes BOS/EOS).
fn pair_width((s, t): &(Vec<usize>, Vec<usize>)) -> usize {
    s.len().max(t.len() + 1)
}

fn pack(corpus: &DomainCorpus, order: &[usize], batch_tokens: usize) -> Result<Vec<Batch>> {
    for &i in order {
        let w = pair_width(&corpus.pairs[i]);
        if w > batch_tokens {
            return Err(Error::invalid(
                "make_batches",
                format!(
                    "pair {i} of domain {} needs {w} tokens per row, batch budget is {batch_tokens}",
                    corpus.name
                ),
            ));
        }
    }
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut width = 0;
    for &i in order {
        let w = pair_width(&corpus.pairs[i]);
        let new_width = width.max(w);
        if !cur.is_empty() && new_width * (cur.len() + 1) > batch_tokens {
            batches.push(finish(corpus, std::mem::take(&mut cur))?);
            width = w;
        } else {
            width = new_width;
        }
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(finish(corpus, cur)?);
    }
    Ok(batches)
}

fn finish(corpus: &DomainCorpus, ids: Vec<usize>) -> Result<Batch> {
    let pairs: Vec<_> = ids.iter().map(|&i| corpus.pairs[i].clone()).collect();
    Batch::from_pairs(corpus.domain, &pairs, ids)
}

/// Length-bucketed single-domain batches, each holding at most
/// `batch_tokens` padded positions per side. Every pair appears exactly once.
pub fn make_batches(corpus: &DomainCorpus, batch_tokens: usize) -> Result<Vec<Batch>> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by_key(|&i| (corpus.pairs[i].0.len(), corpus.pairs[i].1.len(), i));
    pack(corpus, &order, batch_tokens)
}

/// Like [`make_batches`] but keeps corpus order (no length bucketing).
pub fn make_batches_in_order(corpus: &DomainCorpus, batch_tokens: usize) -> Result<Vec<Batch>> {
    let order: Vec<usize> = (0..corpus.len()).collect();
    pack(corpus, &order, batch_tokens)
}

#[cfg(test)]
mod tests {
    use rand::{Rng as _, SeedableRng};

    use super::*;
    use crate::Rng;

    fn random_corpus(seed: u64, n: usize) -> DomainCorpus {
        let mut rng = Rng::seed_from_u64(seed);
        let pairs = (0..n)
            .map(|_| {
                let ls = rng.random_range(1..15);
                let lt = rng.random_range(1..15);
                (
                    (0..ls).map(|_| rng.random_range(4..20)).collect(),
                    (0..lt).map(|_| rng.random_range(4..20)).collect(),
                )
            })
            .collect();
        DomainCorpus::new(2, "rand", pairs)
    }

    #[test]
    fn vocabulary_is_bijective_with_fixed_specials() {
        let v = Vocabulary::synthetic(24, 4);
        assert_eq!(v.len(), 4 + 24 + 4);
        assert_eq!(v.id(PAD), Some(PAD_ID));
        assert_eq!(v.id(EOS), Some(EOS_ID));
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i));
        }
        assert_eq!(v.tag_id(3), Some(31));
        assert_eq!(v.encode("w0 zzz w5"), vec![4, UNK_ID, 9]);
        assert!(Vocabulary::new(["a", "a"]).is_err());
    }

    #[test]
    fn batches_are_single_domain_and_cover_every_pair_once() {
        let c = random_corpus(1, 300);
        let batches = make_batches(&c, 64).unwrap();
        assert!(batches.iter().all(|b| b.domain == 2));
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.pair_ids.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..300).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.src.rows * b.src.cols <= 64);
            assert!(b.tgt_in.rows * b.tgt_in.cols <= 64);
        }
    }

    #[test]
    fn target_tokens_are_conserved() {
        let c = random_corpus(2, 200);
        let want: usize = c.targets().map(|t| t.len() + 1).sum();
        let got: usize = make_batches(&c, 80)
            .unwrap()
            .iter()
            .map(|b| b.tgt_out.real_tokens())
            .sum();
        assert_eq!(got, want);
    }

    #[test]
    fn length_bucketing_reduces_padding() {
        let c = random_corpus(3, 500);
        let pads = |bs: Vec<Batch>| bs.iter().map(Batch::pad_tokens).sum::<usize>();
        let sorted = pads(make_batches(&c, 96).unwrap());
        let unsorted = pads(make_batches_in_order(&c, 96).unwrap());
        assert!(sorted < unsorted, "{sorted} vs {unsorted}");
    }

    #[test]
    fn oversized_sentence_is_named() {
        let c = DomainCorpus::new(0, "x", vec![(vec![4; 3], vec![5; 3]), (vec![4; 20], vec![5])]);
        let e = make_batches(&c, 10).unwrap_err().to_string();
        assert!(e.contains("pair 1"), "{e}");
    }

    #[test]
    fn tagging_adds_one_token() {
        let c = random_corpus(4, 10);
        let t = c.with_source_tag(99);
        for ((a, _), (b, _)) in c.pairs.iter().zip(&t.pairs) {
            assert_eq!(b.len(), a.len() + 1);
            assert_eq!(b[0], 99);
        }
    }
}
