//! Plain-text corpora: one `source<TAB>target` pair per line, tokens
//! separated by spaces. A dataset directory holds `vocab.txt` (one token per
//! line, specials first), `domains.txt` (one domain name per line, in index
//! order) and one `<name>.tsv` per domain.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DomainCorpus, Vocabulary};
use crate::error::{Error, Result};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MANIFEST_FILE: &str = "domains.txt";

fn corpus_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.tsv"))
}

pub fn save_corpus(path: &Path, corpus: &DomainCorpus, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for (s, t) in &corpus.pairs {
        out.push_str(&vocab.decode(s));
        out.push('\t');
        out.push_str(&vocab.decode(t));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path, domain: usize, name: &str, vocab: &Vocabulary) -> Result<DomainCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (s, t) = line
            .split_once('\t')
            .ok_or_else(|| parse(i + 1, "expected `source<TAB>target`"))?;
        let (s, t) = (vocab.encode(s), vocab.encode(t));
        if s.is_empty() || t.is_empty() {
            return Err(parse(i + 1, "empty source or target"));
        }
        pairs.push((s, t));
    }
    if pairs.is_empty() {
        log::warn!("{} holds no sentence pairs", path.display());
    }
    Ok(DomainCorpus::new(domain, name, pairs))
}

pub fn save_dataset(dir: &Path, vocab: &Vocabulary, corpora: &[DomainCorpus]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab_path = dir.join(VOCAB_FILE);
    let mut listing = vocab.tokens().join("\n");
    listing.push('\n');
    fs::write(&vocab_path, listing).map_err(|e| Error::io(&vocab_path, e))?;
    let mut manifest = String::new();
    for (i, c) in corpora.iter().enumerate() {
        if c.domain != i {
            return Err(Error::invalid("save_dataset", format!("corpus {i} carries domain index {}", c.domain)));
        }
        manifest.push_str(&c.name);
        manifest.push('\n');
        save_corpus(&corpus_file(dir, &c.name), c, vocab)?;
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_dataset(dir: &Path) -> Result<(Vocabulary, Vec<DomainCorpus>)> {
    let vocab_path = dir.join(VOCAB_FILE);
    let tokens = fs::read_to_string(&vocab_path)
        .map_err(|e| Error::io(&vocab_path, e))?
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let vocab = Vocabulary::from_token_list(tokens)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let corpora = manifest
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(d, name)| load_corpus(&corpus_file(dir, name), d, name, &vocab))
        .collect::<Result<Vec<_>>>()?;
    if corpora.is_empty() {
        return Err(Error::Missing(format!("{} lists no domains", manifest_path.display())));
    }
    Ok((vocab, corpora))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            sizes: vec![20, 20, 5, 5],
            ..SyntheticSpec::default()
        };
        let corpora = generate_synthetic(2, &spec).unwrap();
        let vocab = spec.vocabulary();
        save_dataset(dir.path(), &vocab, &corpora).unwrap();
        let (v2, c2) = load_dataset(dir.path()).unwrap();
        assert_eq!(v2, vocab);
        assert_eq!(c2, corpora);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        fs::write(&path, "w1 w2\tw3\nw1 w2 w3\n").unwrap();
        let vocab = Vocabulary::synthetic(4, 0);
        match load_corpus(&path, 0, "bad", &vocab) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        fs::write(&path, "").unwrap();
        let c = load_corpus(&path, 1, "empty", &Vocabulary::synthetic(4, 0)).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.tsv");
        fs::write(&path, "w1 zzz\tw2\n").unwrap();
        let c = load_corpus(&path, 0, "u", &Vocabulary::synthetic(4, 0)).unwrap();
        assert_eq!(c.pairs[0].0, vec![5, crate::data::UNK_ID]);
    }
}
