//! BLEU, paired bootstrap, and the analysis experiments run on checkpoints.

use std::collections::HashMap;
use std::hash::Hash;
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Recipe};
use crate::data::{DomainCorpus, Vocabulary};
use crate::decode::{translate, DECODE_CHUNK};
use crate::error::{Error, Result};
use crate::forward::{Forward, Trainable};
use crate::nmt::Padded;
use crate::optim::{Adam, OptimConfig};
use crate::params::ModelParams;
use crate::pipeline::csv_err;
use crate::tensor::Tensor;
use crate::Rng;

const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and hypothesis n-gram totals per order, plus
/// hypothesis and reference lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub hyp_ngrams: [usize; MAX_ORDER],
    pub ref_ngrams: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.hyp_ngrams[n] += o.hyp_ngrams[n];
            self.ref_ngrams[n] += o.ref_ngrams[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts<T: Eq + Hash>(s: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn sentence_stats<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> BleuStats {
    let mut st = BleuStats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..BleuStats::default()
    };
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        st.hyp_ngrams[n - 1] = hyp.len().saturating_sub(n - 1);
        st.ref_ngrams[n - 1] = reference.len().saturating_sub(n - 1);
        st.matches[n - 1] = h.iter().map(|(g, &c)| c.min(*r.get(g).unwrap_or(&0))).sum();
    }
    st
}

impl BleuStats {
    /// Corpus BLEU in `[0, 100]`. Orders for which neither side has any
    /// n-gram are left out of the geometric mean; any remaining order with no
    /// match gives 0.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for n in 0..MAX_ORDER {
            if self.hyp_ngrams[n] == 0 && self.ref_ngrams[n] == 0 {
                continue;
            }
            if self.matches[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[n] as f64 / self.hyp_ngrams[n] as f64).ln();
            orders += 1;
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
        100.0 * bp * (log_sum / orders as f64).exp()
    }
}

/// Corpus-level 4-gram BLEU with brevity penalty and no smoothing.
pub fn bleu<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::invalid("bleu", "no hypotheses"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::invalid(
            "bleu",
            format!("{} hypotheses for {} references", hyps.len(), refs.len()),
        ));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += sentence_stats(h, r);
    }
    Ok(total.score())
}

/// Paired bootstrap over sentence indices: the fraction of resamples in
/// which system B does not beat system A, ties counting one half. Small
/// values mean B is reliably better.
pub fn bootstrap_significance<T: Eq + Hash>(
    hyps_a: &[Vec<T>],
    hyps_b: &[Vec<T>],
    refs: &[Vec<T>],
    n_resamples: usize,
    seed: u64,
) -> Result<f64> {
    if hyps_a.len() != refs.len() || hyps_b.len() != refs.len() {
        return Err(Error::invalid(
            "bootstrap",
            format!("{} / {} hypotheses for {} references", hyps_a.len(), hyps_b.len(), refs.len()),
        ));
    }
    if refs.is_empty() || n_resamples == 0 {
        return Err(Error::invalid("bootstrap", "need at least one sentence and one resample"));
    }
    let sa: Vec<BleuStats> = hyps_a.iter().zip(refs).map(|(h, r)| sentence_stats(h, r)).collect();
    let sb: Vec<BleuStats> = hyps_b.iter().zip(refs).map(|(h, r)| sentence_stats(h, r)).collect();
    let mut rng = Rng::seed_from_u64(seed);
    let n = refs.len();
    let mut not_better = 0.0;
    for _ in 0..n_resamples {
        let (mut ta, mut tb) = (BleuStats::default(), BleuStats::default());
        for _ in 0..n {
            let i = rng.random_range(0..n);
            ta += sa[i];
            tb += sb[i];
        }
        let (a, b) = (ta.score(), tb.score());
        if a > b {
            not_better += 1.0;
        } else if a == b {
            not_better += 0.5;
        }
    }
    Ok(not_better / n_resamples as f64)
}

/// Model side of a checkpoint, ready for decoding.
pub struct LoadedModel<'a> {
    pub ckpt: &'a Checkpoint,
    pub vocab: Vocabulary,
}

impl<'a> LoadedModel<'a> {
    pub fn new(ckpt: &'a Checkpoint) -> Result<Self> {
        Ok(LoadedModel {
            ckpt,
            vocab: Vocabulary::from_token_list(ckpt.vocab.clone())?,
        })
    }

    /// Sources as the model expects them for `domain` (tagged for the
    /// domain-tag recipe).
    fn sources(&self, corpus: &DomainCorpus, domain: usize) -> Result<Vec<Vec<usize>>> {
        let src = corpus.sources().map(<[usize]>::to_vec);
        if self.ckpt.recipe == Recipe::DomainControl {
            let tag = self
                .vocab
                .tag_id(domain)
                .ok_or_else(|| Error::Missing(format!("no tag token for domain {domain}")))?;
            Ok(src.map(|s| std::iter::once(tag).chain(s).collect()).collect())
        } else {
            Ok(src.collect())
        }
    }

    /// Greedy outputs for `corpus`, treating it as domain `as_domain`: the
    /// tag and the transformation network of that domain are used.
    pub fn translate_as(&self, corpus: &DomainCorpus, as_domain: usize) -> Result<Vec<Vec<usize>>> {
        let src = self.sources(corpus, as_domain)?;
        let dtn = self.ckpt.bank.as_ref().map(|b| (b, as_domain));
        if let Some(b) = &self.ckpt.bank {
            b.check_domain(as_domain)?;
        }
        translate(&self.ckpt.params, &self.ckpt.config.model, &src, dtn)
    }

    pub fn bleu_as(&self, corpus: &DomainCorpus, as_domain: usize) -> Result<f64> {
        let hyps = self.translate_as(corpus, as_domain)?;
        let refs: Vec<Vec<usize>> = corpus.targets().map(<[usize]>::to_vec).collect();
        bleu(&hyps, &refs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub domain: String,
    pub bleu: f64,
    /// Difference to the reference system, if any.
    pub delta: Option<f64>,
    /// Bootstrap p-value that this system beats the reference.
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub checkpoint_hash: String,
    pub seed: u64,
    pub reference: Option<String>,
    pub domains: Vec<DomainScore>,
    pub average: f64,
    pub average_delta: Option<f64>,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Per-domain and average BLEU of `ckpt` on `test`, optionally compared
/// against `reference` with paired bootstrap.
pub fn evaluate(
    system: &str,
    ckpt: &Checkpoint,
    test: &[DomainCorpus],
    reference: Option<(&str, &Checkpoint)>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Missing("no test corpora".into()));
    }
    let m = LoadedModel::new(ckpt)?;
    let r = reference.map(|(_, c)| LoadedModel::new(c)).transpose()?;
    let mut domains = Vec::new();
    for c in test {
        let refs: Vec<Vec<usize>> = c.targets().map(<[usize]>::to_vec).collect();
        let hyps = m.translate_as(c, c.domain)?;
        let b = bleu(&hyps, &refs)?;
        let mut s = DomainScore {
            domain: c.name.clone(),
            bleu: b,
            delta: None,
            p_value: None,
            significant: None,
        };
        if let Some(rm) = &r {
            let rh = rm.translate_as(c, c.domain)?;
            let rb = bleu(&rh, &refs)?;
            let p = bootstrap_significance(&rh, &hyps, &refs, BOOTSTRAP_RESAMPLES, ckpt.config.seed)?;
            s.delta = Some(b - rb);
            s.p_value = Some(p);
            s.significant = Some(p < SIGNIFICANCE_LEVEL);
        }
        domains.push(s);
    }
    let average = domains.iter().map(|d| d.bleu).sum::<f64>() / domains.len() as f64;
    let average_delta = r.as_ref().map(|_| domains.iter().filter_map(|d| d.delta).sum::<f64>() / domains.len() as f64);
    Ok(EvalReport {
        system: system.to_string(),
        checkpoint_hash: ckpt.hash()?,
        seed: ckpt.config.seed,
        reference: reference.map(|(n, _)| n.to_string()),
        domains,
        average,
        average_delta,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid("report", e.to_string()))
    }

    /// One row per system: per-domain BLEU, average, then deltas.
    pub fn write_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        if let Some(first) = reports.first() {
            let mut header = vec!["system".to_string(), "checkpoint_hash".into()];
            header.extend(first.domains.iter().map(|d| d.domain.clone()));
            header.push("avg".into());
            header.extend(first.domains.iter().map(|d| format!("delta_{}", d.domain)));
            header.push("delta_avg".into());
            w.write_record(&header).map_err(|e| csv_err(path, e))?;
        }
        for r in reports {
            let mut row = vec![r.system.clone(), r.checkpoint_hash.clone()];
            row.extend(r.domains.iter().map(|d| format!("{:.2}", d.bleu)));
            row.push(format!("{:.2}", r.average));
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:+.2}"));
            row.extend(r.domains.iter().map(|d| fmt(d.delta)));
            row.push(fmt(r.average_delta));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = format!("{} ({})\n", self.system, &self.checkpoint_hash[..12.min(self.checkpoint_hash.len())]);
        for d in &self.domains {
            s.push_str(&format!("  {:<12} {:>7.2}", d.domain, d.bleu));
            if let (Some(delta), Some(sig)) = (d.delta, d.significant) {
                s.push_str(&format!("  {delta:+7.2}{}", if sig { " *" } else { "" }));
            }
            s.push('\n');
        }
        s.push_str(&format!("  {:<12} {:>7.2}", "avg", self.average));
        if let Some(d) = self.average_delta {
            s.push_str(&format!("  {d:+7.2}"));
        }
        s.push('\n');
        s
    }
}

/// Entry `(i, j)`: BLEU on domain `j`'s test data decoded through domain
/// `i`'s transformation network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainMatrix {
    pub bleu: Vec<Vec<f64>>,
    /// Column `j` is dominant when its diagonal entry beats every other row.
    pub dominant: Vec<bool>,
}

impl CrossDomainMatrix {
    pub fn all_dominant(&self) -> bool {
        self.dominant.iter().all(|&d| d)
    }
}

pub fn cross_domain_matrix(ckpt: &Checkpoint, test: &[DomainCorpus]) -> Result<CrossDomainMatrix> {
    let bank = ckpt
        .bank
        .ok_or_else(|| Error::Missing("checkpoint has no transformation bank".into()))?;
    let n = bank.n_domains;
    if test.len() != n {
        return Err(Error::Missing(format!("{} test corpora for {n} domains", test.len())));
    }
    let m = LoadedModel::new(ckpt)?;
    let mut bleu = vec![vec![0.0; n]; n];
    for (j, c) in test.iter().enumerate() {
        for (i, row) in bleu.iter_mut().enumerate() {
            row[j] = m.bleu_as(c, i)?;
        }
    }
    let dominant = (0..n).map(|j| (0..n).all(|i| i == j || bleu[j][j] > bleu[i][j])).collect();
    Ok(CrossDomainMatrix { bleu, dominant })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    EncoderOut,
    DtnOut,
}

impl std::str::FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder_out" => Ok(Site::EncoderOut),
            "dtn_out" => Ok(Site::DtnOut),
            other => Err(Error::invalid("probe", format!("unknown site `{other}` (encoder_out | dtn_out)"))),
        }
    }
}

/// Per-sentence `[len, d]` representation matrices at `site`; `H'` uses the
/// sentence's own domain network.
fn site_representations(ckpt: &Checkpoint, corpus: &DomainCorpus, site: Site) -> Result<Vec<Vec<f64>>> {
    let cfg = &ckpt.config.model;
    let d = cfg.d_model;
    let bank = match site {
        Site::DtnOut => Some(
            ckpt.bank
                .ok_or_else(|| Error::Missing("site dtn_out needs a transformation bank".into()))?,
        ),
        Site::EncoderOut => None,
    };
    let mut out = Vec::with_capacity(corpus.len());
    let sources: Vec<Vec<usize>> = corpus.sources().map(<[usize]>::to_vec).collect();
    for chunk in sources.chunks(DECODE_CHUNK) {
        let src = Padded::from_rows(chunk, cfg.pad_id)?;
        let mut f = Forward::eval(&ckpt.params);
        let mut h = f.encode(cfg, &src)?;
        if let Some(b) = &bank {
            h = f.dtn_transform(b, cfg, h, &src, corpus.domain)?;
        }
        let v = f.tape.value(h).data();
        for (r, s) in chunk.iter().enumerate() {
            let start = r * src.cols * d;
            out.push(v[start..start + s.len() * d].to_vec());
        }
    }
    Ok(out)
}

pub const PROBE_STEPS: usize = 300;
const PROBE_BATCH: usize = 32;

/// Accuracy of a freshly trained attention-pooled linear domain classifier
/// on frozen representations: trained on `held_in`, scored on `held_out`.
pub fn probe_classifier_accuracy(
    ckpt: &Checkpoint,
    held_in: &[DomainCorpus],
    held_out: &[DomainCorpus],
    site: Site,
    seed: u64,
) -> Result<f64> {
    let n = held_in.len();
    if n != held_out.len() || n == 0 {
        return Err(Error::invalid("probe", "held-in and held-out domain lists differ"));
    }
    if n == 1 {
        return Ok(1.0);
    }
    let d = ckpt.config.model.d_model;
    let collect = |cs: &[DomainCorpus]| -> Result<Vec<(Vec<f64>, usize)>> {
        let mut v = Vec::new();
        for c in cs {
            for r in site_representations(ckpt, c, site)? {
                v.push((r, c.domain));
            }
        }
        Ok(v)
    };
    let train = collect(held_in)?;
    let test = collect(held_out)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("probe", "empty probe data"));
    }
    let mut params = ModelParams::new();
    params.insert("probe.query", Tensor::zeros([d]))?;
    params.insert("probe.w", Tensor::zeros([d, n]))?;
    let optim = OptimConfig {
        warmup_steps: 30,
        ..OptimConfig::default()
    };
    let mut adam = Adam::new();
    let mut rng = Rng::seed_from_u64(seed);
    for step in 1..=PROBE_STEPS {
        let idx: Vec<usize> = (0..PROBE_BATCH).map(|_| rng.random_range(0..train.len())).collect();
        let grads = {
            let mut f = Forward::new(&params, Trainable::Everything);
            let logits = probe_logits(&mut f, &train, &idx, d)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train[i].1).collect();
            let lp = f.tape.log_softmax(logits)?;
            let picked = f.tape.pick(lp, &labels)?;
            let m = f.tape.mean(picked);
            let loss = f.tape.scale(m, -1.0);
            f.backward(loss)?;
            f.grads()
        };
        adam.step(&optim, &mut params, &grads, optim.lr(step as u64))?;
    }
    let mut correct = 0;
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(DECODE_CHUNK) {
        let mut f = Forward::eval(&params);
        let logits = probe_logits(&mut f, &test, chunk, d)?;
        let v = f.tape.value(logits).data();
        for (r, &i) in chunk.iter().enumerate() {
            let row = &v[r * n..(r + 1) * n];
            let best = (0..n).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            correct += usize::from(best == test[i].1);
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

fn probe_logits(f: &mut Forward, data: &[(Vec<f64>, usize)], idx: &[usize], d: usize) -> Result<crate::Var> {
    let width = idx.iter().map(|&i| data[i].0.len() / d).max().unwrap_or(1);
    let mut values = vec![0.0; idx.len() * width * d];
    let mut rows = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        let rep = &data[i].0;
        values[r * width * d..r * width * d + rep.len()].copy_from_slice(rep);
        rows.push(vec![1usize; rep.len() / d]);
    }
    let mask = Padded::from_rows(&rows, 0)?;
    let h = f.tape.constant(Tensor::new([idx.len(), width, d], values)?);
    let q = f.p("probe.query")?;
    let w = f.p("probe.w")?;
    let pooled = f.attention_pool(h, &mask, q)?;
    f.classify_domain(pooled, w)
}

/// Mean-pooled `H` and `H'` for every test sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationRow {
    pub sentence_id: usize,
    pub domain: usize,
    pub site: &'static str,
    pub values: Vec<f64>,
}

pub fn pooled_representations(ckpt: &Checkpoint, test: &[DomainCorpus]) -> Result<Vec<RepresentationRow>> {
    let d = ckpt.config.model.d_model;
    let sites: &[(Site, &'static str)] = if ckpt.bank.is_some() {
        &[(Site::EncoderOut, "H"), (Site::DtnOut, "H'")]
    } else {
        &[(Site::EncoderOut, "H")]
    };
    let mut rows = Vec::new();
    let mut sentence_id = 0;
    for c in test {
        let per_site: Vec<Vec<Vec<f64>>> = sites
            .iter()
            .map(|(s, _)| site_representations(ckpt, c, *s))
            .collect::<Result<_>>()?;
        for k in 0..c.len() {
            for (si, (_, name)) in sites.iter().enumerate() {
                let rep = &per_site[si][k];
                let len = (rep.len() / d) as f64;
                let mean = (0..d).map(|j| rep.iter().skip(j).step_by(d).sum::<f64>() / len).collect();
                rows.push(RepresentationRow {
                    sentence_id,
                    domain: c.domain,
                    site: name,
                    values: mean,
                });
            }
            sentence_id += 1;
        }
    }
    Ok(rows)
}

/// Top-`k` principal axes of the rows of `x` (`n × d`) by power iteration
/// with deflation; returns the projected coordinates `n × k`.
pub fn pca_project(x: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += r[a] * r[b];
            }
        }
    }
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for c in 0..k.min(d) {
        let mut v: Vec<f64> = (0..d).map(|j| if j == c { 1.0 } else { 0.5 / (1 + j) as f64 }).collect();
        for _ in 0..500 {
            let mut w: Vec<f64> = (0..d).map(|a| (0..d).map(|b| cov[a][b] * v[b]).sum()).collect();
            for ax in &axes {
                let p: f64 = w.iter().zip(ax).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(ax).for_each(|(a, b)| *a -= p * b);
            }
            let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v = w.into_iter().map(|a| a / norm).collect();
        }
        axes.push(v);
    }
    centered
        .iter()
        .map(|r| axes.iter().map(|ax| r.iter().zip(ax).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

/// Writes `<out>` with one row per (sentence, site) and the pooled vector,
/// and `<out stem>_pca.csv` with the two leading principal components.
pub fn export_representations(ckpt: &Checkpoint, test: &[DomainCorpus], out: &Path) -> Result<()> {
    let rows = pooled_representations(ckpt, test)?;
    let d = ckpt.config.model.d_model;
    let mut w = csv::Writer::from_path(out).map_err(|e| csv_err(out, e))?;
    let mut header = vec!["sentence_id".to_string(), "domain".into(), "site".into()];
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| csv_err(out, e))?;
    for r in &rows {
        let mut rec = vec![r.sentence_id.to_string(), r.domain.to_string(), r.site.to_string()];
        rec.extend(r.values.iter().map(|v| format!("{v:e}")));
        w.write_record(&rec).map_err(|e| csv_err(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;

    let proj = pca_project(&rows.iter().map(|r| r.values.clone()).collect::<Vec<_>>(), 2);
    let pca_path = out.with_file_name(format!(
        "{}_pca.csv",
        out.file_stem().and_then(|s| s.to_str()).unwrap_or("representations")
    ));
    let mut w = csv::Writer::from_path(&pca_path).map_err(|e| csv_err(&pca_path, e))?;
    w.write_record(["sentence_id", "domain", "site", "pc1", "pc2"])
        .map_err(|e| csv_err(&pca_path, e))?;
    for (r, p) in rows.iter().zip(&proj) {
        let pc = |i: usize| p.get(i).map_or("0".to_string(), |v| format!("{v:e}"));
        w.write_record([r.sentence_id.to_string(), r.domain.to_string(), r.site.to_string(), pc(0), pc(1)])
            .map_err(|e| csv_err(&pca_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&pca_path, e))
}
