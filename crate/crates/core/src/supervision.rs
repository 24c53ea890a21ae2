//! Domain distillation, domain classifiers and the alternating objective.
//!
//! Two classifiers read attention-pooled sentence vectors. The adversarial
//! one (`cls.adv.*`, ψ) sits on the shared encoder output `H`; the specific
//! one (`cls.spec.*`, γ) sits on the transformed `H'`. Training alternates
//! between phase A, which updates the translation model, the DTN bank and γ
//! while pushing ψ's predictions towards maximum entropy, and phase B, which
//! updates ψ alone to recognise the domain from `H`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, DomainCorpus};
use crate::decode::translate;
use crate::dtn::DtnBank;
use crate::error::{Error, Result};
use crate::forward::{Forward, Trainable};
use crate::nmt::{nll_loss, ModelConfig, Padded};
use crate::optim::{Adam, OptimConfig};
use crate::params::ModelParams;
use crate::tensor::{Tensor, Var};
use crate::Rng;

pub const ADV_PREFIX: &str = "cls.adv.";
pub const SPEC_PREFIX: &str = "cls.spec.";

const POOL_MASK_VALUE: f64 = -1e9;

pub fn is_adv_param(name: &str) -> bool {
    name.starts_with(ADV_PREFIX)
}

pub fn is_spec_param(name: &str) -> bool {
    name.starts_with(SPEC_PREFIX)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisionConfig {
    pub distill_word: bool,
    pub distill_seq: bool,
    pub discriminate: bool,
    /// Weight of the teacher's soft targets.
    pub lambda: f64,
    /// Weight of the adversarial entropy term.
    pub delta: f64,
    /// Weight of the specific-classifier loss in phase A.
    pub specific_weight: f64,
    /// Phase B updates per phase A update.
    pub b_steps_per_a: usize,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        SupervisionConfig {
            distill_word: false,
            distill_seq: false,
            discriminate: false,
            lambda: 0.1,
            delta: 0.1,
            specific_weight: 1.0,
            b_steps_per_a: 1,
        }
    }
}

impl SupervisionConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(0.0..=1.0).contains(&self.lambda) {
            p.push(format!("supervision.lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            p.push(format!("supervision.delta must be >= 0, got {}", self.delta));
        }
        if !(self.specific_weight >= 0.0 && self.specific_weight.is_finite()) {
            p.push(format!(
                "supervision.specific_weight must be >= 0, got {}",
                self.specific_weight
            ));
        }
        p
    }

    pub fn needs_teachers(&self) -> bool {
        self.distill_word || self.distill_seq
    }
}

/// Layout of the two domain classifiers; tensors live in [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub d_model: usize,
    pub n_domains: usize,
}

impl ClassifierParams {
    /// Zero-initialised pooling queries (uniform pooling) and weights
    /// (uniform predictions) for both classifiers.
    pub fn init(d_model: usize, n_domains: usize) -> Result<(Self, ModelParams)> {
        if n_domains < 1 {
            return Err(Error::invalid("classifiers", "need at least one domain"));
        }
        let mut p = ModelParams::new();
        for prefix in [ADV_PREFIX, SPEC_PREFIX] {
            p.insert(format!("{prefix}query"), Tensor::zeros([d_model]))?;
            p.insert(format!("{prefix}w"), Tensor::zeros([d_model, n_domains]))?;
        }
        Ok((ClassifierParams { d_model, n_domains }, p))
    }
}

/// Frozen fine-tuned models, one per domain.
#[derive(Clone, Debug, Default)]
pub struct TeacherSet {
    teachers: BTreeMap<usize, ModelParams>,
}

impl TeacherSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, domain: usize, params: ModelParams) {
        self.teachers.insert(domain, params);
    }

    pub fn get(&self, domain: usize) -> Result<&ModelParams> {
        self.teachers
            .get(&domain)
            .ok_or_else(|| Error::Missing(format!("no teacher for domain {domain}")))
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    pub fn domains(&self) -> impl Iterator<Item = usize> + '_ {
        self.teachers.keys().copied()
    }

    /// Content hash of every teacher, keyed by domain.
    pub fn hashes(&self) -> BTreeMap<usize, String> {
        self.teachers.iter().map(|(&d, p)| (d, p.content_hash())).collect()
    }

    /// Next-token logits of the batch's domain teacher on the gold prefix;
    /// no dropout, no gradient.
    pub fn logits(&self, cfg: &ModelConfig, batch: &Batch) -> Result<Tensor> {
        let mut f = Forward::eval(self.get(batch.domain)?);
        let h = f.encode(cfg, &batch.src)?;
        let out = f.decode_logits(cfg, h, &batch.src, &batch.tgt_in)?;
        Ok(f.tape.value(out).clone())
    }
}

/// Shannon entropy (natural log) of a probability vector, `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid("entropy", format!("entry {v} is negative or NaN")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("entropy", format!("entries sum to {s}, not 1")));
    }
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>())
}

fn softmax_rows(logits: &[f64], v: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (x, y) in logits.chunks(v).zip(out.chunks_mut(v)) {
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = (xi - m).exp();
            z += *yi;
        }
        y.iter_mut().for_each(|t| *t /= z);
    }
    out
}

/// Word-level distillation: cross-entropy of the student against
/// `(1-λ)·onehot(gold) + λ·softmax(teacher)`, averaged over unmasked target
/// positions. λ = 0 reproduces [`nll_loss`] exactly.
pub fn kd_word_loss(fwd: &mut Forward, student_logits: Var, teacher_logits: &Tensor, tgt_out: &Padded, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("kd_word_loss", format!("lambda {lambda} outside [0, 1]")));
    }
    let shape = fwd.tape.shape(student_logits).to_vec();
    if shape.as_slice() != teacher_logits.shape() {
        return Err(Error::Shape {
            op: "kd_word_loss",
            lhs: shape,
            rhs: teacher_logits.shape().to_vec(),
        });
    }
    let v = *shape.last().unwrap_or(&1);
    if tgt_out.ids.len() * v != teacher_logits.len() {
        return Err(Error::invalid("kd_word_loss", "targets do not match logits"));
    }
    let count = tgt_out.real_tokens();
    if count == 0 {
        return Err(Error::invalid("kd_word_loss", "every target position is masked"));
    }
    let teacher = softmax_rows(teacher_logits.data(), v);
    let inv = 1.0 / count as f64;
    let mut w = vec![0.0; teacher.len()];
    for (pos, (&gold, &real)) in tgt_out.ids.iter().zip(&tgt_out.mask).enumerate() {
        if !real {
            continue;
        }
        let row = &teacher[pos * v..(pos + 1) * v];
        for k in 0..v {
            let t = if k == gold {
                1.0 - lambda * (1.0 - row[k])
            } else {
                lambda * row[k]
            };
            w[pos * v + k] = t * inv;
        }
    }
    let lp = fwd.tape.log_softmax(student_logits)?;
    let weighted = fwd.tape.mul_const(lp, w)?;
    let s = fwd.tape.sum(weighted);
    Ok(fwd.tape.scale(s, -1.0))
}

/// Replaces each gold target with the teacher's greedy translation. Pairs
/// for which the teacher produces nothing keep their gold target; their
/// count is returned alongside.
pub fn kd_sequence_targets(teacher: &ModelParams, cfg: &ModelConfig, corpus: &DomainCorpus) -> Result<(DomainCorpus, usize)> {
    let sources: Vec<Vec<usize>> = corpus.sources().map(<[usize]>::to_vec).collect();
    let hyps = translate(teacher, cfg, &sources, None)?;
    let mut kept_gold = 0;
    let pairs = corpus
        .pairs
        .iter()
        .zip(hyps)
        .map(|((s, t), h)| {
            if h.is_empty() {
                kept_gold += 1;
                (s.clone(), t.clone())
            } else {
                (s.clone(), h)
            }
        })
        .collect();
    if kept_gold > 0 {
        log::warn!(
            "teacher produced {kept_gold} empty outputs on domain {}; gold targets kept",
            corpus.name
        );
    }
    Ok((DomainCorpus::new(corpus.domain, corpus.name.clone(), pairs), kept_gold))
}

fn batch_size(fwd: &Forward, h: Var) -> Result<(usize, usize, usize)> {
    match *fwd.tape.shape(h) {
        [b, i, d] => Ok((b, i, d)),
        ref s => Err(Error::invalid("attention_pool", format!("expected rank-3 input, got {s:?}"))),
    }
}

impl Forward<'_> {
    /// `Σ_i α_i H_i` with `α = softmax((H_i · q) / sqrt(d))` over the
    /// unmasked positions of each row: `[B, I, d] -> [B, d]`.
    pub fn attention_pool(&mut self, h: Var, src: &Padded, query: Var) -> Result<Var> {
        let (b, i, d) = batch_size(self, h)?;
        if self.tape.shape(query) != [d] {
            return Err(Error::Shape {
                op: "attention_pool",
                lhs: vec![b, i, d],
                rhs: self.tape.shape(query).to_vec(),
            });
        }
        if src.rows != b || src.cols != i {
            return Err(Error::invalid(
                "attention_pool",
                format!("mask {}x{} does not match {b}x{i}", src.rows, src.cols),
            ));
        }
        if let Some(r) = (0..b).find(|&r| src.mask[r * i..(r + 1) * i].iter().all(|m| !m)) {
            return Err(Error::invalid("attention_pool", format!("row {r} is fully masked")));
        }
        let q = self.tape.reshape(query, &[d, 1])?;
        let scores = self.tape.matmul(h, q)?;
        let scores = self.tape.reshape(scores, &[b, i])?;
        let scores = self.tape.scale(scores, 1.0 / (d as f64).sqrt());
        let blocked = src.mask.iter().map(|m| !m).collect();
        let scores = self.tape.masked_fill(scores, blocked, POOL_MASK_VALUE)?;
        let alpha = self.tape.softmax(scores)?;
        let alpha = self.tape.reshape(alpha, &[b, 1, i])?;
        let pooled = self.tape.bmm(alpha, h)?;
        self.tape.reshape(pooled, &[b, d])
    }

    /// Domain logits `pooled · W`, shaped `[B, N]`.
    pub fn classify_domain(&mut self, pooled: Var, weights: Var) -> Result<Var> {
        self.tape.matmul(pooled, weights)
    }

    /// Pools `h` with classifier `prefix`'s query and returns its logits.
    pub fn domain_logits(&mut self, h: Var, src: &Padded, prefix: &str) -> Result<Var> {
        let q = self.p(&format!("{prefix}query"))?;
        let w = self.p(&format!("{prefix}w"))?;
        let pooled = self.attention_pool(h, src, q)?;
        self.classify_domain(pooled, w)
    }

    /// Mean negative log-probability of `label` over the rows of `logits`.
    pub fn domain_nll(&mut self, logits: Var, label: usize) -> Result<Var> {
        let rows = self.tape.shape(logits)[0];
        let lp = self.tape.log_softmax(logits)?;
        let picked = self.tape.pick(lp, &vec![label; rows])?;
        let m = self.tape.mean(picked);
        Ok(self.tape.scale(m, -1.0))
    }

    /// Mean entropy of the row distributions `softmax(logits)`.
    pub fn mean_entropy(&mut self, logits: Var) -> Result<Var> {
        let rows = self.tape.shape(logits)[0];
        let p = self.tape.softmax(logits)?;
        let lp = self.tape.log_softmax(logits)?;
        let plp = self.tape.mul(p, lp)?;
        let s = self.tape.sum(plp);
        Ok(self.tape.scale(s, -1.0 / rows as f64))
    }
}

/// What the unified model consists of for one objective evaluation.
#[derive(Clone, Copy)]
pub struct Unified<'a> {
    pub cfg: &'a ModelConfig,
    /// `None` decodes straight from `H`.
    pub bank: Option<&'a DtnBank>,
    pub sup: &'a SupervisionConfig,
}

/// Loss components recorded on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub nll_or_kd: Var,
    pub specific_cls: Option<Var>,
    pub adv_entropy: Option<Var>,
    pub adv_cls: Option<Var>,
    /// Phase A objective: likelihood term plus the weighted specific loss
    /// and the adversarial entropy term, both scaled to per-token units.
    pub phase_a: Var,
}

/// Scalar values of the loss components; absent components are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub nll_or_kd: Option<f64>,
    pub specific_cls: Option<f64>,
    pub adv_entropy: Option<f64>,
    pub adv_cls: Option<f64>,
    pub total: f64,
}

impl LossVars {
    pub fn report(&self, fwd: &Forward) -> LossReport {
        let val = |v: Var| fwd.tape.value(v).item();
        LossReport {
            nll_or_kd: Some(val(self.nll_or_kd)),
            specific_cls: self.specific_cls.map(val),
            adv_entropy: self.adv_entropy.map(val),
            adv_cls: self.adv_cls.map(val),
            total: val(self.phase_a),
        }
    }
}

/// All loss components for `batch`. `teacher_logits` is required when word
/// distillation is on.
pub fn unified_objective(fwd: &mut Forward, model: &Unified, batch: &Batch, teacher_logits: Option<&Tensor>) -> Result<LossVars> {
    let cfg = model.cfg;
    let sup = model.sup;
    let h = fwd.encode(cfg, &batch.src)?;
    let h2 = match model.bank {
        Some(bank) => fwd.dtn_transform(bank, cfg, h, &batch.src, batch.domain)?,
        None => h,
    };
    let logits = fwd.decode_logits(cfg, h2, &batch.src, &batch.tgt_in)?;
    let nll_or_kd = if sup.distill_word {
        let t = teacher_logits.ok_or_else(|| {
            Error::Missing(format!(
                "word-level distillation needs teacher logits for domain {}",
                batch.domain
            ))
        })?;
        kd_word_loss(fwd, logits, t, &batch.tgt_out, sup.lambda)?
    } else {
        nll_loss(fwd, logits, &batch.tgt_out)?
    };
    if !sup.discriminate {
        return Ok(LossVars {
            nll_or_kd,
            specific_cls: None,
            adv_entropy: None,
            adv_cls: None,
            phase_a: nll_or_kd,
        });
    }
    let spec_logits = fwd.domain_logits(h2, &batch.src, SPEC_PREFIX)?;
    let specific_cls = fwd.domain_nll(spec_logits, batch.domain)?;
    let adv_logits = fwd.domain_logits(h, &batch.src, ADV_PREFIX)?;
    let ent = fwd.mean_entropy(adv_logits)?;
    let adv_entropy = fwd.tape.scale(ent, -sup.delta);
    let adv_cls = fwd.domain_nll(adv_logits, batch.domain)?;
    // The likelihood is a per-token mean and the classifier terms are
    // per-sentence means; rescaling the latter by sentences / tokens keeps
    // their weight what it would be in a sentence-summed objective.
    let per_token = batch.len() as f64 / batch.tgt_out.real_tokens() as f64;
    let ws = fwd.tape.scale(specific_cls, sup.specific_weight * per_token);
    let total = fwd.tape.add(nll_or_kd, ws)?;
    let we = fwd.tape.scale(adv_entropy, per_token);
    let phase_a = fwd.tape.add(total, we)?;
    Ok(LossVars {
        nll_or_kd,
        specific_cls: Some(specific_cls),
        adv_entropy: Some(adv_entropy),
        adv_cls: Some(adv_cls),
        phase_a,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Translation model, DTN bank and specific classifier.
    A,
    /// Adversarial classifier only.
    B,
}

impl Phase {
    pub fn from_index(i: usize) -> Result<Phase> {
        match i {
            0 => Ok(Phase::A),
            1 => Ok(Phase::B),
            _ => Err(Error::invalid("two_phase_step", format!("phase index {i} is not 0 or 1"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::A => "A",
            Phase::B => "B",
        }
    }
}

/// Optimizer, its settings and the learning rate for one update.
pub struct StepCtx<'a> {
    pub adam: &'a mut Adam,
    pub optim: &'a OptimConfig,
    pub lr: f64,
    pub dropout: Option<(f64, &'a mut Rng)>,
}

/// One update of the given phase on `batch`. Phase A never touches
/// `cls.adv.*`; phase B touches nothing else.
pub fn two_phase_step(
    phase: Phase,
    params: &mut ModelParams,
    ctx: StepCtx,
    model: &Unified,
    batch: &Batch,
    teacher_logits: Option<&Tensor>,
) -> Result<LossReport> {
    let (report, grads) = {
        let not_adv = |n: &str| !is_adv_param(n);
        let trainable = match phase {
            Phase::A => Trainable::Only(&not_adv),
            Phase::B => Trainable::Only(&is_adv_param),
        };
        let mut f = Forward::new(params, trainable);
        if let Some((rate, rng)) = ctx.dropout {
            f = f.with_dropout(rate, rng);
        }
        let report = match phase {
            Phase::A => {
                let l = unified_objective(&mut f, model, batch, teacher_logits)?;
                let r = l.report(&f);
                if r.total.is_finite() {
                    f.backward(l.phase_a)?;
                }
                r
            }
            Phase::B => {
                if !model.sup.discriminate {
                    return Err(Error::invalid("two_phase_step", "phase B needs discrimination enabled"));
                }
                let h = f.encode(model.cfg, &batch.src)?;
                let logits = f.domain_logits(h, &batch.src, ADV_PREFIX)?;
                let adv = f.domain_nll(logits, batch.domain)?;
                let v = f.tape.value(adv).item();
                if v.is_finite() {
                    f.backward(adv)?;
                }
                LossReport {
                    adv_cls: Some(v),
                    total: v,
                    ..LossReport::default()
                }
            }
        };
        (report, f.grads())
    };
    if report.total.is_finite() {
        ctx.adam.step(ctx.optim, params, &grads, ctx.lr)?;
    }
    Ok(report)
}
