//! Training recipes: mixed baseline, per-domain fine-tuned teachers, the
//! domain-tag baseline and the unified model with transformation networks.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Recipe};
use crate::config::TrainConfig;
use crate::data::{make_batches, Batch, DomainCorpus, SamplerState, Vocabulary};
use crate::dtn::DtnBank;
use crate::error::{Error, Result};
use crate::nmt::{init_params, is_seq2seq_param};
use crate::optim::Adam;
use crate::params::ModelParams;
use crate::supervision::{kd_sequence_targets, two_phase_step, ClassifierParams, LossReport, Phase, StepCtx, SupervisionConfig, TeacherSet, Unified};
use crate::tensor::Tensor;
use crate::Rng;

/// RNG streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_SAMPLER: u64 = 3;
const STREAM_COMPONENTS: u64 = 4;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Position in a per-domain reshuffled pass over the batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed phase A updates.
    pub step: u64,
    /// Completed phase B updates.
    pub b_steps: u64,
    pub adam: Adam,
    pub sampler: SamplerState,
    pub rng: Rng,
    pub cursors: Vec<Cursor>,
    /// Exponential moving average of the phase A objective.
    pub loss_ema: Option<f64>,
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub phase: String,
    pub domain: usize,
    pub nll_or_kd: Option<f64>,
    pub specific_cls: Option<f64>,
    pub adv_entropy: Option<f64>,
    pub adv_cls: Option<f64>,
}

impl LogRow {
    fn new(step: u64, phase: Phase, domain: usize, r: &LossReport) -> Self {
        LogRow {
            step,
            phase: phase.name().to_string(),
            domain,
            nll_or_kd: r.nll_or_kd,
            specific_cls: r.specific_cls,
            adv_entropy: r.adv_entropy,
            adv_cls: r.adv_cls,
        }
    }
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Holds out the last `n_test` pairs of every corpus.
pub fn split_corpora(corpora: &[DomainCorpus], n_test: usize) -> Result<(Vec<DomainCorpus>, Vec<DomainCorpus>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in corpora {
        let (a, b) = c.split(n_test)?;
        train.push(a);
        test.push(b);
    }
    Ok((train, test))
}

/// Sources prefixed with their domain tag.
pub fn tag_corpora(vocab: &Vocabulary, corpora: &[DomainCorpus]) -> Result<Vec<DomainCorpus>> {
    corpora
        .iter()
        .map(|c| {
            let tag = vocab
                .tag_id(c.domain)
                .ok_or_else(|| Error::Missing(format!("vocabulary has no tag token for domain {}", c.domain)))?;
            Ok(c.with_source_tag(tag))
        })
        .collect()
}

/// A run in progress.
pub struct Trainer {
    pub recipe: Recipe,
    pub cfg: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub bank: Option<DtnBank>,
    pub classifiers: Option<ClassifierParams>,
    pub state: TrainState,
    pub log: Vec<LogRow>,
    batches: Vec<Vec<Batch>>,
    teacher_cache: HashMap<(usize, usize), Tensor>,
}

impl Trainer {
    fn supervision(&self) -> SupervisionConfig {
        match self.recipe {
            Recipe::Unified => self.cfg.supervision.clone(),
            _ => SupervisionConfig {
                distill_word: false,
                distill_seq: false,
                discriminate: false,
                ..self.cfg.supervision.clone()
            },
        }
    }

    fn prepare(
        recipe: Recipe,
        cfg: &TrainConfig,
        vocab: &Vocabulary,
        train: &[DomainCorpus],
        teachers: Option<&TeacherSet>,
    ) -> Result<Vec<Vec<Batch>>> {
        for (i, c) in train.iter().enumerate() {
            if c.domain != i {
                return Err(Error::invalid("train", format!("corpus {i} carries domain index {}", c.domain)));
            }
        }
        let corpora: Vec<DomainCorpus> = match recipe {
            Recipe::DomainControl => tag_corpora(vocab, train)?,
            Recipe::Unified if cfg.supervision.distill_seq => {
                let t = teachers.ok_or_else(|| Error::Missing("sequence distillation needs teachers".into()))?;
                train
                    .iter()
                    .map(|c| kd_sequence_targets(t.get(c.domain)?, &cfg.model, c).map(|(c, _)| c))
                    .collect::<Result<_>>()?
            }
            _ => train.to_vec(),
        };
        corpora
            .iter()
            .map(|c| match recipe {
                Recipe::Teacher { domain } if c.domain != domain => Ok(Vec::new()),
                _ => make_batches(c, cfg.data.batch_tokens),
            })
            .collect()
    }

    fn fresh(
        recipe: Recipe,
        cfg: TrainConfig,
        vocab: Vocabulary,
        params: ModelParams,
        bank: Option<DtnBank>,
        classifiers: Option<ClassifierParams>,
        train: &[DomainCorpus],
        teachers: Option<&TeacherSet>,
    ) -> Result<Self> {
        cfg.validate()?;
        let batches = Self::prepare(recipe, &cfg, &vocab, train, teachers)?;
        let counts: Vec<f64> = batches.iter().map(|b| b.len() as f64).collect();
        if counts.iter().all(|&c| c == 0.0) {
            return Err(Error::invalid("train", "no training batches"));
        }
        let alpha = if recipe == Recipe::Unified { cfg.data.alpha } else { 1.0 };
        let sampler_seed = rand::RngCore::next_u64(&mut stream_rng(cfg.seed, STREAM_SAMPLER));
        let mut rng = stream_rng(cfg.seed, STREAM_TRAIN);
        let cursors = batches
            .iter()
            .map(|b| {
                let mut order: Vec<usize> = (0..b.len()).collect();
                order.shuffle(&mut rng);
                Cursor { order, pos: 0 }
            })
            .collect();
        let state = TrainState {
            step: 0,
            b_steps: 0,
            adam: Adam::new(),
            sampler: SamplerState::new(counts, alpha, sampler_seed)?,
            rng,
            cursors,
            loss_ema: None,
        };
        Ok(Trainer {
            recipe,
            cfg,
            vocab,
            params,
            bank,
            classifiers,
            state,
            log: Vec::new(),
            batches,
            teacher_cache: HashMap::new(),
        })
    }

    /// Continues the run stored in `ckpt` on the same training data.
    pub fn resume(ckpt: &Checkpoint, train: &[DomainCorpus], teachers: Option<&TeacherSet>) -> Result<Self> {
        let state = ckpt
            .state
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint holds no training state".into()))?;
        let vocab = Vocabulary::from_token_list(ckpt.vocab.clone())?;
        let batches = Self::prepare(ckpt.recipe, &ckpt.config, &vocab, train, teachers)?;
        if batches.iter().map(Vec::len).collect::<Vec<_>>() != state.cursors.iter().map(|c| c.order.len()).collect::<Vec<_>>() {
            return Err(Error::Checkpoint("training data differs from the checkpointed run".into()));
        }
        Ok(Trainer {
            recipe: ckpt.recipe,
            cfg: ckpt.config.clone(),
            vocab,
            params: ckpt.params.clone(),
            bank: ckpt.bank,
            classifiers: ckpt.classifiers,
            state,
            log: Vec::new(),
            batches,
            teacher_cache: HashMap::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            recipe: self.recipe,
            config: self.cfg.clone(),
            vocab: self.vocab.tokens().to_vec(),
            bank: self.bank,
            classifiers: self.classifiers,
            params: self.params.clone(),
            state: Some(self.state.clone()),
        }
    }

    pub fn batches(&self) -> &[Vec<Batch>] {
        &self.batches
    }

    fn next_batch(&mut self, domain: usize) -> usize {
        let c = &mut self.state.cursors[domain];
        if c.pos == c.order.len() {
            c.order.shuffle(&mut self.state.rng);
            c.pos = 0;
        }
        c.pos += 1;
        c.order[c.pos - 1]
    }

    /// Trains until `until` phase A updates have been made.
    pub fn run(&mut self, until: u64, teachers: Option<&TeacherSet>) -> Result<()> {
        let sup = self.supervision();
        if sup.distill_word && teachers.is_none() {
            return Err(Error::Missing("word-level distillation needs teachers".into()));
        }
        while self.state.step < until {
            let step = self.state.step + 1;
            let domain = self.state.sampler.sample();
            let bi = self.next_batch(domain);
            if sup.distill_word && !self.teacher_cache.contains_key(&(domain, bi)) {
                let t = teachers.expect("checked above");
                let logits = t.logits(&self.cfg.model, &self.batches[domain][bi])?;
                self.teacher_cache.insert((domain, bi), logits);
            }
            let lr = self.cfg.optim.lr(step);
            let log_this = step % self.cfg.schedule.log_every == 0 || step == until;
            let batch = &self.batches[domain][bi];
            let model = Unified {
                cfg: &self.cfg.model,
                bank: self.bank.as_ref(),
                sup: &sup,
            };
            let ctx = StepCtx {
                adam: &mut self.state.adam,
                optim: &self.cfg.optim,
                lr,
                dropout: Some((self.cfg.model.dropout_rate, &mut self.state.rng)),
            };
            let r = two_phase_step(Phase::A, &mut self.params, ctx, &model, batch, self.teacher_cache.get(&(domain, bi)))?;
            if !r.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    what: "phase A loss".into(),
                });
            }
            self.state.loss_ema = Some(match self.state.loss_ema {
                Some(e) => 0.98 * e + 0.02 * r.total,
                None => r.total,
            });
            if log_this {
                self.log.push(LogRow::new(step, Phase::A, domain, &r));
            }
            if sup.discriminate {
                for _ in 0..sup.b_steps_per_a {
                    let ctx = StepCtx {
                        adam: &mut self.state.adam,
                        optim: &self.cfg.optim,
                        lr,
                        dropout: Some((self.cfg.model.dropout_rate, &mut self.state.rng)),
                    };
                    let r = two_phase_step(Phase::B, &mut self.params, ctx, &model, batch, None)?;
                    if !r.total.is_finite() {
                        return Err(Error::Diverged {
                            step,
                            what: "phase B loss".into(),
                        });
                    }
                    self.state.b_steps += 1;
                    if log_this {
                        self.log.push(LogRow::new(step, Phase::B, domain, &r));
                    }
                }
            }
            self.state.step = step;
        }
        Ok(())
    }
}

fn check_domains(train: &[DomainCorpus]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::invalid("train", "need at least one domain corpus"));
    }
    Ok(())
}

/// Mixed-domain training of a plain encoder-decoder.
pub fn train_baseline(cfg: &TrainConfig, vocab: &Vocabulary, train: &[DomainCorpus]) -> Result<Trainer> {
    check_domains(train)?;
    let params = init_params(&cfg.model, &mut stream_rng(cfg.seed, STREAM_INIT))?;
    let mut t = Trainer::fresh(Recipe::Baseline, cfg.clone(), vocab.clone(), params, None, None, train, None)?;
    t.run(cfg.schedule.baseline_steps, None)?;
    Ok(t)
}

/// Continues `base` on `corpus` alone with a fresh optimizer.
pub fn finetune_teacher(base: &Checkpoint, corpus: &DomainCorpus, cfg: &TrainConfig) -> Result<Trainer> {
    if corpus.is_empty() {
        return Err(Error::invalid("finetune_teacher", format!("domain {} corpus is empty", corpus.name)));
    }
    let params = base.params.filtered(is_seq2seq_param);
    let vocab = Vocabulary::from_token_list(base.vocab.clone())?;
    let mut train: Vec<DomainCorpus> = (0..corpus.domain)
        .map(|d| DomainCorpus::new(d, format!("unused{d}"), Vec::new()))
        .collect();
    train.push(corpus.clone());
    let recipe = Recipe::Teacher { domain: corpus.domain };
    let mut t = Trainer::fresh(recipe, cfg.clone(), vocab, params, None, None, &train, None)?;
    t.run(cfg.schedule.finetune_steps, None)?;
    Ok(t)
}

/// Mixed-domain training with the domain tag prepended to every source.
pub fn train_domain_control(cfg: &TrainConfig, vocab: &Vocabulary, train: &[DomainCorpus]) -> Result<Trainer> {
    check_domains(train)?;
    let params = init_params(&cfg.model, &mut stream_rng(cfg.seed, STREAM_INIT))?;
    let mut t = Trainer::fresh(Recipe::DomainControl, cfg.clone(), vocab.clone(), params, None, None, train, None)?;
    t.run(cfg.schedule.baseline_steps, None)?;
    Ok(t)
}

/// The unified model: encoder and decoder from `base`, a fresh (identity)
/// transformation bank and classifiers, trained with the configured
/// supervision on domain-sampled batches.
pub fn train_unified(base: &Checkpoint, train: &[DomainCorpus], cfg: &TrainConfig, teachers: Option<&TeacherSet>) -> Result<Trainer> {
    check_domains(train)?;
    let n = train.len();
    if let Some(b) = base.bank {
        if b.n_domains != n {
            return Err(Error::invalid(
                "train_unified",
                format!("base bank has {} domains, data has {n}", b.n_domains),
            ));
        }
    }
    if cfg.supervision.needs_teachers() {
        let t = teachers.ok_or_else(|| Error::Missing("distillation is enabled but no teachers were given".into()))?;
        for d in 0..n {
            t.get(d)?;
        }
    }
    let mut params = base.params.filtered(is_seq2seq_param);
    let mut rng = stream_rng(cfg.seed, STREAM_COMPONENTS);
    let bank = if cfg.dtn.enabled {
        let (bank, p) = DtnBank::init(&cfg.model, n, cfg.dtn.kind, cfg.dtn.depth, &mut rng)?;
        params.merge(p)?;
        Some(bank)
    } else {
        None
    };
    let (cls, p) = ClassifierParams::init(cfg.model.d_model, n)?;
    params.merge(p)?;
    let vocab = Vocabulary::from_token_list(base.vocab.clone())?;
    let mut t = Trainer::fresh(Recipe::Unified, cfg.clone(), vocab, params, bank, Some(cls), train, teachers)?;
    t.run(cfg.schedule.unified_steps, teachers)?;
    Ok(t)
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
