//! End-to-end runs on the synthetic task: data preparation, teachers and
//! the ablation ladder.

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{generate_synthetic, DomainCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::pipeline::{finetune_teacher, split_corpora, train_baseline, train_unified, Trainer};
use crate::supervision::TeacherSet;

/// Synthetic corpora for `cfg`, split into train and test.
pub struct SyntheticData {
    pub vocab: Vocabulary,
    pub train: Vec<DomainCorpus>,
    pub test: Vec<DomainCorpus>,
}

pub fn synthetic_data(cfg: &TrainConfig) -> Result<SyntheticData> {
    let corpora = generate_synthetic(cfg.seed, &cfg.data.synthetic)?;
    let (train, test) = split_corpora(&corpora, cfg.data.n_test)?;
    Ok(SyntheticData {
        vocab: cfg.data.synthetic.vocabulary(),
        train,
        test,
    })
}

/// Fine-tunes one teacher per training domain from `base`.
pub fn train_teachers(base: &Checkpoint, train: &[DomainCorpus], cfg: &TrainConfig) -> Result<Vec<Checkpoint>> {
    train
        .iter()
        .map(|c| finetune_teacher(base, c, cfg).map(|t| t.checkpoint().frozen()))
        .collect()
}

pub fn teacher_set(teachers: &[Checkpoint]) -> Result<TeacherSet> {
    let mut set = TeacherSet::new();
    for t in teachers {
        match t.recipe {
            crate::checkpoint::Recipe::Teacher { domain } => set.insert(domain, t.params.clone()),
            other => {
                return Err(Error::invalid("teacher_set", format!("{other:?} checkpoint is not a teacher")));
            }
        }
    }
    Ok(set)
}

/// One unified configuration of the ladder.
#[derive(Clone, Copy, Debug)]
pub struct Rung {
    pub name: &'static str,
    pub dtn: bool,
    pub distill_word: bool,
    pub distill_seq: bool,
    pub discriminate: bool,
}

impl Rung {
    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        c.dtn.enabled = self.dtn;
        c.supervision.distill_word = self.distill_word;
        c.supervision.distill_seq = self.distill_seq;
        c.supervision.discriminate = self.discriminate;
        c
    }

    pub fn needs_teachers(&self) -> bool {
        self.distill_word || self.distill_seq
    }
}

const fn rung(name: &'static str, dtn: bool, word: bool, seq: bool, disc: bool) -> Rung {
    Rung {
        name,
        dtn,
        distill_word: word,
        distill_seq: seq,
        discriminate: disc,
    }
}

pub const DTN_ONLY: Rung = rung("dtn", true, false, false, false);
pub const DTN_DISTILL: Rung = rung("dtn+distill_word", true, true, false, false);
pub const DTN_FULL: Rung = rung("dtn+discriminate+distill_word", true, true, false, true);

/// The cumulative ladder checked by the acceptance suite.
pub const CORE_LADDER: [Rung; 3] = [DTN_ONLY, DTN_DISTILL, DTN_FULL];

/// Every configuration reported by the ablation command, after the
/// baseline row.
pub const FULL_LADDER: [Rung; 7] = [
    rung("distill_seq", false, false, true, false),
    rung("distill_word", false, true, false, false),
    DTN_ONLY,
    rung("dtn+distill_seq", true, false, true, false),
    DTN_DISTILL,
    rung("dtn+discriminate", true, false, false, true),
    DTN_FULL,
];

/// Name of the baseline row.
pub const BASELINE: &str = "baseline";

pub struct LadderRun {
    pub base: Checkpoint,
    /// The baseline continued for as many extra updates as each unified run
    /// receives, so every row has the same total budget.
    pub baseline_equal_budget: Checkpoint,
    pub teachers: Vec<Checkpoint>,
    /// Per rung: its name and frozen checkpoint.
    pub unified: Vec<(&'static str, Checkpoint)>,
    /// Baseline first, then one per rung.
    pub reports: Vec<EvalReport>,
}

impl LadderRun {
    pub fn average(&self, name: &str) -> Option<f64> {
        self.reports.iter().find(|r| r.system == name).map(|r| r.average)
    }

    pub fn unified(&self, name: &str) -> Option<&Checkpoint> {
        self.unified.iter().find(|(n, _)| *n == name).map(|(_, c)| c)
    }
}

/// Trains the baseline, the teachers (when any rung distills) and every rung
/// from the shared baseline, then evaluates all of them on `data.test`.
pub fn run_ladder(cfg: &TrainConfig, data: &SyntheticData, rungs: &[Rung]) -> Result<LadderRun> {
    let base_trainer = train_baseline(cfg, &data.vocab, &data.train)?;
    let base = base_trainer.checkpoint();
    let mut cont = Trainer::resume(&base, &data.train, None)?;
    cont.run(cfg.schedule.baseline_steps + cfg.schedule.unified_steps, None)?;
    let baseline_equal_budget = cont.checkpoint().frozen();
    let mut reports = vec![evaluate(BASELINE, &baseline_equal_budget, &data.test, None)?];

    let teachers = if rungs.iter().any(Rung::needs_teachers) {
        train_teachers(&base, &data.train, cfg)?
    } else {
        Vec::new()
    };
    let set = teacher_set(&teachers)?;
    let mut unified = Vec::new();
    for r in rungs {
        let c = r.apply(cfg);
        let t = r.needs_teachers().then_some(&set);
        let ckpt = train_unified(&base, &data.train, &c, t)?.checkpoint().frozen();
        reports.push(evaluate(r.name, &ckpt, &data.test, Some((BASELINE, &baseline_equal_budget)))?);
        unified.push((r.name, ckpt));
    }
    Ok(LadderRun {
        base: base.frozen(),
        baseline_equal_budget,
        teachers,
        unified,
        reports,
    })
}
