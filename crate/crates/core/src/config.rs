//! Run configuration: TOML files plus dotted-path overrides.
//!
//! Resolution order is defaults, then the file, then `key=value` overrides,
//! the last writer winning.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::dtn::DtnKind;
use crate::error::{Error, Result};
use crate::nmt::ModelConfig;
use crate::optim::OptimConfig;
use crate::supervision::SupervisionConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Padded positions per side of one batch.
    pub batch_tokens: usize,
    /// Balance factor of the domain sampler.
    pub alpha: f64,
    /// Held-out pairs per domain (taken from the end of each corpus).
    pub n_test: usize,
    pub synthetic: SyntheticSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            batch_tokens: 256,
            alpha: 0.7,
            n_test: 200,
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtnConfig {
    /// Without a bank the unified model decodes straight from `H`.
    pub enabled: bool,
    pub kind: DtnKind,
    pub depth: usize,
}

impl Default for DtnConfig {
    fn default() -> Self {
        DtnConfig {
            enabled: true,
            kind: DtnKind::Attention,
            depth: 1,
        }
    }
}

/// Update budgets of the individual recipes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub baseline_steps: u64,
    pub finetune_steps: u64,
    pub unified_steps: u64,
    /// Logged steps are every `log_every`-th update (and the last one).
    pub log_every: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            baseline_steps: 2000,
            finetune_steps: 300,
            unified_steps: 1000,
            log_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub dtn: DtnConfig,
    pub supervision: SupervisionConfig,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            data: DataConfig::default(),
            dtn: DtnConfig::default(),
            supervision: SupervisionConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.model.problems();
        p.extend(self.optim.problems());
        p.extend(self.supervision.problems());
        p.extend(self.data.synthetic.problems());
        if self.data.batch_tokens == 0 {
            p.push("data.batch_tokens must be positive".into());
        }
        if !(self.data.alpha >= 0.0 && self.data.alpha.is_finite()) {
            p.push(format!("data.alpha must be >= 0, got {}", self.data.alpha));
        }
        if self.dtn.depth == 0 {
            p.push("dtn.depth must be positive".into());
        }
        if self.schedule.log_every == 0 {
            p.push("schedule.log_every must be positive".into());
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

    /// Fills zero vocabulary sizes with `vocab_len`.
    pub fn with_vocab(mut self, vocab_len: usize) -> Self {
        if self.model.vocab_size_src == 0 {
            self.model.vocab_size_src = vocab_len;
        }
        if self.model.vocab_size_tgt == 0 {
            self.model.vocab_size_tgt = vocab_len;
        }
        self
    }

    /// Resolves defaults < `file` < `overrides`, fills vocabulary sizes from
    /// the synthetic data description when left at zero, and validates.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(TrainConfig::default())
            .map_err(|e| Error::Config(vec![e.to_string()]))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let from_file: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
                path: path.to_path_buf(),
                line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
                msg: e.message().to_string(),
            })?;
            merge(&mut table, from_file);
        }
        let mut problems = Vec::new();
        for o in overrides {
            if let Err(msg) = apply_override(&mut table, o) {
                problems.push(msg);
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let cfg: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let vocab = cfg.data.synthetic.vocabulary().len();
        let cfg = cfg.with_vocab(vocab);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }
}

fn merge(base: &mut toml::Table, other: toml::Table) {
    for (k, v) in other {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `a.b.c=value`; the value is read as a TOML literal when it parses as
/// one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> std::result::Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key `{key}` is malformed"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = match cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(t) => t,
            _ => return Err(format!("override key `{key}`: `{part}` is not a section")),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
