use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dtn_core::checkpoint::{file_hash, Checkpoint};
use dtn_core::config::TrainConfig;
use dtn_core::data::{generate_synthetic, load_dataset, save_dataset, DomainCorpus, Vocabulary};
use dtn_core::evaluation::{cross_domain_matrix, evaluate, export_representations, probe_classifier_accuracy, EvalReport, Site};
use dtn_core::experiment::{run_ladder, teacher_set, SyntheticData, FULL_LADDER};
use dtn_core::pipeline::{finetune_teacher, split_corpora, train_baseline, train_domain_control, train_unified, write_log_csv, write_text, Trainer};

#[derive(Parser)]
#[command(name = "dtn", version, about = "Multi-domain transduction with domain transformation networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `supervision.lambda=0.2`; repeatable, last wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct Trained {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-domain corpora.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the mixed-domain baseline.
    TrainBaseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Fine-tune one teacher per domain from a baseline checkpoint.
    FinetuneTeachers {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        base: PathBuf,
        /// Only this domain index.
        #[arg(long)]
        domain: Option<usize>,
    },
    /// Train the domain-tag baseline.
    TrainDomainControl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the unified model from a baseline checkpoint.
    TrainUnified {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        base: PathBuf,
        /// Directory holding `teacher_<d>.ckpt` files.
        #[arg(long)]
        teachers: Option<PathBuf>,
    },
    /// Per-domain BLEU, optionally against a reference checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        trained: Trained,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// System name used in the report.
        #[arg(long, default_value = "system")]
        name: String,
    },
    /// BLEU of every domain decoded through every transformation network.
    CrossMatrix {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        trained: Trained,
    },
    /// Domain-probe accuracy on frozen representations.
    Probe {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        trained: Trained,
        /// encoder_out or dtn_out.
        #[arg(long, default_value = "encoder_out")]
        site: String,
    },
    /// Pooled encoder and transformed representations plus a 2-D projection.
    ExportReprs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        trained: Trained,
    },
    /// Baseline and every unified configuration, one CSV row each.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::TrainBaseline { common, .. }
            | Command::FinetuneTeachers { common, .. }
            | Command::TrainDomainControl { common, .. }
            | Command::TrainUnified { common, .. }
            | Command::Evaluate { common, .. }
            | Command::CrossMatrix { common, .. }
            | Command::Probe { common, .. }
            | Command::ExportReprs { common, .. }
            | Command::Ablate { common, .. } => common,
        }
    }

    fn verb(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainBaseline { .. } => "train-baseline",
            Command::FinetuneTeachers { .. } => "finetune-teachers",
            Command::TrainDomainControl { .. } => "train-domain-control",
            Command::TrainUnified { .. } => "train-unified",
            Command::Evaluate { .. } => "evaluate",
            Command::CrossMatrix { .. } => "cross-matrix",
            Command::Probe { .. } => "probe",
            Command::ExportReprs { .. } => "export-reprs",
            Command::Ablate { .. } => "ablate",
        }
    }
}

/// Written to `<out>/manifest.json` by every command.
#[derive(Serialize)]
struct Manifest {
    command: String,
    args: Vec<String>,
    seed: u64,
    config: String,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

struct Run {
    out: PathBuf,
    cfg: TrainConfig,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

impl Run {
    fn input(&mut self, path: &Path) -> Result<()> {
        let files: Vec<PathBuf> = if path.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(path)
                .with_context(|| format!("reading {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            v.sort();
            v
        } else {
            vec![path.to_path_buf()]
        };
        for f in files {
            self.inputs.insert(f.display().to_string(), file_hash(&f)?);
        }
        Ok(())
    }

    fn artifact(&mut self, name: &str) -> Result<()> {
        let h = file_hash(&self.out.join(name))?;
        self.artifacts.insert(name.to_string(), h);
        Ok(())
    }

    fn save_ckpt(&mut self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        let h = ckpt.save(&self.out.join(name))?;
        self.artifacts.insert(name.to_string(), h);
        Ok(())
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.out.join(name), text)?;
        self.artifact(name)
    }

    fn write_log(&mut self, name: &str, t: &Trainer) -> Result<()> {
        write_log_csv(&self.out.join(name), &t.log)?;
        self.artifact(name)
    }
}

/// Loads a dataset and sizes the model vocabulary to it.
fn load_data(dir: &Path, cfg: &mut TrainConfig) -> Result<(Vocabulary, Vec<DomainCorpus>)> {
    let (vocab, corpora) = load_dataset(dir)?;
    cfg.model.vocab_size_src = vocab.len();
    cfg.model.vocab_size_tgt = vocab.len();
    cfg.validate()?;
    Ok((vocab, corpora))
}

fn load_train(dir: &Path, run: &mut Run) -> Result<(Vocabulary, Vec<DomainCorpus>)> {
    run.input(dir)?;
    let (vocab, corpora) = load_data(dir, &mut run.cfg)?;
    let (train, _) = split_corpora(&corpora, run.cfg.data.n_test)?;
    Ok((vocab, train))
}

/// Test split of `dir` as held out when `ckpt` was trained.
fn load_test(dir: &Path, ckpt: &Checkpoint, run: &mut Run) -> Result<Vec<DomainCorpus>> {
    run.input(dir)?;
    let (vocab, corpora) = load_dataset(dir)?;
    if vocab.tokens() != ckpt.vocab.as_slice() {
        bail!("dataset vocabulary in {} differs from the checkpoint's", dir.display());
    }
    Ok(split_corpora(&corpora, ckpt.config.data.n_test)?.1)
}

fn load_ckpt(path: &Path, run: &mut Run) -> Result<Checkpoint> {
    run.input(path)?;
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_teachers(dir: &Path, n: usize, run: &mut Run) -> Result<Vec<Checkpoint>> {
    (0..n)
        .map(|d| load_ckpt(&dir.join(format!("teacher_{d}.ckpt")), run))
        .collect()
}

fn execute(command: &Command, run: &mut Run) -> Result<()> {
    match command {
        Command::GenData { .. } => {
            let vocab = run.cfg.data.synthetic.vocabulary();
            let corpora = generate_synthetic(run.cfg.seed, &run.cfg.data.synthetic)?;
            save_dataset(&run.out, &vocab, &corpora)?;
            for entry in std::fs::read_dir(&run.out)? {
                let p = entry?.path();
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                if name != "manifest.json" {
                    run.artifact(&name)?;
                }
            }
            println!("wrote {} domains to {}", corpora.len(), run.out.display());
        }
        Command::TrainBaseline { data, .. } => {
            let (vocab, train) = load_train(data, run)?;
            let t = train_baseline(&run.cfg, &vocab, &train)?;
            run.save_ckpt("baseline.ckpt", &t.checkpoint())?;
            run.write_log("baseline_log.csv", &t)?;
            println!("baseline: {} updates", t.state.step);
        }
        Command::FinetuneTeachers { data, base, domain, .. } => {
            let (_, train) = load_train(data, run)?;
            let base = load_ckpt(base, run)?;
            let domains: Vec<usize> = match domain {
                Some(d) if *d >= train.len() => bail!("domain {d} out of range (have {})", train.len()),
                Some(d) => vec![*d],
                None => (0..train.len()).collect(),
            };
            for d in domains {
                let t = finetune_teacher(&base, &train[d], &run.cfg)?;
                run.save_ckpt(&format!("teacher_{d}.ckpt"), &t.checkpoint().frozen())?;
                run.write_log(&format!("teacher_{d}_log.csv"), &t)?;
                println!("teacher {d} ({}): {} updates", train[d].name, t.state.step);
            }
        }
        Command::TrainDomainControl { data, .. } => {
            let (vocab, train) = load_train(data, run)?;
            let t = train_domain_control(&run.cfg, &vocab, &train)?;
            run.save_ckpt("domain_control.ckpt", &t.checkpoint())?;
            run.write_log("domain_control_log.csv", &t)?;
            println!("domain control: {} updates", t.state.step);
        }
        Command::TrainUnified { data, base, teachers, .. } => {
            let (_, train) = load_train(data, run)?;
            let base = load_ckpt(base, run)?;
            let set = match teachers {
                Some(dir) => Some(teacher_set(&load_teachers(dir, train.len(), run)?)?),
                None if run.cfg.supervision.needs_teachers() => {
                    bail!("distillation is enabled; pass --teachers <dir>")
                }
                None => None,
            };
            let t = train_unified(&base, &train, &run.cfg, set.as_ref())?;
            run.save_ckpt("unified.ckpt", &t.checkpoint())?;
            run.write_log("unified_log.csv", &t)?;
            println!("unified: {} phase A / {} phase B updates", t.state.step, t.state.b_steps);
        }
        Command::Evaluate { trained, reference, name, .. } => {
            let ckpt = load_ckpt(&trained.ckpt, run)?;
            let test = load_test(&trained.data, &ckpt, run)?;
            let reference = reference.as_ref().map(|p| load_ckpt(p, run)).transpose()?;
            let ref_name = reference.as_ref().map(|_| "reference");
            let report = evaluate(name, &ckpt, &test, ref_name.zip(reference.as_ref()))?;
            run.write("report.json", &report.to_json()?)?;
            EvalReport::write_csv(std::slice::from_ref(&report), &run.out.join("report.csv"))?;
            run.artifact("report.csv")?;
            print!("{}", report.table());
        }
        Command::CrossMatrix { trained, .. } => {
            let ckpt = load_ckpt(&trained.ckpt, run)?;
            let test = load_test(&trained.data, &ckpt, run)?;
            let m = cross_domain_matrix(&ckpt, &test)?;
            let mut csv = String::from("dtn");
            for c in &test {
                csv.push_str(&format!(",{}", c.name));
            }
            csv.push('\n');
            for (i, row) in m.bleu.iter().enumerate() {
                csv.push_str(&test[i].name);
                for v in row {
                    csv.push_str(&format!(",{v:.2}"));
                }
                csv.push('\n');
            }
            run.write("cross_matrix.csv", &csv)?;
            run.write("cross_matrix.json", &serde_json::to_string_pretty(&m)?)?;
            print!("{csv}");
            println!("diagonal dominant: {:?}", m.dominant);
        }
        Command::Probe { trained, site, .. } => {
            let site: Site = site.parse()?;
            let ckpt = load_ckpt(&trained.ckpt, run)?;
            let test = load_test(&trained.data, &ckpt, run)?;
            let (held_in, held_out): (Vec<DomainCorpus>, Vec<DomainCorpus>) = test
                .iter()
                .map(|c| c.split(c.len() / 2))
                .collect::<dtn_core::Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            let acc = probe_classifier_accuracy(&ckpt, &held_in, &held_out, site, run.cfg.seed)?;
            let json = serde_json::json!({ "site": site, "accuracy": acc, "checkpoint_hash": ckpt.hash()? });
            run.write("probe.json", &serde_json::to_string_pretty(&json)?)?;
            println!("probe accuracy at {site:?}: {acc:.4}");
        }
        Command::ExportReprs { trained, .. } => {
            let ckpt = load_ckpt(&trained.ckpt, run)?;
            let test = load_test(&trained.data, &ckpt, run)?;
            export_representations(&ckpt, &test, &run.out.join("representations.csv"))?;
            run.artifact("representations.csv")?;
            run.artifact("representations_pca.csv")?;
            println!("wrote {}", run.out.join("representations.csv").display());
        }
        Command::Ablate { data, .. } => {
            let data = match data {
                Some(dir) => {
                    run.input(dir)?;
                    let (vocab, corpora) = load_data(dir, &mut run.cfg)?;
                    let (train, test) = split_corpora(&corpora, run.cfg.data.n_test)?;
                    SyntheticData { vocab, train, test }
                }
                None => dtn_core::experiment::synthetic_data(&run.cfg)?,
            };
            let ladder = run_ladder(&run.cfg, &data, &FULL_LADDER)?;
            run.save_ckpt("ablation/baseline.ckpt", &ladder.baseline_equal_budget)?;
            for (name, ckpt) in &ladder.unified {
                run.save_ckpt(&format!("ablation/{name}.ckpt"), ckpt)?;
            }
            EvalReport::write_csv(&ladder.reports, &run.out.join("ablation.csv"))?;
            run.artifact("ablation.csv")?;
            run.write("ablation.json", &serde_json::to_string_pretty(&ladder.reports)?)?;
            for r in &ladder.reports {
                print!("{}", r.table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<dtn_core::Error>() {
                Some(dtn_core::Error::Config(items)) => {
                    eprintln!("error: invalid configuration:");
                    for i in items {
                        eprintln!("  - {i}");
                    }
                }
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::from(1)
        }
    }
}

fn run(command: &Command) -> Result<()> {
    let common = command.common();
    let mut overrides = common.set.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = TrainConfig::resolve(common.config.as_deref(), &overrides)?;
    std::fs::create_dir_all(common.out.join(if matches!(command, Command::Ablate { .. }) { "ablation" } else { "" }))
        .with_context(|| format!("creating {}", common.out.display()))?;
    let mut run = Run {
        out: common.out.clone(),
        cfg,
        inputs: BTreeMap::new(),
        artifacts: BTreeMap::new(),
    };
    if let Some(c) = &common.config {
        run.input(c)?;
    }
    execute(command, &mut run)?;
    let manifest = Manifest {
        command: command.verb().to_string(),
        args: std::env::args().skip(1).collect(),
        seed: run.cfg.seed,
        config: run.cfg.to_toml()?,
        inputs: run.inputs,
        artifacts: run.artifacts,
    };
    write_text(&run.out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
