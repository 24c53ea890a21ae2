use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"seed = 3

[model]
d_model = 16
n_heads = 2
n_enc_layers = 1
n_dec_layers = 1
d_ffn = 24

[data]
n_test = 10
batch_tokens = 96

[data.synthetic]
sizes = [70, 60, 50, 40]

[schedule]
baseline_steps = 20
finetune_steps = 5
unified_steps = 10
"#;

fn dtn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = dtn(args);
    assert!(
        o.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    Workspace { _dir: dir, root, config }
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn gen_data_writes_corpora_and_manifest() {
    let w = workspace();
    let data = w.root.join("data");
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&data)]);
    let tsv: Vec<_> = fs::read_dir(&data)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "tsv"))
        .collect();
    assert_eq!(tsv.len(), 4);
    let m = manifest(&data);
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["seed"], 3);
    assert!(m["artifacts"].as_object().unwrap().len() >= 4);
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(dtn(&["no-such-verb"]).status.code(), Some(2));
    assert_eq!(dtn(&["gen-data", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(dtn(&[]).status.code(), Some(2));
}

#[test]
fn invalid_config_lists_every_problem() {
    let w = workspace();
    let o = dtn(&[
        "gen-data",
        "--out",
        s(&w.root.join("x")),
        "--set",
        "supervision.lambda=2.0",
        "--set",
        "model.n_heads=3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().filter(|l| l.starts_with("  - ")).count(), 2, "{err}");
}

#[test]
fn missing_input_fails_with_1() {
    let w = workspace();
    let o = dtn(&["train-baseline", "--data", s(&w.root.join("absent")), "--out", s(&w.root.join("b"))]);
    assert_eq!(o.status.code(), Some(1));
}

fn pipeline(w: &Workspace, tag: &str) -> PathBuf {
    let c = s(&w.config);
    let data = w.root.join("data");
    if !data.exists() {
        ok(&["gen-data", "--config", c, "--out", s(&data)]);
    }
    let out = w.root.join(tag);
    let base = out.join("base");
    let teachers = out.join("teachers");
    let unified = out.join("unified");
    let eval = out.join("eval");
    ok(&["train-baseline", "--config", c, "--data", s(&data), "--out", s(&base)]);
    let base_ckpt = base.join("baseline.ckpt");
    ok(&["finetune-teachers", "--config", c, "--data", s(&data), "--base", s(&base_ckpt), "--out", s(&teachers)]);
    ok(&[
        "train-unified",
        "--config",
        c,
        "--set",
        "supervision.distill_word=true",
        "--set",
        "supervision.discriminate=true",
        "--data",
        s(&data),
        "--base",
        s(&base_ckpt),
        "--teachers",
        s(&teachers),
        "--out",
        s(&unified),
    ]);
    let o = ok(&[
        "evaluate",
        "--config",
        c,
        "--data",
        s(&data),
        "--ckpt",
        s(&unified.join("unified.ckpt")),
        "--reference",
        s(&base_ckpt),
        "--name",
        "unified",
        "--out",
        s(&eval),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("unified"));
    out
}

#[test]
fn train_and_evaluate_round_trip() {
    let w = workspace();
    let out = pipeline(&w, "run");
    for d in 0..4 {
        assert!(out.join(format!("teachers/teacher_{d}.ckpt")).exists());
    }
    let log = fs::read_to_string(out.join("unified/unified_log.csv")).unwrap();
    assert!(log.starts_with("step,phase,domain,nll_or_kd,specific_cls,adv_entropy,adv_cls"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["domains"].as_array().unwrap().len(), 4);
    assert_eq!(report["reference"], "reference");
    let csv = fs::read_to_string(out.join("eval/report.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("system,checkpoint_hash"));
    let m = manifest(&out.join("unified"));
    assert_eq!(m["command"], "train-unified");
    assert!(m["inputs"].as_object().unwrap().len() > 4);

    let ckpt = out.join("unified/unified.ckpt");
    let data = w.root.join("data");
    let c = s(&w.config);
    ok(&["cross-matrix", "--config", c, "--data", s(&data), "--ckpt", s(&ckpt), "--out", s(&out.join("cross"))]);
    assert!(out.join("cross/cross_matrix.csv").exists());
    ok(&["probe", "--config", c, "--data", s(&data), "--ckpt", s(&ckpt), "--site", "dtn_out", "--out", s(&out.join("probe"))]);
    let probe: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("probe/probe.json")).unwrap()).unwrap();
    assert!((0.0..=1.0).contains(&probe["accuracy"].as_f64().unwrap()));
    ok(&["export-reprs", "--config", c, "--data", s(&data), "--ckpt", s(&ckpt), "--out", s(&out.join("reprs"))]);
    assert!(out.join("reprs/representations_pca.csv").exists());
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let w = workspace();
    let a = pipeline(&w, "a");
    let b = pipeline(&w, "b");
    for step in ["base", "teachers", "unified", "eval"] {
        assert_eq!(manifest(&a.join(step))["artifacts"], manifest(&b.join(step))["artifacts"], "{step}");
    }
}
