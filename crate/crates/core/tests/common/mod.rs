//! Finite-difference suites shared by the gradient and acceptance tests.

#![allow(dead_code)]

use dtn_core::data::Batch;
use dtn_core::dtn::{DtnBank, DtnKind};
use dtn_core::forward::check_param_grad;
use dtn_core::nmt::init_params;
use dtn_core::supervision::{unified_objective, ClassifierParams, SupervisionConfig, TeacherSet, Unified};
use dtn_core::tensor::{grad_check, GradCheckReport};
use dtn_core::{ModelConfig, ModelParams, Result, Rng, Tape, Tensor, Var};
use rand::{Rng as _, SeedableRng};

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
const STEP: f64 = 1e-5;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape.to_vec(), 1.0, &mut Rng::seed_from_u64(seed))
}

/// Values bounded away from zero, for kinked primitives.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut t = rand_tensor(shape, seed);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// Reduces `out` to a scalar with fixed random weights so every output
/// coordinate matters.
fn project(tape: &mut Tape, out: Var) -> Result<Var> {
    let n = tape.value(out).len();
    let mut rng = Rng::seed_from_u64(n as u64 + 1000);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = tape.mul_const(out, w)?;
    Ok(tape.sum(y))
}

fn check(point: Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> GradCheckReport {
    grad_check(
        |tape, x| {
            let out = f(tape, x)?;
            project(tape, out)
        },
        &point,
        STEP,
        PRIMITIVE_TOL,
    )
    .expect("gradient check runs")
}

/// One finite-difference report per primitive (and per differentiable
/// input for the multi-input ones).
pub fn primitive_reports() -> Vec<(&'static str, GradCheckReport)> {
    let s23 = [2, 3];
    let s234 = [2, 3, 4];
    let other = rand_tensor(&s234, 99);
    let row = rand_tensor(&[4], 98);
    let mut r: Vec<(&'static str, GradCheckReport)> = Vec::new();

    let o = other.clone();
    r.push(("add/lhs", check(rand_tensor(&s234, 1), move |t, x| {
        let b = t.constant(o.clone());
        t.add(x, b)
    })));
    let b = row.clone();
    r.push(("add/broadcast rhs", check(b, |t, x| {
        let a = t.constant(rand_tensor(&s234, 2));
        t.add(a, x)
    })));
    let o = other.clone();
    r.push(("sub/lhs", check(rand_tensor(&s234, 3), move |t, x| {
        let b = t.constant(o.clone());
        t.sub(x, b)
    })));
    r.push(("sub/rhs", check(rand_tensor(&s234, 4), |t, x| {
        let a = t.constant(rand_tensor(&s234, 5));
        t.sub(a, x)
    })));
    let o = other.clone();
    r.push(("mul/lhs", check(rand_tensor(&s234, 6), move |t, x| {
        let b = t.constant(o.clone());
        t.mul(x, b)
    })));
    r.push(("mul/broadcast rhs", check(row.clone(), |t, x| {
        let a = t.constant(rand_tensor(&s234, 7));
        t.mul(a, x)
    })));
    r.push(("mul/self", check(rand_tensor(&s23, 8), |t, x| t.mul(x, x))));
    r.push(("scale", check(rand_tensor(&s23, 9), |t, x| Ok(t.scale(x, -2.5)))));
    r.push(("add_scalar", check(rand_tensor(&s23, 10), |t, x| Ok(t.add_scalar(x, 0.7)))));
    r.push(("mul_const", check(rand_tensor(&s23, 11), |t, x| {
        t.mul_const(x, vec![0.5, -1.0, 2.0, 3.0, -0.25, 1.5])
    })));
    r.push(("dropout", check(rand_tensor(&s234, 12), |t, x| {
        t.dropout(x, 0.3, &mut Rng::seed_from_u64(4))
    })));
    r.push(("matmul/lhs", check(rand_tensor(&s234, 13), |t, x| {
        let w = t.constant(rand_tensor(&[4, 5], 14));
        t.matmul(x, w)
    })));
    r.push(("matmul/rhs", check(rand_tensor(&[4, 5], 15), |t, x| {
        let a = t.constant(rand_tensor(&s234, 16));
        t.matmul(a, x)
    })));
    r.push(("bmm/lhs", check(rand_tensor(&s234, 17), |t, x| {
        let b = t.constant(rand_tensor(&[2, 4, 3], 18));
        t.bmm(x, b)
    })));
    r.push(("bmm/rhs", check(rand_tensor(&[2, 4, 3], 19), |t, x| {
        let a = t.constant(rand_tensor(&s234, 20));
        t.bmm(a, x)
    })));
    r.push(("transpose", check(rand_tensor(&s234, 21), |t, x| t.transpose(x))));
    r.push(("permute", check(rand_tensor(&s234, 22), |t, x| t.permute(x, &[2, 0, 1]))));
    r.push(("reshape", check(rand_tensor(&s234, 23), |t, x| t.reshape(x, &[6, 4]))));
    r.push(("concat", check(rand_tensor(&s234, 24), |t, x| {
        let b = t.constant(rand_tensor(&[2, 3, 2], 25));
        t.concat(&[x, b, x], 2)
    })));
    r.push(("slice", check(rand_tensor(&s234, 26), |t, x| t.slice(x, 1, 1, 2))));
    r.push(("embedding", check(rand_tensor(&[5, 3], 27), |t, x| {
        t.embedding(x, &[4, 0, 4, 2, 1, 4], &[2, 3])
    })));
    r.push(("relu", check(away_from_zero(&s234, 28), |t, x| Ok(t.relu(x)))));
    r.push(("softmax", check(rand_tensor(&s234, 29), |t, x| t.softmax(x))));
    r.push(("log_softmax", check(rand_tensor(&s234, 30), |t, x| t.log_softmax(x))));
    r.push(("layer_norm/input", check(rand_tensor(&s234, 31), |t, x| {
        let g = t.constant(rand_tensor(&[4], 32));
        let b = t.constant(rand_tensor(&[4], 33));
        t.layer_norm(x, g, b, 1e-6)
    })));
    r.push(("layer_norm/gain", check(rand_tensor(&[4], 34), |t, x| {
        let a = t.constant(rand_tensor(&s234, 35));
        let b = t.constant(rand_tensor(&[4], 36));
        t.layer_norm(a, x, b, 1e-6)
    })));
    r.push(("layer_norm/bias", check(rand_tensor(&[4], 37), |t, x| {
        let a = t.constant(rand_tensor(&s234, 38));
        let g = t.constant(rand_tensor(&[4], 39));
        t.layer_norm(a, g, x, 1e-6)
    })));
    r.push(("sum", check(rand_tensor(&s234, 40), |t, x| Ok(t.sum(x)))));
    r.push(("mean", check(rand_tensor(&s234, 41), |t, x| Ok(t.mean(x)))));
    r.push(("masked_fill", check(rand_tensor(&s23, 42), |t, x| {
        t.masked_fill(x, vec![false, true, false, false, true, true], -3.0)
    })));
    r.push(("pick", check(rand_tensor(&s234, 43), |t, x| t.pick(x, &[0, 3, 1, 2, 2, 0]))));
    r
}

/// A small unified model with every component active and all parameters
/// moved off their (partly zero) initial values.
pub struct FullModel {
    pub cfg: ModelConfig,
    pub sup: SupervisionConfig,
    pub bank: DtnBank,
    pub params: ModelParams,
    pub batch: Batch,
    pub teacher_logits: Tensor,
}

pub fn full_model() -> FullModel {
    let cfg = ModelConfig {
        vocab_size_src: 12,
        vocab_size_tgt: 12,
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ffn: 12,
        max_len: 16,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    };
    let mut rng = Rng::seed_from_u64(17);
    let mut params = init_params(&cfg, &mut rng).unwrap();
    let (bank, p) = DtnBank::init(&cfg, 2, DtnKind::Attention, 1, &mut rng).unwrap();
    params.merge(p).unwrap();
    let (_, p) = ClassifierParams::init(cfg.d_model, 2).unwrap();
    params.merge(p).unwrap();
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let teacher = init_params(&cfg, &mut rng).unwrap();
    let batch = Batch::from_pairs(
        1,
        &[(vec![4, 5, 6, 7], vec![8, 9, 10]), (vec![5, 11], vec![6, 6, 7, 4])],
        vec![0, 1],
    )
    .unwrap();
    let mut ts = TeacherSet::new();
    ts.insert(1, teacher);
    let teacher_logits = ts.logits(&cfg, &batch).unwrap();
    let sup = SupervisionConfig {
        distill_word: true,
        discriminate: true,
        lambda: 0.4,
        delta: 0.3,
        ..SupervisionConfig::default()
    };
    FullModel {
        cfg,
        sup,
        bank,
        params,
        batch,
        teacher_logits,
    }
}

/// Finite-difference reports of the full unified objective with respect to
/// every parameter tensor (a strided subset of coordinates in each).
pub fn full_model_reports() -> Vec<(String, GradCheckReport)> {
    let m = full_model();
    let model = Unified {
        cfg: &m.cfg,
        bank: Some(&m.bank),
        sup: &m.sup,
    };
    let names: Vec<String> = m.params.names().map(str::to_string).collect();
    names
        .into_iter()
        .filter(|n| !n.starts_with("dtn.0."))
        .map(|name| {
            let len = m.params.get(&name).unwrap().len();
            let stride = (len / 6).max(1);
            let coords: Vec<usize> = (0..len).step_by(stride).collect();
            let report = check_param_grad(&m.params, &name, &coords, STEP, MODEL_TOL, |f| {
                let l = unified_objective(f, &model, &m.batch, Some(&m.teacher_logits))?;
                // Adversarial classifier loss too, so `cls.adv.*` is covered.
                f.tape.add(l.phase_a, l.adv_cls.expect("discrimination is on"))
            })
            .unwrap();
            (name, report)
        })
        .collect()
}
