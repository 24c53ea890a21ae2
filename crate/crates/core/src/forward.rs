//! Execution context for one forward (and optionally backward) pass.

use std::collections::HashMap;

use crate::error::Result;
use crate::params::ModelParams;
use crate::tensor::{grad_check_coords, GradCheckReport, Tape, Var};
use crate::Rng;

/// Which parameters of a [`ModelParams`] receive gradients during a pass.
#[derive(Clone, Copy)]
pub enum Trainable<'a> {
    Nothing,
    Everything,
    Only(&'a dyn Fn(&str) -> bool),
}

impl Trainable<'_> {
    fn includes(&self, name: &str) -> bool {
        match self {
            Trainable::Nothing => false,
            Trainable::Everything => true,
            Trainable::Only(f) => f(name),
        }
    }
}

/// A tape plus lazily bound parameters.
///
/// Parameters are copied onto the tape the first time a layer asks for them,
/// so a pass only ever touches the tensors it actually uses. Trainable ones
/// become gradient leaves; the rest are constants through which gradients
/// still flow to upstream values.
pub struct Forward<'a> {
    pub tape: Tape,
    params: &'a ModelParams,
    trainable: Trainable<'a>,
    bound: HashMap<String, Var>,
    dropout: Option<(f64, &'a mut Rng)>,
}

impl<'a> Forward<'a> {
    /// Inference pass: no gradients, no dropout.
    pub fn eval(params: &'a ModelParams) -> Self {
        Forward {
            tape: Tape::new(),
            params,
            trainable: Trainable::Nothing,
            bound: HashMap::new(),
            dropout: None,
        }
    }

    pub fn new(params: &'a ModelParams, trainable: Trainable<'a>) -> Self {
        Forward {
            tape: Tape::new(),
            params,
            trainable,
            bound: HashMap::new(),
            dropout: None,
        }
    }

    /// Enables dropout at `rate` with masks drawn from `rng`. A rate of zero
    /// leaves the pass deterministic.
    pub fn with_dropout(mut self, rate: f64, rng: &'a mut Rng) -> Self {
        if rate > 0.0 {
            self.dropout = Some((rate, rng));
        }
        self
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    /// The tape variable for parameter `name`, binding it on first use.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.params.get(name)?.clone();
        let v = if self.trainable.includes(name) {
            self.tape.param(t)
        } else {
            self.tape.constant(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses `var`, already recorded on this tape, as parameter `name`.
    pub fn bind_external(&mut self, name: &str, var: Var) {
        self.bound.insert(name.to_string(), var);
    }

    pub(crate) fn dropout(&mut self, x: Var) -> Result<Var> {
        match self.dropout.as_mut() {
            Some((rate, rng)) => self.tape.dropout(x, *rate, &mut **rng),
            None => Ok(x),
        }
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradients of every trainable parameter touched by this pass, sorted by
    /// path. Parameters that were bound but received no gradient report zeros.
    pub fn grads(&self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<_> = self
            .bound
            .iter()
            .filter(|(name, _)| self.trainable.includes(name))
            .map(|(name, &v)| {
                let g = self
                    .tape
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.tape.value(v).len()]);
                (name.clone(), g)
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Names of all parameters bound during this pass.
    pub fn bound_names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.bound.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

/// Finite-difference check of `loss` with respect to the listed coordinates
/// of parameter `name`; every other parameter is held constant and dropout
/// is off.
pub fn check_param_grad<F>(
    params: &ModelParams,
    name: &str,
    coords: &[usize],
    step: f64,
    tol: f64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Forward) -> Result<Var>,
{
    let point = params.get(name)?.clone();
    grad_check_coords(
        |tape, x| {
            let mut f = Forward::eval(params);
            std::mem::swap(&mut f.tape, tape);
            f.bind_external(name, x);
            let out = loss(&mut f);
            std::mem::swap(&mut f.tape, tape);
            out
        },
        &point,
        coords,
        step,
        tol,
    )
}
