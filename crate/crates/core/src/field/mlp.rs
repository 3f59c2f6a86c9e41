//! Small fully connected networks with rectifier hidden layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{sigmoid, softmax_in_place, softplus, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Softplus,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn apply(self, v: &mut [f64]) {
        match self {
            Activation::None => {}
            Activation::Softplus => v.iter_mut().for_each(|x| *x = softplus(*x)),
            Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
            Activation::Softmax => softmax_in_place(v),
        }
    }

    pub fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::None => x,
            Activation::Softplus => tape.softplus(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softmax => tape.softmax(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyMlp {
    widths: Vec<usize>,
    output: Activation,
    layers: Vec<(ParamId, ParamId)>,
}

/// Values recorded by [`TinyMlp::forward`].
pub struct MlpTrace {
    pub out: Var,
    /// Output before the final activation.
    pub raw: Var,
    /// Hidden pre-activations, one per hidden layer.
    pub hidden_pre: Vec<Var>,
}

impl TinyMlp {
    /// Registers `<prefix>.w<i>` (shape `[out, in]`) and `<prefix>.b<i>`.
    /// Weights are He-uniform, biases zero.
    pub fn new(store: &mut ParamStore, prefix: &str, widths: &[usize], output: Activation, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (inp, out) = (pair[0], pair[1]);
            let bound = (6.0 / inp as f64).sqrt();
            let w: Vec<f64> = (0..inp * out).map(|_| rng.gen_range(-bound..bound)).collect();
            let wid = store.add(format!("{prefix}.w{i}"), vec![out, inp], w);
            let bid = store.add(format!("{prefix}.b{i}"), vec![out], vec![0.0; out]);
            layers.push((wid, bid));
        }
        Self { widths: widths.to_vec(), output, layers }
    }

    /// Rebinds to tensors already present in `store`.
    pub fn bind(store: &ParamStore, prefix: &str, widths: &[usize], output: Activation) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let find = |n: String, shape: Vec<usize>| {
                let id = store.find(&n).ok_or_else(|| Error::Validation(format!("missing tensor {n}")))?;
                if store.shape(id) != shape.as_slice() {
                    return Err(Error::Validation(format!("tensor {n} has shape {:?}, expected {shape:?}", store.shape(id))));
                }
                Ok(id)
            };
            let w = find(format!("{prefix}.w{i}"), vec![pair[1], pair[0]])?;
            let b = find(format!("{prefix}.b{i}"), vec![pair[1]])?;
            layers.push((w, b));
        }
        Ok(Self { widths: widths.to_vec(), output, layers })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Straight-line evaluation of one input vector.
    pub fn eval(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "mlp input has {} entries, expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut h = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (store.get(*w), store.get(*b));
            let inp = h.len();
            let mut next: Vec<f64> = bv.to_vec();
            for (o, n) in next.iter_mut().enumerate() {
                let row = &wv[o * inp..(o + 1) * inp];
                let mut acc = 0.0;
                for i in 0..inp {
                    acc += h[i] * row[i];
                }
                *n += acc;
            }
            if l < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = next;
        }
        self.output.apply(&mut h);
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<MlpTrace> {
        let mut h = x;
        let mut hidden_pre = Vec::new();
        let last = self.layers.len() - 1;
        let mut raw = x;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let pre = tape.linear(h, *w, Some(*b))?;
            if l < last {
                hidden_pre.push(pre);
                h = tape.relu(pre);
            } else {
                raw = pre;
            }
        }
        let out = self.output.record(tape, raw);
        Ok(MlpTrace { out, raw, hidden_pre })
    }

    /// Pushes `repeat` input tangents per sample through the network and
    /// returns the tangents of the raw output (before the final activation).
    pub fn tangent(&self, tape: &mut Tape, trace: &MlpTrace, t: Var, repeat: usize) -> Result<Var> {
        let mut h = t;
        for (l, (w, _)) in self.layers.iter().enumerate() {
            let lin = tape.linear(h, *w, None)?;
            h = match trace.hidden_pre.get(l) {
                Some(pre) => tape.mask_repeat(lin, *pre, repeat)?,
                None => lin,
            };
        }
        Ok(h)
    }
}

pub fn mlp_eval(mlp: &TinyMlp, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
    mlp.eval(store, input)
}
