//! Forward and backward passes.
//!
//! Internals operate on raw `&[f64]` parameter slices so the trainer can
//! evaluate gradients at perturbed points without re-wrapping.

use super::{Activation, ConfidenceVector, Input, LabeledExample, ModelSpec, ParamVector, PredictionBatch};
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Optional extra term added to the per-example training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Penalty {
    #[default]
    None,
    /// `coef * sum ||a||^2` over every hidden activation vector (every hidden
    /// layer, or every time step's hidden state for recurrent models).
    Activations(f64),
}

impl Penalty {
    fn coef(self) -> f64 {
        match self {
            Penalty::None => 0.0,
            Penalty::Activations(c) => c,
        }
    }
}

pub fn forward(spec: &ModelSpec, params: &ParamVector, input: &Input) -> Result<ConfidenceVector> {
    check_params(spec, params.as_slice())?;
    let logits = match spec {
        ModelSpec::Feedforward { .. } => ff_forward(spec, params.as_slice(), input)?.logits,
        ModelSpec::Recurrent { .. } => rnn_forward(spec, params.as_slice(), input)?.logits,
    };
    softmax(&logits).map(ConfidenceVector::from_softmax)
}

/// Mean cross-entropy over a batch, with probabilities floored at [`PROB_FLOOR`].
pub fn loss(spec: &ModelSpec, params: &ParamVector, batch: &[LabeledExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invariant("loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        check_label(spec, ex.label)?;
        total += forward(spec, params, &ex.features)?.cross_entropy(ex.label);
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`loss`] by backpropagation (through time for recurrent specs).
pub fn grad(spec: &ModelSpec, params: &ParamVector, batch: &[LabeledExample]) -> Result<ParamVector> {
    if batch.is_empty() {
        return Err(Error::Invariant("gradient over an empty batch".into()));
    }
    let n = spec.param_count();
    let mut total = vec![0.0; n];
    let mut g = vec![0.0; n];
    for ex in batch {
        example_loss_grad(spec, params.as_slice(), ex, Penalty::None, &mut g)?;
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += gi;
        }
    }
    let count = batch.len() as f64;
    for t in &mut total {
        *t /= count;
    }
    Ok(ParamVector::from_raw(total))
}

/// Per-example gradient written into `out` (overwritten). Returns the
/// cross-entropy loss of the example; the penalty term, when active, enters
/// the gradient but not the returned loss.
///
/// The logit gradient is `p - onehot(label)` even when `p_label` falls below
/// the floor, so clamping never zeroes the training signal.
pub fn example_loss_grad(
    spec: &ModelSpec,
    params: &[f64],
    example: &LabeledExample,
    penalty: Penalty,
    out: &mut [f64],
) -> Result<f64> {
    check_params(spec, params)?;
    check_label(spec, example.label)?;
    if out.len() != params.len() {
        return Err(Error::Shape {
            context: "gradient buffer",
            expected: params.len(),
            found: out.len(),
        });
    }
    out.iter_mut().for_each(|g| *g = 0.0);
    match spec {
        ModelSpec::Feedforward { .. } => ff_backward(spec, params, example, penalty.coef(), out),
        ModelSpec::Recurrent { .. } => rnn_backward(spec, params, example, penalty.coef(), out),
    }
}

/// Average prediction entropy `-(1/L) sum_i sum_j p_ij ln p_ij` in nats.
pub fn prediction_entropy(batch: &PredictionBatch) -> f64 {
    let total: f64 = batch.pairs().iter().map(|(_, p)| p.entropy()).sum();
    total / batch.len() as f64
}

fn check_params(spec: &ModelSpec, params: &[f64]) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::Shape {
            context: "parameter vector",
            expected: spec.param_count(),
            found: params.len(),
        });
    }
    Ok(())
}

fn check_label(spec: &ModelSpec, label: usize) -> Result<()> {
    if label >= spec.num_classes() {
        return Err(Error::Invariant(format!(
            "label {label} out of range for {} classes",
            spec.num_classes()
        )));
    }
    Ok(())
}

fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// `out = W x + b` with `W` row-major `(rows, cols)`.
#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

/// `out += W^T d`.
#[inline]
fn transpose_mul(w: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, wi) in out.iter_mut().zip(row) {
            *o += wi * dr;
        }
    }
}

/// `gw += d x^T`, `gb += d`.
#[inline]
fn outer_acc(gw: &mut [f64], gb: Option<&mut [f64]>, d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr == 0.0 {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (g, xi) in row.iter_mut().zip(x) {
            *g += dr * xi;
        }
    }
    if let Some(gb) = gb {
        for (g, dr) in gb.iter_mut().zip(d) {
            *g += dr;
        }
    }
}

fn activate(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(0.0),
    }
}

/// Derivative expressed through the activation value.
fn activate_grad(act: Activation, a: f64) -> f64 {
    match act {
        Activation::Tanh => 1.0 - a * a,
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

struct FfTrace {
    /// `activations[0]` is the input; the last entry is the hidden layer
    /// feeding the readout.
    activations: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn ff_forward(spec: &ModelSpec, params: &[f64], input: &Input) -> Result<FfTrace> {
    let ModelSpec::Feedforward {
        layer_dims,
        hidden_activation,
    } = spec
    else {
        unreachable!("ff_forward on a recurrent spec")
    };
    let x = match input {
        Input::Vector(v) => v,
        Input::Sequence(_) => {
            return Err(Error::Shape {
                context: "feed-forward input (got a sequence)",
                expected: layer_dims[0],
                found: 0,
            })
        }
    };
    if x.len() != layer_dims[0] {
        return Err(Error::Shape {
            context: "feed-forward input",
            expected: layer_dims[0],
            found: x.len(),
        });
    }
    let blocks = spec.blocks();
    let layers = layer_dims.len() - 1;
    let mut activations = Vec::with_capacity(layers);
    activations.push(x.clone());
    let mut logits = Vec::new();
    for l in 0..layers {
        let (w, b) = (&blocks[2 * l], &blocks[2 * l + 1]);
        let mut z = vec![0.0; layer_dims[l + 1]];
        affine(&params[w.range()], &params[b.range()], &activations[l], &mut z);
        if l + 1 == layers {
            logits = z;
        } else {
            for v in &mut z {
                *v = activate(*hidden_activation, *v);
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("hidden activation"));
            }
            activations.push(z);
        }
    }
    Ok(FfTrace {
        activations,
        logits,
    })
}

fn ff_backward(
    spec: &ModelSpec,
    params: &[f64],
    example: &LabeledExample,
    penalty: f64,
    out: &mut [f64],
) -> Result<f64> {
    let ModelSpec::Feedforward {
        layer_dims,
        hidden_activation,
    } = spec
    else {
        unreachable!()
    };
    let trace = ff_forward(spec, params, &example.features)?;
    let probs = softmax(&trace.logits)?;
    let loss = -probs[example.label].max(PROB_FLOOR).ln();
    let blocks = spec.blocks();
    let layers = layer_dims.len() - 1;

    let mut delta = probs;
    delta[example.label] -= 1.0;
    for l in (0..layers).rev() {
        let (w, b) = (blocks[2 * l], blocks[2 * l + 1]);
        let input = &trace.activations[l];
        {
            let (gw, rest) = out[w.offset..].split_at_mut(w.len());
            outer_acc(gw, Some(&mut rest[..b.len()]), &delta, input);
        }
        if l == 0 {
            break;
        }
        let mut d_prev = vec![0.0; layer_dims[l]];
        transpose_mul(&params[w.range()], &delta, &mut d_prev);
        for (d, a) in d_prev.iter_mut().zip(input) {
            if penalty != 0.0 {
                *d += 2.0 * penalty * a;
            }
            *d *= activate_grad(*hidden_activation, *a);
        }
        delta = d_prev;
    }
    Ok(loss)
}

struct RnnTrace {
    /// `hidden[0]` is the zero initial state; `hidden[t]` follows step `t`.
    hidden: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn rnn_forward(spec: &ModelSpec, params: &[f64], input: &Input) -> Result<RnnTrace> {
    let ModelSpec::Recurrent {
        input_dim,
        hidden_dim,
        num_classes,
        ..
    } = spec
    else {
        unreachable!("rnn_forward on a feed-forward spec")
    };
    let steps = match input {
        Input::Sequence(s) => s,
        Input::Vector(v) => {
            return Err(Error::Shape {
                context: "recurrent input (got a flat vector)",
                expected: *input_dim,
                found: v.len(),
            })
        }
    };
    if steps.is_empty() {
        return Err(Error::Shape {
            context: "recurrent sequence length",
            expected: 1,
            found: 0,
        });
    }
    let blocks = spec.blocks();
    let (wx, wh, bh, wy, by) = (blocks[0], blocks[1], blocks[2], blocks[3], blocks[4]);
    let mut hidden = Vec::with_capacity(steps.len() + 1);
    hidden.push(vec![0.0; *hidden_dim]);
    for x in steps {
        if x.len() != *input_dim {
            return Err(Error::Shape {
                context: "recurrent step input",
                expected: *input_dim,
                found: x.len(),
            });
        }
        let prev = hidden.last().unwrap();
        let mut z = vec![0.0; *hidden_dim];
        affine(&params[wx.range()], &params[bh.range()], x, &mut z);
        let zero_bias = vec![0.0; *hidden_dim];
        let mut rec = vec![0.0; *hidden_dim];
        affine(&params[wh.range()], &zero_bias, prev, &mut rec);
        for (zi, ri) in z.iter_mut().zip(&rec) {
            *zi = (*zi + ri).tanh();
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("recurrent hidden state"));
        }
        hidden.push(z);
    }
    let mut logits = vec![0.0; *num_classes];
    affine(&params[wy.range()], &params[by.range()], hidden.last().unwrap(), &mut logits);
    Ok(RnnTrace { hidden, logits })
}

fn rnn_backward(
    spec: &ModelSpec,
    params: &[f64],
    example: &LabeledExample,
    penalty: f64,
    out: &mut [f64],
) -> Result<f64> {
    let ModelSpec::Recurrent { hidden_dim, .. } = spec else {
        unreachable!()
    };
    let trace = rnn_forward(spec, params, &example.features)?;
    let Input::Sequence(steps) = &example.features else {
        unreachable!()
    };
    let probs = softmax(&trace.logits)?;
    let loss = -probs[example.label].max(PROB_FLOOR).ln();
    let blocks = spec.blocks();
    let (wx, wh, bh, wy, by) = (blocks[0], blocks[1], blocks[2], blocks[3], blocks[4]);

    let mut dlogits = probs;
    dlogits[example.label] -= 1.0;
    let last = trace.hidden.len() - 1;
    {
        let (gw, rest) = out[wy.offset..].split_at_mut(wy.len());
        outer_acc(gw, Some(&mut rest[..by.len()]), &dlogits, &trace.hidden[last]);
    }
    let mut dh = vec![0.0; *hidden_dim];
    transpose_mul(&params[wy.range()], &dlogits, &mut dh);

    let mut dz = vec![0.0; *hidden_dim];
    for t in (1..=last).rev() {
        let h = &trace.hidden[t];
        for ((dzi, dhi), hi) in dz.iter_mut().zip(&dh).zip(h) {
            let mut g = *dhi;
            if penalty != 0.0 {
                g += 2.0 * penalty * hi;
            }
            *dzi = g * (1.0 - hi * hi);
        }
        outer_acc(&mut out[wx.range()], None, &dz, &steps[t - 1]);
        outer_acc(&mut out[wh.range()], None, &dz, &trace.hidden[t - 1]);
        for (g, d) in out[bh.range()].iter_mut().zip(&dz) {
            *g += d;
        }
        dh.iter_mut().for_each(|v| *v = 0.0);
        transpose_mul(&params[wh.range()], &dz, &mut dh);
    }
    Ok(loss)
}
