//! Tiny feed-forward and recurrent softmax classifiers.
//!
//! # Parameter layout
//!
//! A [`ParamVector`] is the flat concatenation of parameter blocks, each block
//! stored row-major with shape `(rows, cols)`:
//!
//! - Feed-forward `layer_dims = [d0, d1, ..., dk]`: for every layer `l` in
//!   order, the weight matrix `W_l` of shape `(d_{l+1}, d_l)` followed by the
//!   bias `b_l` of length `d_{l+1}`.
//! - Recurrent (Elman): `W_xh (H, I)`, `W_hh (H, H)`, `b_h (H)`, then the
//!   readout `W_hy (M, H)`, `b_y (M)`. The hidden state starts at zero and
//!   `h_t = tanh(W_xh x_t + W_hh h_{t-1} + b_h)`; the readout acts on the final
//!   hidden state only.
//!
//! All arithmetic is `f64`. Logarithms are natural, so the entropy of an
//! `m`-class prediction lies in `[0, ln m]`.

mod engine;
pub mod snapshot;

pub use engine::{
    example_loss_grad, forward, grad, loss, prediction_entropy, Penalty, PROB_FLOOR,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// Recurrent cell type. Only the Elman tanh cell exists today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    #[default]
    Elman,
}

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Feedforward {
        layer_dims: Vec<usize>,
        #[serde(default)]
        hidden_activation: Activation,
    },
    Recurrent {
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        #[serde(default)]
        cell: CellKind,
    },
}

/// One contiguous block of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub is_bias: bool,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

impl ModelSpec {
    pub fn feedforward(layer_dims: Vec<usize>, hidden_activation: Activation) -> Self {
        ModelSpec::Feedforward {
            layer_dims,
            hidden_activation,
        }
    }

    pub fn recurrent(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec::Recurrent {
            input_dim,
            hidden_dim,
            num_classes,
            cell: CellKind::Elman,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Feedforward { layer_dims, .. } => {
                if layer_dims.len() < 2 {
                    return Err(Error::config(
                        "model.layer_dims",
                        "need at least an input and an output dimension",
                    ));
                }
                if layer_dims.contains(&0) {
                    return Err(Error::config("model.layer_dims", "dimensions must be positive"));
                }
            }
            ModelSpec::Recurrent {
                input_dim,
                hidden_dim,
                ..
            } => {
                if *input_dim == 0 || *hidden_dim == 0 {
                    return Err(Error::config(
                        "model",
                        "recurrent input_dim and hidden_dim must be positive",
                    ));
                }
            }
        }
        if self.num_classes() < 2 {
            return Err(Error::config("model", "need at least two output classes"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelSpec::Feedforward { layer_dims, .. } => *layer_dims.last().unwrap_or(&0),
            ModelSpec::Recurrent { num_classes, .. } => *num_classes,
        }
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self, ModelSpec::Recurrent { .. })
    }

    /// Width of a single input vector (per time step for recurrent models).
    pub fn input_dim(&self) -> usize {
        match self {
            ModelSpec::Feedforward { layer_dims, .. } => layer_dims.first().copied().unwrap_or(0),
            ModelSpec::Recurrent { input_dim, .. } => *input_dim,
        }
    }

    /// Parameter blocks in storage order.
    pub fn blocks(&self) -> Vec<Block> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |rows: usize, cols: usize, is_bias: bool| {
            blocks.push(Block {
                offset,
                rows,
                cols,
                is_bias,
            });
            offset += rows * cols;
        };
        match self {
            ModelSpec::Feedforward { layer_dims, .. } => {
                for w in layer_dims.windows(2) {
                    push(w[1], w[0], false);
                    push(w[1], 1, true);
                }
            }
            ModelSpec::Recurrent {
                input_dim,
                hidden_dim,
                num_classes,
                ..
            } => {
                push(*hidden_dim, *input_dim, false);
                push(*hidden_dim, *hidden_dim, false);
                push(*hidden_dim, 1, true);
                push(*num_classes, *hidden_dim, false);
                push(*num_classes, 1, true);
            }
        }
        blocks
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Feedforward { layer_dims, .. } => {
                layer_dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
            }
            ModelSpec::Recurrent {
                input_dim: i,
                hidden_dim: h,
                num_classes: m,
                ..
            } => h * i + h * h + h + m * h + m,
        }
    }
}

/// Flattened model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::Shape {
                context: "parameter vector",
                expected: spec.param_count(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        ParamVector(vec![0.0; spec.param_count()])
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "distance between mismatched vectors");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Model input: a feature vector, or a sequence of per-step vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Input {
    Vector(Vec<f64>),
    Sequence(Vec<Vec<f64>>),
}

impl Input {
    pub fn is_finite(&self) -> bool {
        match self {
            Input::Vector(v) => v.iter().all(|x| x.is_finite()),
            Input::Sequence(s) => s.iter().flatten().all(|x| x.is_finite()),
        }
    }

    /// Flattens a sequence into one vector, zero-padding to `max_len` steps of
    /// width `step_dim`. Vectors are returned unchanged.
    pub fn padded(&self, max_len: usize, step_dim: usize) -> Input {
        match self {
            Input::Vector(v) => Input::Vector(v.clone()),
            Input::Sequence(steps) => {
                let mut out = vec![0.0; max_len * step_dim];
                for (t, step) in steps.iter().take(max_len).enumerate() {
                    out[t * step_dim..t * step_dim + step.len().min(step_dim)]
                        .copy_from_slice(&step[..step.len().min(step_dim)]);
                }
                Input::Vector(out)
            }
        }
    }
}

/// A training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Input,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(features: Input, label: usize) -> Self {
        LabeledExample { features, label }
    }
}

/// Softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfidenceVector(Vec<f64>);

impl ConfidenceVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Invariant("empty confidence vector".into()));
        }
        if probabilities
            .iter()
            .any(|p| !p.is_finite() || !(0.0..=1.0).contains(p))
        {
            return Err(Error::Invariant(
                "confidence entries must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Invariant(format!(
                "confidence vector sums to {sum}, not 1"
            )));
        }
        Ok(ConfidenceVector(probabilities))
    }

    pub(crate) fn from_softmax(probabilities: Vec<f64>) -> Self {
        ConfidenceVector(probabilities)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats with `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// `-ln p_label`, floored at [`PROB_FLOOR`].
    pub fn cross_entropy(&self, label: usize) -> f64 {
        -self.0[label].max(PROB_FLOOR).ln()
    }
}

/// Prediction outcomes paired with their confidence scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pairs: Vec<(usize, ConfidenceVector)>,
}

impl PredictionBatch {
    pub fn new(pairs: Vec<(usize, ConfidenceVector)>) -> Result<Self> {
        let Some((_, first)) = pairs.first() else {
            return Err(Error::Invariant("prediction batch must be non-empty".into()));
        };
        let m = first.len();
        for (y, p) in &pairs {
            if p.len() != m {
                return Err(Error::Shape {
                    context: "prediction batch",
                    expected: m,
                    found: p.len(),
                });
            }
            if *y >= m {
                return Err(Error::Invariant(format!("outcome {y} out of range for {m} classes")));
            }
        }
        Ok(PredictionBatch { pairs })
    }

    pub fn pairs(&self) -> &[(usize, ConfidenceVector)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// A spec bundled with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamVector,
}

impl Model {
    pub fn new(spec: ModelSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Shape {
                context: "model parameters",
                expected: spec.param_count(),
                found: params.len(),
            });
        }
        Ok(Model { spec, params })
    }

    pub fn predict(&self, input: &Input) -> Result<ConfidenceVector> {
        forward(&self.spec, &self.params, input)
    }
}

/// Anything that answers classification queries with confidence scores.
pub trait Classifier: Sync {
    fn query(&self, input: &Input) -> Result<ConfidenceVector>;
    fn num_classes(&self) -> usize;
}

impl Classifier for Model {
    fn query(&self, input: &Input) -> Result<ConfidenceVector> {
        self.predict(input)
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(model: &dyn Classifier, data: &[LabeledExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invariant("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for ex in data {
        if model.query(&ex.features)?.argmax() == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// `(mean_loss, accuracy)` in one pass over `data`.
pub fn evaluate(model: &dyn Classifier, data: &[LabeledExample]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Invariant("evaluation of an empty dataset".into()));
    }
    let mut total = 0.0;
    let mut correct = 0usize;
    for ex in data {
        let p = model.query(&ex.features)?;
        total += p.cross_entropy(ex.label);
        correct += usize::from(p.argmax() == ex.label);
    }
    let n = data.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Mean floored cross-entropy of a classifier over `data`.
pub fn mean_loss(model: &dyn Classifier, data: &[LabeledExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invariant("loss of an empty dataset".into()));
    }
    let mut total = 0.0;
    for ex in data {
        total += model.query(&ex.features)?.cross_entropy(ex.label);
    }
    Ok(total / data.len() as f64)
}
