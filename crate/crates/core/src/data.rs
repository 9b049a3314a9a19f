//! Deterministic synthetic data sources and dataset CSV files.
//!
//! Record `j` drawn under key `k` comes from its own stream keyed
//! `(source seed, k, j)`, so any record can be regenerated in isolation and
//! draws never depend on thread scheduling.
//!
//! # Dataset CSV
//!
//! Header `label,kind,features`. `kind` is `vector` or `sequence`. `features`
//! holds components separated by single spaces; for sequences, time steps are
//! joined with `;`. Floats use Rust's shortest round-trip formatting, so a
//! written dataset reloads bit-for-bit.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Input, LabeledExample};
use crate::rng::{self, Stream};

/// Distance between adjacent class centers, in within-class standard
/// deviations, at `separation = 1`.
pub const CENTER_SPACING: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceParams {
    /// Isotropic Gaussian classes. Centers sit on a circle in the first two
    /// coordinates (on a line when `dims = 1`) with adjacent centers
    /// `CENTER_SPACING * separation * std` apart; remaining coordinates are
    /// pure noise.
    GaussianBlobs {
        classes: usize,
        dims: usize,
        separation: f64,
        #[serde(default = "default_std")]
        std: f64,
    },
    /// One-hot token sequences. Token `t` belongs to class `t % classes`; a
    /// sequence's label is the class owning strictly more of its tokens than
    /// any other class.
    SyntheticSequences {
        vocab: usize,
        classes: usize,
        min_len: usize,
        max_len: usize,
        #[serde(default)]
        noise_std: f64,
    },
}

fn default_std() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    params: SourceParams,
    seed: u64,
    centers: Vec<Vec<f64>>,
}

/// Per-position probability of drawing from the label's own token class.
const SEQUENCE_BIAS: f64 = 0.5;

pub fn make_source(params: SourceParams, seed: u64) -> Result<DataSource> {
    DataSource::new(params, seed)
}

pub fn draw(source: &DataSource, n: usize, key: u64) -> Vec<LabeledExample> {
    source.draw(n, key)
}

pub fn draw_adjacent_pair(
    source: &DataSource,
    n: usize,
    key: u64,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    source.draw_adjacent_pair(n, key)
}

impl DataSource {
    pub fn new(params: SourceParams, seed: u64) -> Result<Self> {
        let centers = match &params {
            SourceParams::GaussianBlobs {
                classes,
                dims,
                separation,
                std,
            } => {
                if *classes < 2 {
                    return Err(Error::config("data.source.classes", "need at least two classes"));
                }
                if *dims == 0 {
                    return Err(Error::config("data.source.dims", "must be positive"));
                }
                if !(separation.is_finite() && *separation > 0.0) {
                    return Err(Error::config(
                        "data.source.separation",
                        "must be positive so class centers are distinct",
                    ));
                }
                if !(std.is_finite() && *std > 0.0) {
                    return Err(Error::config("data.source.std", "must be positive"));
                }
                blob_centers(*classes, *dims, CENTER_SPACING * separation * std)
            }
            SourceParams::SyntheticSequences {
                vocab,
                classes,
                min_len,
                max_len,
                noise_std,
            } => {
                if *classes < 2 {
                    return Err(Error::config("data.source.classes", "need at least two classes"));
                }
                if vocab < classes {
                    return Err(Error::config(
                        "data.source.vocab",
                        "every class needs at least one token",
                    ));
                }
                if *min_len == 0 || min_len > max_len {
                    return Err(Error::config(
                        "data.source.min_len",
                        "need 1 <= min_len <= max_len",
                    ));
                }
                if !(noise_std.is_finite() && *noise_std >= 0.0) {
                    return Err(Error::config("data.source.noise_std", "must be >= 0"));
                }
                Vec::new()
            }
        };
        Ok(DataSource {
            params,
            seed,
            centers,
        })
    }

    pub fn params(&self) -> &SourceParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        match &self.params {
            SourceParams::GaussianBlobs { classes, .. }
            | SourceParams::SyntheticSequences { classes, .. } => *classes,
        }
    }

    /// Width of a feature vector, or of one time step for sequences.
    pub fn feature_dim(&self) -> usize {
        match &self.params {
            SourceParams::GaussianBlobs { dims, .. } => *dims,
            SourceParams::SyntheticSequences { vocab, .. } => *vocab,
        }
    }

    pub fn is_sequential(&self) -> bool {
        matches!(self.params, SourceParams::SyntheticSequences { .. })
    }

    pub fn max_len(&self) -> usize {
        match &self.params {
            SourceParams::GaussianBlobs { .. } => 1,
            SourceParams::SyntheticSequences { max_len, .. } => *max_len,
        }
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Record `index` of the draw keyed `key`.
    pub fn record(&self, key: u64, index: usize) -> LabeledExample {
        let mut s = Stream::keyed(self.seed, &[rng::label("record"), key, index as u64]);
        match &self.params {
            SourceParams::GaussianBlobs { classes, std, .. } => {
                let label = s.below(*classes);
                let features = self.centers[label]
                    .iter()
                    .map(|c| c + std * s.gaussian())
                    .collect();
                LabeledExample::new(Input::Vector(features), label)
            }
            SourceParams::SyntheticSequences {
                vocab,
                classes,
                min_len,
                max_len,
                noise_std,
            } => {
                let label = s.below(*classes);
                let len = min_len + s.below(max_len - min_len + 1);
                let own: Vec<usize> = (0..*vocab).filter(|t| t % classes == label).collect();
                let tokens = loop {
                    let tokens: Vec<usize> = (0..len)
                        .map(|_| {
                            if s.bernoulli(SEQUENCE_BIAS) {
                                own[s.below(own.len())]
                            } else {
                                s.below(*vocab)
                            }
                        })
                        .collect();
                    let mut counts = vec![0usize; *classes];
                    for t in &tokens {
                        counts[t % classes] += 1;
                    }
                    let mine = counts[label];
                    if counts
                        .iter()
                        .enumerate()
                        .all(|(c, &n)| c == label || n < mine)
                    {
                        break tokens;
                    }
                };
                let steps = tokens
                    .into_iter()
                    .map(|t| {
                        (0..*vocab)
                            .map(|j| {
                                let hot = if j == t { 1.0 } else { 0.0 };
                                if *noise_std > 0.0 {
                                    hot + noise_std * s.gaussian()
                                } else {
                                    hot
                                }
                            })
                            .collect()
                    })
                    .collect();
                LabeledExample::new(Input::Sequence(steps), label)
            }
        }
    }

    pub fn draw(&self, n: usize, key: u64) -> Vec<LabeledExample> {
        (0..n).map(|j| self.record(key, j)).collect()
    }

    /// `D1 = {d_1..d_N}` and `D2 = {d_1..d_{N-1}, d_{N+1}}`: same size, with
    /// the only difference at position `N-1` (zero-based).
    pub fn draw_adjacent_pair(
        &self,
        n: usize,
        key: u64,
    ) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
        if n < 2 {
            return Err(Error::Domain("adjacent pairs need N >= 2".into()));
        }
        let d1 = self.draw(n, key);
        let mut d2 = d1.clone();
        d2[n - 1] = self.record(key, n);
        Ok((d1, d2))
    }

    /// Hex digest of the source parameters and seed.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&(&self.params, self.seed)).expect("source serializes");
        crate::fingerprint(json.as_bytes())
    }
}

fn blob_centers(classes: usize, dims: usize, spacing: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut center = vec![0.0; dims];
            if dims == 1 {
                center[0] = spacing * (c as f64 - (classes - 1) as f64 / 2.0);
            } else {
                let radius = spacing / (2.0 * (PI / classes as f64).sin());
                let angle = 2.0 * PI * c as f64 / classes as f64;
                center[0] = radius * angle.cos();
                center[1] = radius * angle.sin();
            }
            center
        })
        .collect()
}

/// Splits `data` into `k` contiguous, disjoint, near-equal batches.
pub fn split_batches(data: &[LabeledExample], k: usize) -> Result<Vec<&[LabeledExample]>> {
    if k == 0 || k > data.len() {
        return Err(Error::config(
            "batches",
            format!("cannot split {} records into {k} batches", data.len()),
        ));
    }
    let base = data.len() / k;
    let extra = data.len() % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push(&data[start..start + len]);
        start += len;
    }
    Ok(out)
}

/// Flattens sequence records to zero-padded vectors of `max_len * step_dim`.
pub fn pad_examples(data: &[LabeledExample], max_len: usize, step_dim: usize) -> Vec<LabeledExample> {
    data.iter()
        .map(|ex| LabeledExample::new(ex.features.padded(max_len, step_dim), ex.label))
        .collect()
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_dataset_csv<W: Write>(w: W, data: &[LabeledExample]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["label", "kind", "features"])?;
    for ex in data {
        let (kind, features) = match &ex.features {
            Input::Vector(v) => ("vector", join(v)),
            Input::Sequence(steps) => (
                "sequence",
                steps.iter().map(|s| join(s)).collect::<Vec<_>>().join(";"),
            ),
        };
        out.write_record([ex.label.to_string().as_str(), kind, features.as_str()])?;
    }
    out.flush()?;
    Ok(())
}

fn parse_vector(field: &str, line: usize) -> Result<Vec<f64>> {
    field
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("record {line}: bad number {s:?}: {e}")))
        })
        .collect()
}

pub fn read_dataset_csv<R: Read>(r: R) -> Result<Vec<LabeledExample>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["label", "kind", "features"] {
        return Err(Error::Format(format!("unexpected dataset header {headers:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let label: usize = rec[0]
            .parse()
            .map_err(|e| Error::Format(format!("record {i}: bad label: {e}")))?;
        let features = match &rec[1] {
            "vector" => Input::Vector(parse_vector(&rec[2], i)?),
            "sequence" => Input::Sequence(
                rec[2]
                    .split(';')
                    .map(|s| parse_vector(s, i))
                    .collect::<Result<_>>()?,
            ),
            other => return Err(Error::Format(format!("record {i}: unknown kind {other:?}"))),
        };
        if !features.is_finite() {
            return Err(Error::Format(format!("record {i}: non-finite feature")));
        }
        out.push(LabeledExample::new(features, label));
    }
    Ok(out)
}
