//! Attack evaluation and the surrounding measurements.

use serde::Serialize;

use super::{AttackRecord, EvalSplit, MembershipInference};
use crate::error::{Error, Result};
use crate::nn::{self, Classifier, LabeledExample, Model, ModelSpec};
use crate::trainer::{Schedule, TrainConfig, Trainer};

/// One query of an evaluation split, as seen by the attacker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterRow {
    pub entropy: f64,
    pub loss: f64,
    pub member: bool,
    pub inferred: bool,
    pub correct: bool,
}

/// Queries `victim` on every split record (members first) and applies the
/// attack to each output.
pub fn entropy_loss_table(
    victim: &dyn Classifier,
    attack: &dyn MembershipInference,
    split: &EvalSplit,
) -> Result<Vec<ScatterRow>> {
    split.check_balanced()?;
    split
        .queries()
        .enumerate()
        .map(|(i, (ex, member))| {
            let conf = victim.query(&ex.features)?;
            let record = AttackRecord::new(&conf, ex.label, member)?;
            let inferred = attack.infer(i, &record)?;
            Ok(ScatterRow {
                entropy: conf.entropy(),
                loss: conf.cross_entropy(ex.label),
                member,
                inferred,
                correct: inferred == member,
            })
        })
        .collect()
}

/// Fraction of correct membership decisions; 0.5 is the random baseline
/// because the split is balanced.
pub fn evaluate_attack(
    attack: &dyn MembershipInference,
    victim: &dyn Classifier,
    split: &EvalSplit,
) -> Result<f64> {
    let rows = entropy_loss_table(victim, attack, split)?;
    Ok(rows.iter().filter(|r| r.correct).count() as f64 / rows.len() as f64)
}

/// Rows sorted by entropy and cut into four equal-count bins; returns the
/// share of member decisions in each bin, lowest entropy first.
pub fn entropy_quartile_member_rates(rows: &[ScatterRow]) -> Result<[f64; 4]> {
    if rows.len() < 4 {
        return Err(Error::Invariant("need at least four rows for quartiles".into()));
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.entropy.total_cmp(&b.entropy));
    let n = sorted.len();
    let mut hits = [0usize; 4];
    let mut counts = [0usize; 4];
    for (i, r) in sorted.iter().enumerate() {
        let bin = i * 4 / n;
        counts[bin] += 1;
        hits[bin] += usize::from(r.inferred);
    }
    Ok(std::array::from_fn(|b| hits[b] as f64 / counts[b] as f64))
}

/// Mean loss on fresh samples minus mean loss on the training samples.
pub fn generalization_error(
    model: &dyn Classifier,
    train: &[LabeledExample],
    fresh: &[LabeledExample],
) -> Result<f64> {
    Ok(nn::mean_loss(model, fresh)? - nn::mean_loss(model, train)?)
}

/// `1 - private / base`; negative when the private metric is better.
pub fn utility_loss(metric_base: f64, metric_private: f64) -> Result<f64> {
    if metric_base == 0.0 {
        return Err(Error::Domain("utility loss is undefined for a zero base metric".into()));
    }
    Ok(1.0 - metric_private / metric_base)
}

/// Trains a victim on `k` contiguous batches of `train` one after another,
/// then measures attack accuracy on each batch against the first `|B_i|`
/// records of `fresh`.
pub fn memorization_profile(
    spec: &ModelSpec,
    config: &TrainConfig,
    train: &[LabeledExample],
    k: usize,
    attack: &dyn MembershipInference,
    fresh: &[LabeledExample],
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::config("memorization.batches", "need at least two batches"));
    }
    let outcome = Trainer::new(spec, config)?
        .without_history()
        .schedule(Schedule::Sequential { batches: k })
        .run(train, &[])?;
    let victim = Model::new(spec.clone(), outcome.params)?;
    crate::data::split_batches(train, k)?
        .into_iter()
        .map(|batch| {
            if fresh.len() < batch.len() {
                return Err(Error::config("memorization.fresh", "not enough fresh records"));
            }
            let split = EvalSplit::new(batch.to_vec(), fresh[..batch.len()].to_vec())?;
            evaluate_attack(attack, &victim, &split)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityResult {
    pub iterations: usize,
    pub val_acc: f64,
    /// `|val_acc - target|`.
    pub gap: f64,
    pub matched: bool,
}

/// Picks the iteration count from `grid` whose validation accuracy is
/// closest to `target` (ties go to the smaller count). One training run up
/// to the largest grid value is observed at every grid point.
pub fn match_validation_accuracy(
    spec: &ModelSpec,
    config: &TrainConfig,
    train: &[LabeledExample],
    validation: &[LabeledExample],
    target: f64,
    grid: &[usize],
    tolerance: f64,
) -> Result<ParityResult> {
    let max_t = *grid
        .iter()
        .max()
        .ok_or_else(|| Error::config("parity.grid", "empty iteration grid"))?;
    let mut cfg = config.clone();
    cfg.iterations = max_t;
    let mut observed: Vec<(usize, Result<f64>)> = Vec::new();
    Trainer::new(spec, &cfg)?
        .without_history()
        .run_observed(train, &[], |step, params| {
            if grid.contains(&step) {
                let acc = Model::new(spec.clone(), params.clone())
                    .and_then(|m| nn::accuracy(&m, validation));
                observed.push((step, acc));
            }
        })?;
    let mut best: Option<ParityResult> = None;
    let mut points = observed;
    points.sort_by_key(|(t, _)| *t);
    for (t, acc) in points {
        let acc = acc?;
        let gap = (acc - target).abs();
        if best.as_ref().is_none_or(|b| gap < b.gap) {
            best = Some(ParityResult {
                iterations: t,
                val_acc: acc,
                gap,
                matched: gap < tolerance,
            });
        }
    }
    best.ok_or_else(|| Error::config("parity.grid", "no grid point was reached"))
}
