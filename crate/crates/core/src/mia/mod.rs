//! Black-box membership inference with shadow models.
//!
//! The attacker trains `k` shadow networks with the victim's recipe on data
//! from its own pool, queries each shadow on records it did and did not see,
//! and fits a binary classifier on `(confidence, one-hot label)` pairs. The
//! same classifier is then applied to the victim's outputs.

mod analysis;

pub use analysis::{
    entropy_loss_table, entropy_quartile_member_rates, evaluate_attack, generalization_error,
    match_validation_accuracy, memorization_profile, utility_loss, ParityResult, ScatterRow,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataSource;
use crate::error::{Error, Result};
use crate::nn::{Activation, Classifier, ConfidenceVector, Input, LabeledExample, Model, ModelSpec};
use crate::rng::{self, Stream};
use crate::trainer::{Schedule, TrainConfig, Trainer};

/// One attack training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub confidence: Vec<f64>,
    pub reference: Vec<f64>,
    pub member: bool,
}

fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

impl AttackRecord {
    pub fn new(confidence: &ConfidenceVector, label: usize, member: bool) -> Result<Self> {
        Self::from_steps(std::slice::from_ref(confidence), &[label], member)
    }

    /// Concatenates per-step outputs and their one-hot references.
    pub fn from_steps(steps: &[ConfidenceVector], labels: &[usize], member: bool) -> Result<Self> {
        if steps.len() != labels.len() || steps.is_empty() {
            return Err(Error::Shape {
                context: "attack record steps",
                expected: steps.len(),
                found: labels.len(),
            });
        }
        let mut confidence = Vec::new();
        let mut reference = Vec::new();
        for (c, &l) in steps.iter().zip(labels) {
            if l >= c.len() {
                return Err(Error::Shape {
                    context: "attack record label",
                    expected: c.len(),
                    found: l,
                });
            }
            confidence.extend_from_slice(c.as_slice());
            reference.extend(one_hot(l, c.len()));
        }
        Ok(AttackRecord {
            confidence,
            reference,
            member,
        })
    }

    /// `confidence ‖ reference`.
    pub fn features(&self) -> Vec<f64> {
        let mut f = self.confidence.clone();
        f.extend_from_slice(&self.reference);
        f
    }
}

/// Queries `model` on `data` and labels every output with `member`.
pub fn query_records(model: &dyn Classifier, data: &[LabeledExample], member: bool) -> Result<Vec<AttackRecord>> {
    data.iter()
        .map(|ex| AttackRecord::new(&model.query(&ex.features)?, ex.label, member))
        .collect()
}

/// How shadow in/out sets are carved from the attacker pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowPolicy {
    /// Every shadow's in-set and out-set are disjoint from all others.
    Disjoint,
    /// Each shadow reshuffles the whole pool; sets overlap across shadows.
    Resampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowModel {
    /// The released shadow network. Callers simulating a defended release
    /// may replace it (for example with a perturbed copy).
    pub model: Model,
    pub seed: u64,
    pub in_set: Vec<usize>,
    pub out_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSet {
    pub shadows: Vec<ShadowModel>,
    pub policy: ShadowPolicy,
}

/// Trains `k` shadows with in-sets of `shadow_size` pool records each.
/// Shadow `j` uses the victim's recipe with seed `derive(seed, "shadow", j)`.
/// Disjoint sets are used when `2 k shadow_size` records fit in the pool.
pub fn train_shadow_models(
    spec: &ModelSpec,
    config: &TrainConfig,
    pool: &[LabeledExample],
    k: usize,
    shadow_size: usize,
    seed: u64,
) -> Result<ShadowSet> {
    if k == 0 {
        return Err(Error::config("attack.shadows", "need at least one shadow model"));
    }
    if shadow_size == 0 || 2 * shadow_size > pool.len() {
        return Err(Error::config(
            "attack.shadow_size",
            format!("pool of {} records cannot hold in and out sets of {shadow_size}", pool.len()),
        ));
    }
    let policy = if 2 * k * shadow_size <= pool.len() {
        ShadowPolicy::Disjoint
    } else {
        ShadowPolicy::Resampled
    };
    let base_perm = Stream::keyed(seed, &[rng::label("shadow_split")]).permutation(pool.len());
    let shadows = (0..k)
        .into_par_iter()
        .map(|j| {
            let (in_set, out_set) = match policy {
                ShadowPolicy::Disjoint => {
                    let start = 2 * j * shadow_size;
                    (
                        base_perm[start..start + shadow_size].to_vec(),
                        base_perm[start + shadow_size..start + 2 * shadow_size].to_vec(),
                    )
                }
                ShadowPolicy::Resampled => {
                    let perm = Stream::keyed(seed, &[rng::label("shadow_split"), j as u64])
                        .permutation(pool.len());
                    (
                        perm[..shadow_size].to_vec(),
                        perm[shadow_size..2 * shadow_size].to_vec(),
                    )
                }
            };
            let shadow_seed = rng::derive(seed, &[rng::label("shadow"), j as u64]);
            let cfg = config.clone().with_seed(shadow_seed);
            let train: Vec<LabeledExample> = in_set.iter().map(|&i| pool[i].clone()).collect();
            let outcome = Trainer::new(spec, &cfg)?.without_history().run(&train, &[])?;
            Ok(ShadowModel {
                model: Model::new(spec.clone(), outcome.params)?,
                seed: shadow_seed,
                in_set,
                out_set,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShadowSet { shadows, policy })
}

/// Queries every shadow on its in-set (members) and out-set (non-members),
/// then subsamples the larger side so both flags have equal counts. Record
/// order is shadow by shadow, members first.
pub fn build_attack_dataset(
    shadows: &ShadowSet,
    pool: &[LabeledExample],
    seed: u64,
) -> Result<Vec<AttackRecord>> {
    let mut members = Vec::new();
    let mut others = Vec::new();
    for s in &shadows.shadows {
        let pick = |idx: &[usize]| idx.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>();
        members.extend(query_records(&s.model, &pick(&s.in_set), true)?);
        others.extend(query_records(&s.model, &pick(&s.out_set), false)?);
    }
    let target = members.len().min(others.len());
    let mut s = Stream::keyed(seed, &[rng::label("balance")]);
    let keep = |v: Vec<AttackRecord>, s: &mut Stream| {
        if v.len() == target {
            return v;
        }
        let mut idx = s.permutation(v.len());
        idx.truncate(target);
        idx.sort_unstable();
        idx.into_iter().map(|i| v[i].clone()).collect::<Vec<_>>()
    };
    let mut out = keep(members, &mut s);
    out.extend(keep(others, &mut s));
    Ok(out)
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_attack_lr() -> f64 {
    0.5
}

fn default_attack_iterations() -> usize {
    300
}

/// Attack network recipe. Without `minibatch_size` every step uses all
/// records, so the fit depends only on the empirical distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_attack_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_attack_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub minibatch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for AttackModelConfig {
    fn default() -> Self {
        AttackModelConfig {
            hidden: default_hidden(),
            learning_rate: default_attack_lr(),
            iterations: default_attack_iterations(),
            minibatch_size: None,
            seed: 0,
        }
    }
}

/// Feed-forward ReLU network over standardized `confidence ‖ reference`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackClassifier {
    pub model: Model,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl AttackClassifier {
    fn input(&self, record: &AttackRecord) -> Result<Input> {
        let f = record.features();
        if f.len() != self.mean.len() {
            return Err(Error::Shape {
                context: "attack features",
                expected: self.mean.len(),
                found: f.len(),
            });
        }
        Ok(Input::Vector(
            f.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(x, (m, s))| (x - m) / s)
                .collect(),
        ))
    }

    /// Probability that `record` comes from a member.
    pub fn member_probability(&self, record: &AttackRecord) -> Result<f64> {
        Ok(self.model.predict(&self.input(record)?)?.as_slice()[1])
    }
}

pub fn train_attack_classifier(records: &[AttackRecord], config: &AttackModelConfig) -> Result<AttackClassifier> {
    if records.is_empty() {
        return Err(Error::config("attack", "no attack records"));
    }
    let members = records.iter().filter(|r| r.member).count();
    if members == 0 || members == records.len() {
        return Err(Error::config("attack", "attack records contain a single class"));
    }
    let dim = records[0].confidence.len() + records[0].reference.len();
    let features: Vec<Vec<f64>> = records.iter().map(|r| r.features()).collect();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::Shape {
            context: "attack features",
            expected: dim,
            found: bad.len(),
        });
    }
    let n = records.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in &features {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for f in &features {
        for ((s, x), m) in scale.iter_mut().zip(f).zip(&mean) {
            *s += (x - m) * (x - m) / n;
        }
    }
    for s in scale.iter_mut() {
        *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
    }

    let mut dims = vec![dim];
    dims.extend(&config.hidden);
    dims.push(2);
    let spec = ModelSpec::feedforward(dims, Activation::Relu);
    let mut classifier = AttackClassifier {
        model: Model::new(spec.clone(), crate::nn::ParamVector::zeros(&spec))?,
        mean,
        scale,
    };
    let data = records
        .iter()
        .map(|r| Ok(LabeledExample::new(classifier.input(r)?, usize::from(r.member))))
        .collect::<Result<Vec<_>>>()?;
    let batch = config.minibatch_size.unwrap_or(data.len());
    let cfg = TrainConfig::plain(config.learning_rate, config.iterations, batch, config.seed);
    let outcome = Trainer::new(&spec, &cfg)?
        .without_history()
        .schedule(Schedule::Whole)
        .run(&data, &[])?;
    classifier.model.params = outcome.params;
    Ok(classifier)
}

/// Decides membership for attack records.
pub trait MembershipInference: Sync {
    /// `index` is the record's position in the evaluation batch; randomized
    /// baselines use it to stay deterministic.
    fn infer(&self, index: usize, record: &AttackRecord) -> Result<bool>;
}

impl MembershipInference for AttackClassifier {
    fn infer(&self, _index: usize, record: &AttackRecord) -> Result<bool> {
        Ok(self.member_probability(record)? > 0.5)
    }
}

/// Label-independent baseline.
#[derive(Debug, Clone, Copy)]
pub struct CoinFlip {
    pub seed: u64,
}

impl MembershipInference for CoinFlip {
    fn infer(&self, index: usize, _record: &AttackRecord) -> Result<bool> {
        Ok(Stream::keyed(self.seed, &[rng::label("coin"), index as u64]).bernoulli(0.5))
    }
}

/// Reads the ground-truth flag; accuracy 1 by construction.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth;

impl MembershipInference for GroundTruth {
    fn infer(&self, _index: usize, record: &AttackRecord) -> Result<bool> {
        Ok(record.member)
    }
}

/// Balanced member / non-member query set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    pub members: Vec<LabeledExample>,
    pub non_members: Vec<LabeledExample>,
}

impl EvalSplit {
    pub fn new(members: Vec<LabeledExample>, non_members: Vec<LabeledExample>) -> Result<Self> {
        let split = EvalSplit { members, non_members };
        split.check_balanced()?;
        Ok(split)
    }

    pub fn check_balanced(&self) -> Result<()> {
        if self.members.is_empty() || self.members.len() != self.non_members.len() {
            return Err(Error::Invariant(format!(
                "evaluation split must be balanced and non-empty: {} members, {} non-members",
                self.members.len(),
                self.non_members.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len() + self.non_members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Members first, then non-members, each with its flag.
    pub fn queries(&self) -> impl Iterator<Item = (&LabeledExample, bool)> {
        self.members
            .iter()
            .map(|e| (e, true))
            .chain(self.non_members.iter().map(|e| (e, false)))
    }
}

/// Index layout of one experiment's records from a single source draw.
///
/// Victim training records, the attacker pool, validation records and
/// fresh non-members occupy consecutive index ranges of the same keyed
/// stream, so they are disjoint by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSplit {
    pub victim_train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub attacker_pool: Vec<LabeledExample>,
    pub fresh: Vec<LabeledExample>,
}

impl AttackSplit {
    pub fn draw(
        source: &DataSource,
        key: u64,
        victim: usize,
        validation: usize,
        pool: usize,
        fresh: usize,
    ) -> Self {
        let take = |start: usize, n: usize| (start..start + n).map(|i| source.record(key, i)).collect();
        AttackSplit {
            victim_train: take(0, victim),
            validation: take(victim, validation),
            attacker_pool: take(victim + validation, pool),
            fresh: take(victim + validation + pool, fresh),
        }
    }

    /// The first `n` victim training records against the first `n` fresh
    /// records.
    pub fn eval_split(&self, n: usize) -> Result<EvalSplit> {
        if n > self.victim_train.len() || n > self.fresh.len() {
            return Err(Error::config(
                "attack.eval_size",
                format!(
                    "{n} exceeds the victim set ({}) or fresh set ({})",
                    self.victim_train.len(),
                    self.fresh.len()
                ),
            ));
        }
        EvalSplit::new(self.victim_train[..n].to_vec(), self.fresh[..n].to_vec())
    }
}
