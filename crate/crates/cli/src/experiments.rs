//! Experiment pipelines behind the subcommands.
//!
//! Every random choice is keyed off the master seed through named
//! sub-seeds, and parallel work is collected in input order, so outputs do
//! not depend on the thread count.

use privaudit_core::accounting::{self, compose, dp_sgd_step_budget, rdp_confidence, PrivacyBudget};
use privaudit_core::data::{pad_examples, DataSource};
use privaudit_core::gpm::gpm_deploy;
use privaudit_core::mia::{
    self, build_attack_dataset, entropy_loss_table, train_attack_classifier, train_shadow_models,
    AttackClassifier, AttackSplit, ScatterRow, ShadowPolicy, ShadowSet,
};
use privaudit_core::nn::{self, LabeledExample, Model, ModelSpec};
use privaudit_core::rng::{derive, label};
use privaudit_core::sensitivity::{sample_sensitivity, SensitivityReport};
use privaudit_core::trainer::{EpochRecord, TrainConfig, TrainMode, Trainer};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AttackConfig, ExperimentConfig};
use crate::error::{CliError, Result};

/// Named sub-seeds of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub source: u64,
    pub split: u64,
    pub victim: u64,
    pub shadows: u64,
    pub attack: u64,
    pub balance: u64,
    pub release: u64,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        let s = |name: &str| derive(master, &[label(name)]);
        Seeds {
            source: s("source"),
            split: s("split"),
            victim: s("victim"),
            shadows: s("shadows"),
            attack: s("attack_model"),
            balance: s("balance"),
            release: s("release"),
        }
    }

    /// Repetition `r` of a sweep; repetition 0 is the plain run.
    pub fn repeat(master: u64, r: usize) -> Self {
        if r == 0 {
            Seeds::new(master)
        } else {
            Seeds::new(derive(master, &[label("repeat"), r as u64]))
        }
    }
}

/// Data and model for one run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub spec: ModelSpec,
    pub source: DataSource,
    pub split: AttackSplit,
}

pub fn setup(cfg: &ExperimentConfig, spec: ModelSpec, seeds: &Seeds) -> Result<Setup> {
    let source = DataSource::new(cfg.data()?.clone(), seeds.source).map_err(|e| CliError::run("data", e))?;
    spec.validate().map_err(|e| CliError::run("model", e))?;
    let s = &cfg.split;
    let mut split = AttackSplit::draw(&source, seeds.split, s.victim, s.validation, s.pool, s.fresh);
    if source.is_sequential() && !spec.is_recurrent() {
        let pad = |d: &mut Vec<LabeledExample>| *d = pad_examples(d, source.max_len(), source.feature_dim());
        pad(&mut split.victim_train);
        pad(&mut split.validation);
        pad(&mut split.attacker_pool);
        pad(&mut split.fresh);
    }
    let width = if source.is_sequential() && !spec.is_recurrent() {
        source.max_len() * source.feature_dim()
    } else {
        source.feature_dim()
    };
    if spec.input_dim() != width {
        return Err(CliError::schema(
            "model",
            format!("model input width {} does not match data width {width}", spec.input_dim()),
        ));
    }
    if !source.is_sequential() && spec.is_recurrent() {
        return Err(CliError::schema("model", "recurrent models need sequence data"));
    }
    if spec.num_classes() != source.num_classes() {
        return Err(CliError::schema(
            "model",
            format!("model has {} outputs, data has {} classes", spec.num_classes(), source.num_classes()),
        ));
    }
    Ok(Setup { spec, source, split })
}

/// How a trained network is released to queriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Release {
    Plain,
    /// One-shot parameter perturbation with this standard deviation.
    Perturbed(f64),
}

impl Release {
    pub fn apply(self, model: &Model, seed: u64) -> privaudit_core::Result<Model> {
        match self {
            Release::Plain => Ok(model.clone()),
            Release::Perturbed(sigma) => {
                Ok(gpm_deploy(&model.spec, &model.params, sigma, seed)?.perturbed().clone())
            }
        }
    }
}

/// Victim and shadows trained with one recipe.
#[derive(Debug, Clone)]
pub struct Trained {
    pub victim: Model,
    pub history: Vec<EpochRecord>,
    pub ledger: Vec<PrivacyBudget>,
    pub shadows: ShadowSet,
}

/// Trains the victim; per-epoch history is recorded only when `history`.
pub fn train_victim(
    setup: &Setup,
    train: &TrainConfig,
    seeds: &Seeds,
    history: bool,
) -> privaudit_core::Result<(Model, Vec<EpochRecord>, Vec<PrivacyBudget>)> {
    let cfg = train.clone().with_seed(seeds.victim);
    let mut trainer = Trainer::new(&setup.spec, &cfg)?;
    if !history {
        trainer = trainer.without_history();
    }
    let outcome = trainer.run(&setup.split.victim_train, &setup.split.validation)?;
    Ok((Model::new(setup.spec.clone(), outcome.params)?, outcome.history, outcome.ledger))
}

pub fn train_all(
    setup: &Setup,
    train: &TrainConfig,
    attack: &AttackConfig,
    seeds: &Seeds,
    history: bool,
) -> privaudit_core::Result<Trained> {
    let (victim, history, ledger) = train_victim(setup, train, seeds, history)?;
    let size = attack.shadow_size.unwrap_or(setup.split.victim_train.len());
    let shadows = train_shadow_models(
        &setup.spec,
        train,
        &setup.split.attacker_pool,
        attack.shadows,
        size,
        seeds.shadows,
    )?;
    Ok(Trained {
        victim,
        history,
        ledger,
        shadows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub attack_accuracy: f64,
    pub generalization_error: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub eval_queries: usize,
    pub attack_records: usize,
    pub shadows: usize,
    pub shadow_policy: ShadowPolicy,
}

#[derive(Debug, Clone)]
pub struct AttackRun {
    pub report: AttackReport,
    pub rows: Vec<ScatterRow>,
    pub classifier: AttackClassifier,
}

/// Releases the victim and every shadow the same way, fits the attack on
/// the released shadows and evaluates it on the released victim.
pub fn attack_released(
    setup: &Setup,
    trained: &Trained,
    release: Release,
    attack: &AttackConfig,
    eval_size: usize,
    seeds: &Seeds,
) -> privaudit_core::Result<AttackRun> {
    let victim = release.apply(&trained.victim, seeds.release)?;
    let mut shadows = trained.shadows.clone();
    for (j, s) in shadows.shadows.iter_mut().enumerate() {
        s.model = release.apply(&s.model, derive(seeds.release, &[label("shadow"), j as u64]))?;
    }
    let pool = &setup.split.attacker_pool;
    let records = build_attack_dataset(&shadows, pool, seeds.balance)?;
    let mut model_cfg = attack.model.clone();
    model_cfg.seed = seeds.attack;
    let classifier = train_attack_classifier(&records, &model_cfg)?;
    let eval = setup.split.eval_split(eval_size)?;
    let rows = entropy_loss_table(&victim, &classifier, &eval)?;
    let accuracy = rows.iter().filter(|r| r.correct).count() as f64 / rows.len() as f64;
    let train = &setup.split.victim_train;
    let val = &setup.split.validation;
    let report = AttackReport {
        attack_accuracy: accuracy,
        generalization_error: mia::generalization_error(&victim, train, val)?,
        train_acc: nn::accuracy(&victim, train)?,
        val_acc: nn::accuracy(&victim, val)?,
        train_loss: nn::mean_loss(&victim, train)?,
        val_loss: nn::mean_loss(&victim, val)?,
        eval_queries: rows.len(),
        attack_records: records.len(),
        shadows: shadows.shadows.len(),
        shadow_policy: shadows.policy,
    };
    Ok(AttackRun {
        report,
        rows,
        classifier,
    })
}

/// Full pipeline for one recipe and release.
pub fn attack_run(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    train: &TrainConfig,
    release: Release,
    seeds: &Seeds,
    history: bool,
) -> Result<(Trained, AttackRun)> {
    let setup = setup(cfg, spec.clone(), seeds)?;
    let trained = train_all(&setup, train, &cfg.attack, seeds, history).map_err(|e| CliError::run("victim", e))?;
    let run = attack_released(&setup, &trained, release, &cfg.attack, cfg.split.eval_size(), seeds)
        .map_err(|e| CliError::run("attack", e))?;
    Ok((trained, run))
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Grid with a leading zero anchor.
pub fn anchored(grid: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0];
    out.extend(grid.iter().copied().filter(|v| *v != 0.0));
    out
}

fn check_grid(grid: &[f64], field: &str) -> Result<()> {
    if let Some(bad) = grid.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(CliError::schema(field, format!("grid values must be finite and >= 0, got {bad}")));
    }
    Ok(())
}

fn check_repeats(cfg: &ExperimentConfig) -> Result<usize> {
    match cfg.sweep.repeats {
        0 => Err(CliError::schema("sweep.repeats", "must be at least 1")),
        r => Ok(r),
    }
}

/// One grid point of a defense sweep, for one repetition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub repeat: usize,
    pub utility_loss: f64,
    pub attack_accuracy: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub generalization_error: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
}

/// Median of every metric at each grid value, in grid order.
pub fn summarize(points: &[SweepPoint]) -> Vec<SweepPoint> {
    let mut values: Vec<f64> = Vec::new();
    for p in points {
        if !values.contains(&p.value) {
            values.push(p.value);
        }
    }
    values
        .into_iter()
        .map(|v| {
            let at: Vec<&SweepPoint> = points.iter().filter(|p| p.value == v).collect();
            let m = |f: fn(&SweepPoint) -> f64| median(&at.iter().map(|p| f(p)).collect::<Vec<_>>());
            let mo = |f: fn(&SweepPoint) -> Option<f64>| {
                let xs: Vec<f64> = at.iter().filter_map(|p| f(p)).collect();
                (!xs.is_empty()).then(|| median(&xs))
            };
            SweepPoint {
                value: v,
                repeat: at.len(),
                utility_loss: m(|p| p.utility_loss),
                attack_accuracy: m(|p| p.attack_accuracy),
                train_acc: m(|p| p.train_acc),
                val_acc: m(|p| p.val_acc),
                generalization_error: m(|p| p.generalization_error),
                epsilon: mo(|p| p.epsilon),
                delta: mo(|p| p.delta),
                gamma: mo(|p| p.gamma),
            }
        })
        .collect()
}

fn point(value: f64, repeat: usize, base_val: f64, r: &AttackReport) -> Result<SweepPoint> {
    Ok(SweepPoint {
        value,
        repeat,
        utility_loss: mia::utility_loss(base_val, r.val_acc).map_err(|e| CliError::run("utility", e))?,
        attack_accuracy: r.attack_accuracy,
        train_acc: r.train_acc,
        val_acc: r.val_acc,
        generalization_error: r.generalization_error,
        epsilon: None,
        delta: None,
        gamma: None,
    })
}

/// Total DP-SGD budget for `steps` releases at total failure probability
/// `delta`, split evenly across steps.
pub fn dp_sgd_total(noise_multiplier: f64, steps: usize, delta: f64) -> privaudit_core::Result<PrivacyBudget> {
    if steps == 0 {
        return PrivacyBudget::new(0.0, 0.0);
    }
    let step = dp_sgd_step_budget(noise_multiplier, delta / steps as f64)?;
    compose(steps, step)
}

/// DP-SGD sweep. The zero anchor trains with the configured recipe itself,
/// so it reproduces the undefended attack run; other points switch the
/// recipe to DP-SGD with the sweep's clip norm.
pub fn sweep_dpsgd(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    check_grid(&cfg.sweep.dp_sigmas, "sweep.dp_sigmas")?;
    let repeats = check_repeats(cfg)?;
    let base = cfg.train()?.clone();
    let spec = cfg.model()?;
    let grid = anchored(&cfg.sweep.dp_sigmas);
    let jobs: Vec<(usize, usize)> = (0..repeats).flat_map(|r| (0..grid.len()).map(move |i| (r, i))).collect();
    let reports = jobs
        .par_iter()
        .map(|&(r, i)| {
            let sigma = grid[i];
            let train = if sigma == 0.0 {
                base.clone()
            } else {
                base.clone().with_dp_sgd(cfg.sweep.clip_norm, sigma)
            };
            let seeds = Seeds::repeat(cfg.master_seed, r);
            let (trained, run) = attack_run(cfg, &spec, &train, Release::Plain, &seeds, false)
                .map_err(|e| tag(e, format!("sweep-dpsgd sigma={sigma} repeat={r}")))?;
            let steps = trained.ledger.len();
            Ok((r, sigma, run.report, steps))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (r, sigma, report, steps) in &reports {
        let base_val = reports
            .iter()
            .find(|(rr, s, _, _)| rr == r && *s == 0.0)
            .map(|(_, _, b, _)| b.val_acc)
            .expect("anchor present");
        let mut p = point(*sigma, *r, base_val, report)?;
        if *sigma == 0.0 {
            p.epsilon = Some(f64::INFINITY);
            p.delta = Some(cfg.sweep.delta);
        } else {
            let total = dp_sgd_total(*sigma, *steps, cfg.sweep.delta).map_err(|e| CliError::run("account", e))?;
            p.epsilon = Some(total.epsilon);
            p.delta = Some(total.delta);
        }
        points.push(p);
    }
    Ok(points)
}

/// Penalty sweep; `λ = 0` is bitwise the plain recipe.
pub fn sweep_l2(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    check_grid(&cfg.sweep.lambdas, "sweep.lambdas")?;
    let repeats = check_repeats(cfg)?;
    let base = cfg.train()?.clone();
    let spec = cfg.model()?;
    let grid = anchored(&cfg.sweep.lambdas);
    let jobs: Vec<(usize, usize)> = (0..repeats).flat_map(|r| (0..grid.len()).map(move |i| (r, i))).collect();
    let reports = jobs
        .par_iter()
        .map(|&(r, i)| {
            let lambda = grid[i];
            let train = if lambda == 0.0 {
                base.clone()
            } else {
                base.clone().with_l2(lambda, cfg.sweep.l2_target)
            };
            let seeds = Seeds::repeat(cfg.master_seed, r);
            let (_, run) = attack_run(cfg, &spec, &train, Release::Plain, &seeds, false)
                .map_err(|e| tag(e, format!("sweep-l2 lambda={lambda} repeat={r}")))?;
            Ok((r, lambda, run.report))
        })
        .collect::<Result<Vec<_>>>()?;
    reports
        .iter()
        .map(|(r, lambda, report)| {
            let base_val = reports
                .iter()
                .find(|(rr, l, _)| rr == r && *l == 0.0)
                .map(|(_, _, b)| b.val_acc)
                .expect("anchor present");
            point(*lambda, *r, base_val, report)
        })
        .collect()
}

/// Sensitivity of the configured recipe, audited on the experiment's source.
pub fn sensitivity_report(cfg: &ExperimentConfig, seeds: &Seeds) -> Result<SensitivityReport> {
    let spec = cfg.model()?;
    let train = match &cfg.sensitivity.train {
        Some(t) => t.clone(),
        None => cfg.train()?.clone(),
    }
    .with_seed(seeds.victim);
    let source = DataSource::new(cfg.data()?.clone(), seeds.source).map_err(|e| CliError::run("data", e))?;
    if source.is_sequential() && !spec.is_recurrent() {
        return Err(CliError::schema(
            "model",
            "sensitivity sampling of sequence data needs a recurrent model",
        ));
    }
    let big_n = cfg.sensitivity.big_n.unwrap_or(cfg.split.victim);
    sample_sensitivity(&spec, &train, &source, big_n, cfg.sensitivity.n)
        .map_err(|e| CliError::run("sensitivity", e))
}

/// Sampled sensitivity for certificates: the configured value, or the
/// sampler's estimate for the master seed.
pub fn certificate_sensitivity(cfg: &ExperimentConfig, s_bar: Option<f64>, n: Option<usize>) -> Result<(f64, usize)> {
    match s_bar {
        Some(s) => Ok((s, n.unwrap_or(cfg.sensitivity.n))),
        None => {
            let report = sensitivity_report(cfg, &Seeds::new(cfg.master_seed))?;
            Ok((report.s_bar, report.n))
        }
    }
}

/// Output-perturbation sweep. Each repetition trains once and perturbs the
/// same networks with every σ, reusing one draw direction per network.
pub fn sweep_gpm(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    check_grid(&cfg.sweep.gpm_sigmas, "sweep.gpm_sigmas")?;
    let repeats = check_repeats(cfg)?;
    let base = cfg.train()?.clone();
    let spec = cfg.model()?;
    let grid = anchored(&cfg.sweep.gpm_sigmas);
    let (s_bar, n) = certificate_sensitivity(cfg, cfg.sweep.s_bar, None)?;
    let gamma = rdp_confidence(n).map_err(|e| CliError::run("account", e))?.gamma;

    let trained = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let seeds = Seeds::repeat(cfg.master_seed, r);
            let setup = setup(cfg, spec.clone(), &seeds)?;
            let trained = train_all(&setup, &base, &cfg.attack, &seeds, false)
                .map_err(|e| CliError::run(format!("sweep-gpm repeat={r}"), e))?;
            Ok((seeds, setup, trained))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..repeats).flat_map(|r| (0..grid.len()).map(move |i| (r, i))).collect();
    let reports = jobs
        .par_iter()
        .map(|&(r, i)| {
            let (seeds, setup, t) = &trained[r];
            let sigma = grid[i];
            let release = if sigma == 0.0 { Release::Plain } else { Release::Perturbed(sigma) };
            attack_released(setup, t, release, &cfg.attack, cfg.split.eval_size(), seeds)
                .map(|run| (r, sigma, run.report))
                .map_err(|e| CliError::run(format!("sweep-gpm sigma={sigma} repeat={r}"), e))
        })
        .collect::<Result<Vec<_>>>()?;
    reports
        .iter()
        .map(|(r, sigma, report)| {
            let base_val = reports
                .iter()
                .find(|(rr, s, _)| rr == r && *s == 0.0)
                .map(|(_, _, b)| b.val_acc)
                .expect("anchor present");
            let mut p = point(*sigma, *r, base_val, report)?;
            p.delta = Some(cfg.sweep.delta);
            p.gamma = Some(gamma);
            p.epsilon = Some(if *sigma == 0.0 {
                if s_bar == 0.0 { 0.0 } else { f64::INFINITY }
            } else {
                privaudit_core::gpm::gpm_certificate(s_bar, n, *sigma, cfg.sweep.delta)
                    .map_err(|e| CliError::run("certificate", e))?
                    .epsilon
            });
            Ok(p)
        })
        .collect()
}

fn tag(e: CliError, run: String) -> CliError {
    match e {
        CliError::Run { source, .. } => CliError::Run { run, source },
        other => other,
    }
}

/// Per-batch attack accuracy after sequential training.
pub fn memorization(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let spec = cfg.model()?;
    let train = cfg.train()?.clone();
    let seeds = Seeds::new(cfg.master_seed);
    let setup = setup(cfg, spec.clone(), &seeds)?;
    let trained = train_all(&setup, &train, &cfg.attack, &seeds, false).map_err(|e| CliError::run("shadows", e))?;
    let run = attack_released(&setup, &trained, Release::Plain, &cfg.attack, cfg.split.eval_size(), &seeds)
        .map_err(|e| CliError::run("attack", e))?;
    mia::memorization_profile(
        &spec,
        &train.with_seed(seeds.victim),
        &setup.split.victim_train,
        cfg.memorization.batches,
        &run.classifier,
        &setup.split.fresh,
    )
    .map_err(|e| CliError::run("memorization", e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub architecture: &'static str,
    pub iterations: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub parity_gap: f64,
    pub matched: bool,
    pub attack_accuracy: f64,
    pub generalization_error: f64,
}

/// Feed-forward and recurrent victims on sequence data, the recurrent
/// iteration count tuned to match the feed-forward validation accuracy.
pub fn compare(cfg: &ExperimentConfig) -> Result<Vec<CompareRow>> {
    let data = cfg.data()?;
    let (vocab, classes, max_len) = match data {
        privaudit_core::data::SourceParams::SyntheticSequences {
            vocab, classes, max_len, ..
        } => (*vocab, *classes, *max_len),
        _ => return Err(CliError::schema("data", "compare needs synthetic_sequences data")),
    };
    let c = &cfg.compare;
    let mut dims = vec![vocab * max_len];
    dims.extend(&c.feedforward_hidden);
    dims.push(classes);
    let ff = ModelSpec::feedforward(dims, privaudit_core::nn::Activation::Tanh);
    let rnn = ModelSpec::recurrent(vocab, c.recurrent_hidden, classes);
    let train = cfg.train()?.clone();
    let seeds = Seeds::new(cfg.master_seed);

    let (_, ff_run) = attack_run(cfg, &ff, &train, Release::Plain, &seeds, false)?;
    let target = ff_run.report.val_acc;
    let rnn_setup = setup(cfg, rnn.clone(), &seeds)?;
    let grid = if c.parity_grid.is_empty() { vec![train.iterations] } else { c.parity_grid.clone() };
    let parity = mia::match_validation_accuracy(
        &rnn,
        &train.clone().with_seed(seeds.victim),
        &rnn_setup.split.victim_train,
        &rnn_setup.split.validation,
        target,
        &grid,
        c.tolerance,
    )
    .map_err(|e| CliError::run("parity", e))?;
    if !parity.matched {
        log::warn!(
            "recurrent validation accuracy {} misses {target} by {} (tolerance {})",
            parity.val_acc,
            parity.gap,
            c.tolerance
        );
    }
    let mut rnn_train = train.clone();
    rnn_train.iterations = parity.iterations;
    let (_, rnn_run) = attack_run(cfg, &rnn, &rnn_train, Release::Plain, &seeds, false)?;
    let row = |architecture, iterations, run: &AttackRun, gap, matched| CompareRow {
        architecture,
        iterations,
        train_acc: run.report.train_acc,
        val_acc: run.report.val_acc,
        parity_gap: gap,
        matched,
        attack_accuracy: run.report.attack_accuracy,
        generalization_error: run.report.generalization_error,
    };
    Ok(vec![
        row("feedforward", train.iterations, &ff_run, 0.0, true),
        row("recurrent", parity.iterations, &rnn_run, parity.gap, parity.matched),
    ])
}

/// Accounting rows for DP-SGD noise multipliers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountRow {
    pub noise_multiplier: f64,
    pub steps: usize,
    pub step_epsilon: f64,
    pub step_delta: f64,
    pub total_epsilon: f64,
    pub total_delta: f64,
    pub composition: &'static str,
}

pub fn account(cfg: &ExperimentConfig) -> Result<Vec<AccountRow>> {
    let a = &cfg.account;
    let steps = match (a.steps, &cfg.train) {
        (Some(s), _) => s,
        (None, Some(t)) => t.iterations,
        (None, None) => return Err(CliError::schema("account.steps", "set `steps` or a `train` section")),
    };
    let mut sigmas = a.noise_multipliers.clone();
    if sigmas.is_empty() {
        if let Some(t) = cfg.train.as_ref().filter(|t| t.mode == TrainMode::DpSgd) {
            sigmas.push(t.noise_multiplier);
        }
    }
    if !(a.delta > 0.0 && a.delta < 1.0) {
        return Err(CliError::schema("account.delta", "must be in (0, 1)"));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let step_delta = if steps == 0 { 0.0 } else { a.delta / steps as f64 };
            let step = if steps == 0 {
                PrivacyBudget::new(0.0, 0.0)
            } else {
                dp_sgd_step_budget(sigma, step_delta)
            }
            .map_err(|e| CliError::run("account", e))?;
            let total = compose(steps, step).map_err(|e| CliError::run("account", e))?;
            Ok(AccountRow {
                noise_multiplier: sigma,
                steps,
                step_epsilon: step.epsilon,
                step_delta: step.delta,
                total_epsilon: total.epsilon,
                total_delta: total.delta,
                composition: accounting::NAIVE_COMPOSITION,
            })
        })
        .collect()
}
