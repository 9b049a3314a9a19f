//! Experiment runner: reads a JSON config, runs one experiment and writes
//! CSV/JSON artifacts.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::io::Write;
use std::path::{Path, PathBuf};

use privaudit_core::data::{read_dataset_csv, write_dataset_csv};
use privaudit_core::gpm::{gpm_certificate, gpm_deploy};
use privaudit_core::mia::entropy_quartile_member_rates;
use privaudit_core::nn::snapshot::{read_snapshot, write_snapshot};
use privaudit_core::nn::{self, Input, Model};
use privaudit_core::trainer::{write_history_csv, TrainMode};
use serde::Serialize;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, Result};
use experiments::{Release, Seeds, SweepPoint};
use output::{finish, num, opt_num, CsvOut, OutputDir, Provenance};

/// Environment variable overriding the config's output directory.
pub const OUT_ENV: &str = "PRIVAUDIT_OUT";

/// `--out`, then `PRIVAUDIT_OUT`, then `output_dir`, then `./out`.
pub fn resolve_output_dir(flag: Option<&Path>, env: Option<&str>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Runs `kind` and writes its artifacts into `dir`; returns the written paths.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    if let Some(declared) = cfg.experiment {
        if declared != kind {
            return Err(CliError::schema(
                "experiment",
                format!("config declares `{}` but `{}` was requested", declared.name(), kind.name()),
            ));
        }
    }
    let mut out = OutputDir::create(dir, Provenance::new(cfg.hash(), cfg.master_seed))?;
    match kind {
        ExperimentKind::Data => data(cfg, &mut out)?,
        ExperimentKind::Train => train(cfg, &mut out)?,
        ExperimentKind::Attack => attack(cfg, &mut out, false)?,
        ExperimentKind::Scatter => attack(cfg, &mut out, true)?,
        ExperimentKind::Sensitivity => sensitivity(cfg, &mut out)?,
        ExperimentKind::Gpm => gpm(cfg, &mut out)?,
        ExperimentKind::Account => account(cfg, &mut out)?,
        ExperimentKind::SweepDpsgd => {
            let points = experiments::sweep_dpsgd(cfg)?;
            write_sweep(&mut out, "sweep_dpsgd", "sigma", &points, true)?;
        }
        ExperimentKind::SweepGpm => {
            let points = experiments::sweep_gpm(cfg)?;
            write_sweep(&mut out, "sweep_gpm", "sigma", &points, true)?;
        }
        ExperimentKind::SweepL2 => {
            let points = experiments::sweep_l2(cfg)?;
            write_sweep(&mut out, "sweep_l2", "lambda", &points, false)?;
        }
        ExperimentKind::Memorization => memorization(cfg, &mut out)?,
        ExperimentKind::Compare => compare(cfg, &mut out)?,
    }
    Ok(out.written().to_vec())
}

fn row<I, S>(w: &mut CsvOut, fields: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(fields).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io("writing csv", io),
        other => CliError::io("writing csv", std::io::Error::other(format!("{other:?}"))),
    })
}

fn io_err(name: &str) -> impl Fn(privaudit_core::Error) -> CliError + '_ {
    move |e| CliError::run(format!("writing {name}"), e)
}

fn data(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let seeds = Seeds::new(cfg.master_seed);
    let setup = experiments::setup(cfg, cfg.model()?, &seeds)?;
    let s = &setup.split;
    for (name, set) in [
        ("victim_train.csv", &s.victim_train),
        ("validation.csv", &s.validation),
        ("attacker_pool.csv", &s.attacker_pool),
        ("fresh.csv", &s.fresh),
    ] {
        let mut w = out.csv_raw(name)?;
        write_dataset_csv(&mut w, set).map_err(io_err(name))?;
        w.flush().map_err(|e| CliError::io(name, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    train_acc: f64,
    val_acc: f64,
    train_loss: f64,
    val_loss: f64,
    generalization_error: f64,
    steps: usize,
    epsilon: Option<f64>,
    delta: Option<f64>,
    composition: Option<&'static str>,
}

fn train(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let seeds = Seeds::new(cfg.master_seed);
    let train = cfg.train()?;
    let setup = experiments::setup(cfg, cfg.model()?, &seeds)?;
    let (model, history, ledger) =
        experiments::train_victim(&setup, train, &seeds, true).map_err(|e| CliError::run("train", e))?;
    let mut w = out.csv_raw("history.csv")?;
    write_history_csv(&mut w, &history).map_err(io_err("history.csv"))?;
    let mut b = out.binary("model.paud")?;
    write_snapshot(&mut b, &model).map_err(io_err("model.paud"))?;
    b.flush().map_err(|e| CliError::io("model.paud", e))?;

    let (tr, va) = (&setup.split.victim_train, &setup.split.validation);
    let m = |r: privaudit_core::Result<f64>| r.map_err(|e| CliError::run("evaluate", e));
    let total = if train.mode == TrainMode::DpSgd {
        Some(
            experiments::dp_sgd_total(train.noise_multiplier, ledger.len(), cfg.sweep.delta)
                .map_err(|e| CliError::run("account", e))?,
        )
    } else {
        None
    };
    let report = TrainReport {
        train_acc: m(nn::accuracy(&model, tr))?,
        val_acc: m(nn::accuracy(&model, va))?,
        train_loss: m(nn::mean_loss(&model, tr))?,
        val_loss: m(nn::mean_loss(&model, va))?,
        generalization_error: m(privaudit_core::mia::generalization_error(&model, tr, va))?,
        steps: train.iterations,
        epsilon: total.map(|t| t.epsilon),
        delta: total.map(|t| t.delta),
        composition: total.map(|_| privaudit_core::accounting::NAIVE_COMPOSITION),
    };
    out.json("train_report.json", &report)
}

fn write_scatter(out: &mut OutputDir, rows: &[privaudit_core::mia::ScatterRow]) -> Result<()> {
    let mut w = out.csv("scatter.csv")?;
    row(&mut w, ["entropy", "loss", "member", "inferred", "correct"])?;
    for r in rows {
        row(
            &mut w,
            [
                num(r.entropy),
                num(r.loss),
                r.member.to_string(),
                r.inferred.to_string(),
                r.correct.to_string(),
            ],
        )?;
    }
    finish(w, "scatter.csv")
}

fn attack(cfg: &ExperimentConfig, out: &mut OutputDir, quartiles: bool) -> Result<()> {
    let seeds = Seeds::new(cfg.master_seed);
    let (trained, run) = experiments::attack_run(cfg, &cfg.model()?, cfg.train()?, Release::Plain, &seeds, true)?;
    out.json("attack_report.json", &run.report)?;
    write_scatter(out, &run.rows)?;
    let mut w = out.csv_raw("history.csv")?;
    write_history_csv(&mut w, &trained.history).map_err(io_err("history.csv"))?;
    if quartiles {
        let rates = entropy_quartile_member_rates(&run.rows).map_err(|e| CliError::run("scatter", e))?;
        let mut w = out.csv("quartiles.csv")?;
        row(&mut w, ["quartile", "member_rate"])?;
        for (q, r) in rates.iter().enumerate() {
            row(&mut w, [(q + 1).to_string(), num(*r)])?;
        }
        finish(w, "quartiles.csv")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SensitivitySummary {
    n: usize,
    #[serde(rename = "N")]
    big_n: usize,
    #[serde(rename = "S_bar")]
    s_bar: f64,
    gamma: f64,
    rho: f64,
    lipschitz_estimate: f64,
    analytic_bound: Option<f64>,
    trainer_fingerprint: String,
    source_fingerprint: String,
}

fn sensitivity(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let report = experiments::sensitivity_report(cfg, &Seeds::new(cfg.master_seed))?;
    let mut w = out.csv("sensitivity.csv")?;
    row(&mut w, ["sample_index", "distance"])?;
    for (i, d) in report.distances.iter().enumerate() {
        row(&mut w, [i.to_string(), num(*d)])?;
    }
    finish(w, "sensitivity.csv")?;
    let conf = privaudit_core::accounting::rdp_confidence(report.n).map_err(|e| CliError::run("account", e))?;
    let train = cfg.sensitivity.train.as_ref().map_or_else(|| cfg.train(), Ok)?;
    let analytic_bound = match (train.mode, train.smoothing_std, train.clip_norm) {
        (TrainMode::SmoothedClipped, Some(s), Some(c)) => Some(
            privaudit_core::accounting::sensitivity_bound(
                train.learning_rate,
                report.smoothness_estimate(s),
                train.iterations,
                train.minibatch_size.min(report.big_n),
                c,
            )
            .map_err(|e| CliError::run("bound", e))?,
        ),
        _ => None,
    };
    out.json(
        "sensitivity_summary.json",
        &SensitivitySummary {
            n: report.n,
            big_n: report.big_n,
            s_bar: report.s_bar,
            gamma: conf.gamma,
            rho: conf.rho,
            lipschitz_estimate: report.lipschitz_estimate,
            analytic_bound,
            trainer_fingerprint: report.trainer_fingerprint,
            source_fingerprint: report.source_fingerprint,
        },
    )
}

fn gpm(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let g = &cfg.gpm;
    let seeds = Seeds::new(cfg.master_seed);
    let model: Model = match &g.snapshot {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
            read_snapshot(std::io::BufReader::new(f)).map_err(|e| CliError::run("snapshot", e))?
        }
        None => {
            let setup = experiments::setup(cfg, cfg.model()?, &seeds)?;
            experiments::train_victim(&setup, cfg.train()?, &seeds, false)
                .map_err(|e| CliError::run("train", e))?
                .0
        }
    };
    let queries: Vec<Input> = match &g.queries {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
            read_dataset_csv(std::io::BufReader::new(f))
                .map_err(|e| CliError::run("queries", e))?
                .into_iter()
                .map(|e| e.features)
                .collect()
        }
        None => experiments::setup(cfg, model.spec.clone(), &seeds)?
            .split
            .validation
            .into_iter()
            .map(|e| e.features)
            .collect(),
    };
    let (s_bar, n) = experiments::certificate_sensitivity(cfg, g.s_bar, g.n)?;
    let certificate = gpm_certificate(s_bar, n, g.sigma, g.delta).map_err(|e| CliError::run("certificate", e))?;
    let deployment = gpm_deploy(&model.spec, &model.params, g.sigma, seeds.release)
        .map_err(|e| CliError::run("deploy", e))?
        .with_certificate(certificate);
    log::info!("each deployment is one release; deployments with different seeds compose");
    let responses = deployment.respond(&queries).map_err(|e| CliError::run("respond", e))?;
    let mut w = out.csv("responses.csv")?;
    let classes = model.spec.num_classes();
    let mut header = vec!["query".to_string()];
    header.extend((0..classes).map(|c| format!("p{c}")));
    row(&mut w, &header)?;
    for (i, r) in responses.iter().enumerate() {
        let mut fields = vec![i.to_string()];
        fields.extend(r.as_slice().iter().map(|p| num(*p)));
        row(&mut w, &fields)?;
    }
    finish(w, "responses.csv")?;
    out.json("certificate.json", deployment.certificate().expect("attached"))
}

fn account(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let rows = experiments::account(cfg)?;
    let mut w = out.csv("account.csv")?;
    row(
        &mut w,
        ["noise_multiplier", "steps", "step_epsilon", "step_delta", "total_epsilon", "total_delta", "composition"],
    )?;
    for r in &rows {
        row(
            &mut w,
            [
                num(r.noise_multiplier),
                r.steps.to_string(),
                num(r.step_epsilon),
                num(r.step_delta),
                num(r.total_epsilon),
                num(r.total_delta),
                r.composition.to_string(),
            ],
        )?;
    }
    finish(w, "account.csv")?;
    let mut w = out.csv("confidence.csv")?;
    row(&mut w, ["n", "rho", "gamma"])?;
    for &n in &cfg.account.confidence_samples {
        let c = privaudit_core::accounting::rdp_confidence(n)
            .map_err(|_| CliError::schema("account.confidence_samples", "sample counts must be >= 1"))?;
        row(&mut w, [n.to_string(), num(c.rho), num(c.gamma)])?;
    }
    finish(w, "confidence.csv")
}

fn write_sweep(
    out: &mut OutputDir,
    stem: &str,
    column: &str,
    points: &[SweepPoint],
    privacy: bool,
) -> Result<()> {
    let header = |w: &mut CsvOut, repeat_col: &str| -> Result<()> {
        let mut h = vec![column, "utility_loss"];
        if privacy {
            h.extend(["epsilon", "delta", "gamma"]);
        }
        h.extend(["attack_accuracy", "train_acc", "val_acc", "generalization_error", repeat_col]);
        row(w, h)
    };
    let line = |w: &mut CsvOut, p: &SweepPoint| -> Result<()> {
        let mut f = vec![num(p.value), num(p.utility_loss)];
        if privacy {
            f.extend([opt_num(p.epsilon), opt_num(p.delta), opt_num(p.gamma)]);
        }
        f.extend([
            num(p.attack_accuracy),
            num(p.train_acc),
            num(p.val_acc),
            num(p.generalization_error),
            p.repeat.to_string(),
        ]);
        row(w, f)
    };
    let name = format!("{stem}.csv");
    let mut w = out.csv(&name)?;
    header(&mut w, "repeats")?;
    for p in experiments::summarize(points) {
        line(&mut w, &p)?;
    }
    finish(w, &name)?;
    let name = format!("{stem}_runs.csv");
    let mut w = out.csv(&name)?;
    header(&mut w, "repeat")?;
    for p in points {
        line(&mut w, p)?;
    }
    finish(w, &name)
}

fn memorization(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let profile = experiments::memorization(cfg)?;
    let mut w = out.csv("memorization.csv")?;
    row(&mut w, ["batch", "attack_accuracy"])?;
    for (i, a) in profile.iter().enumerate() {
        row(&mut w, [(i + 1).to_string(), num(*a)])?;
    }
    finish(w, "memorization.csv")
}

fn compare(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let rows = experiments::compare(cfg)?;
    let mut w = out.csv("compare.csv")?;
    row(
        &mut w,
        ["architecture", "iterations", "train_acc", "val_acc", "parity_gap", "matched", "attack_accuracy", "generalization_error"],
    )?;
    for r in &rows {
        row(
            &mut w,
            [
                r.architecture.to_string(),
                r.iterations.to_string(),
                num(r.train_acc),
                num(r.val_acc),
                num(r.parity_gap),
                r.matched.to_string(),
                num(r.attack_accuracy),
                num(r.generalization_error),
            ],
        )?;
    }
    finish(w, "compare.csv")
}
