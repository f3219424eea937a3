//! The four subcommands. All artifacts are written atomically (temp file +
//! rename) and every run drops a fully materialized `run_config.ini` next to
//! its outputs.

use crate::config::{ObjectiveName, RunConfig};
use crate::svg;
use fwdguide_core::diffusion::NoiseSchedule;
use fwdguide_core::eval::{compute_metrics, make_moons, memory_bench};
use fwdguide_core::guidance::{run, GuessKind, GuidanceConfig, Objective, RunOutput, Strategy};
use fwdguide_core::model::{load_params, save_params, train, TrainConfig, TrainedModel};
use fwdguide_core::{Error as CoreError, MemMeter, RngState};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Command failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Usage or configuration problems: exit 2.
    Usage(String),
    /// Numeric failures (divergence, non-finite results): exit 3.
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn lift(e: CoreError) -> CliError {
    match e {
        CoreError::TrainingDiverged { .. } => CliError::Numeric(e.to_string()),
        other => CliError::Usage(other.to_string()),
    }
}

pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn write_atomic(path: &Path, content: &str) -> CliResult<()> {
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    std::fs::write(&tmp, content)
        .and_then(|()| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn prepare_out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    write_atomic(&dir.join("run_config.ini"), &cfg.to_text())?;
    Ok(dir)
}

fn schedule_of(cfg: &RunConfig) -> CliResult<NoiseSchedule> {
    NoiseSchedule::linear(cfg.schedule_steps, cfg.beta_start, cfg.beta_end).map_err(lift)
}

fn objective_of(cfg: &RunConfig) -> CliResult<Objective> {
    let obj = match cfg.objective_kind {
        ObjectiveName::Circle => Objective::Circle { target: cfg.circle_target },
        ObjectiveName::Masked => Objective::Masked {
            mask: cfg.mask.clone(),
            target: cfg.mask_target.clone(),
        },
    };
    obj.validate().map_err(lift)?;
    Ok(obj)
}

fn load_model(cfg: &RunConfig, dir: &Path) -> CliResult<TrainedModel> {
    let path = dir.join("model.ckpt");
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "checkpoint {} not found; run `fwdguide train` first",
            path.display()
        )));
    }
    let params = load_params(&path).map_err(lift)?;
    Ok(TrainedModel { params, schedule_steps: cfg.schedule_steps })
}

fn guidance_config(cfg: &RunConfig) -> GuidanceConfig {
    GuidanceConfig {
        strategy: cfg.strategy,
        guess: cfg.guess_kind(),
        lambda: cfg.lambda,
        stride: cfg.stride,
        outer: cfg.outer,
        seed: cfg.sample_seed,
    }
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    let s = schedule_of(cfg)?;
    let data = make_moons(cfg.data_points, cfg.noise_sigma, cfg.data_seed).map_err(lift)?;
    let tc = TrainConfig {
        steps: cfg.train_steps,
        batch: cfg.batch,
        lr: cfg.lr,
        seed: cfg.train_seed,
        log_every: cfg.log_every,
        time_freqs: cfg.time_freqs,
    };
    let (params, report) = train(&data, &s, &tc).map_err(lift)?;
    save_params(&params, &dir.join("model.ckpt")).map_err(lift)?;
    let mut csv = String::from("step,loss\n");
    for (step, loss) in &report.logged {
        let _ = writeln!(csv, "{step},{loss}");
    }
    write_atomic(&dir.join("train_loss.csv"), &csv)?;
    println!(
        "trained {} steps (seed {}): first-epoch loss {:.5}, final loss {:.5} -> {}",
        report.step_count,
        report.seed,
        report.epoch_mean_loss.first().copied().unwrap_or(f64::NAN),
        report.final_loss,
        dir.join("model.ckpt").display()
    );
    Ok(())
}

fn run_once(cfg: &RunConfig, model: &TrainedModel, obj: &Objective, strategy: Strategy, guess: GuessKind) -> CliResult<RunOutput> {
    let s = schedule_of(cfg)?;
    let gc = GuidanceConfig { strategy, guess, ..guidance_config(cfg) };
    let base = RngState::new(cfg.sample_seed);
    let meter = MemMeter::new();
    run(model, obj, &gc, cfg.sample_count, &base, &s, &meter).map_err(lift)
}

pub fn cmd_guide(cfg: &RunConfig) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    let model = load_model(cfg, &dir)?;
    let obj = objective_of(cfg)?;
    let out = run_once(cfg, &model, &obj, cfg.strategy, cfg.guess_kind())?;

    let mut samples_csv = String::from("x,y\n");
    for i in 0..out.samples.shape()[0] {
        let _ = writeln!(samples_csv, "{},{}", out.samples.get2(i, 0), out.samples.get2(i, 1));
    }
    write_atomic(&dir.join("samples.csv"), &samples_csv)?;

    let mut traj_csv = String::from("t,loss,h,update_norm\n");
    for d in &out.trajectory.steps {
        let _ = writeln!(traj_csv, "{},{},{},{}", d.t, d.loss, d.directional, d.update_norm);
    }
    write_atomic(&dir.join("trajectory.csv"), &traj_csv)?;

    let data = make_moons(cfg.data_points, cfg.noise_sigma, cfg.data_seed).map_err(lift)?;
    write_atomic(&dir.join("scatter.svg"), &svg::scatter(&data, &out.samples, cfg.circle_target))?;

    let update_tape: u64 = out.trajectory.steps.iter().map(|d| d.update_tape_scalars).sum();
    let guess_tape: u64 = out.trajectory.steps.iter().map(|d| d.guess_tape_scalars).sum();
    let fallbacks = out.trajectory.steps.iter().filter(|d| d.guess_fallback).count();
    println!(
        "guided {} samples with {}/{}: peak_scalars={} update_tape_scalars={} guess_tape_scalars={} fallbacks={} finite={}",
        cfg.sample_count,
        cfg.strategy.name(),
        cfg.guess_kind().name(),
        out.mem.max_peak(),
        update_tape,
        guess_tape,
        fallbacks,
        out.samples.all_finite()
    );
    if out.samples.all_finite() {
        Ok(())
    } else {
        Err(CliError::Numeric("guided samples are not finite".into()))
    }
}

/// The compared strategy set: both baselines and every guess variant.
pub fn compare_set(cfg: &RunConfig) -> [(Strategy, GuessKind); 6] {
    [
        (Strategy::Unguided, GuessKind::Random),
        (Strategy::Tweedie, GuessKind::Random),
        (Strategy::Direct, GuessKind::Random),
        (Strategy::Titan, GuessKind::Random),
        (Strategy::Titan, GuessKind::Score),
        (Strategy::Titan, GuessKind::Sampled { frames: cfg.frames }),
    ]
}

pub fn cmd_compare(cfg: &RunConfig) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    let model = load_model(cfg, &dir)?;
    let obj = objective_of(cfg)?;
    let data = make_moons(cfg.data_points, cfg.noise_sigma, cfg.data_seed).map_err(lift)?;

    let mut csv = String::from("strategy,guess,satisfaction,median_residual,energy_distance,dispersion,peak_scalars\n");
    let mut diverged = Vec::new();
    for (strategy, guess) in compare_set(cfg) {
        let out = run_once(cfg, &model, &obj, strategy, guess)?;
        if !out.samples.all_finite() {
            diverged.push(strategy.name());
        }
        let m = compute_metrics(&out.samples, &data, cfg.circle_target, cfg.tol);
        let guess_name = if strategy == Strategy::Titan { guess.name() } else { "-" };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            strategy.name(),
            guess_name,
            m.satisfaction_rate,
            m.median_abs_residual,
            m.energy_distance,
            m.dispersion,
            out.mem.max_peak()
        );
    }
    write_atomic(&dir.join("metrics.csv"), &csv)?;
    println!("compared 6 strategy variants -> {}", dir.join("metrics.csv").display());
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("non-finite samples from: {}", diverged.join(", "))))
    }
}

pub fn parse_depths(text: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad depth {p:?} in --depths")))
        })
        .collect()
}

pub fn cmd_membench(cfg: &RunConfig, depths: &[usize]) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    let model = load_model(cfg, &dir)?;
    let obj = objective_of(cfg)?;
    let s = schedule_of(cfg)?;
    for &d in depths {
        if d < 1 || d > cfg.schedule_steps {
            return Err(CliError::Usage(format!(
                "depth {d} out of range 1..={}",
                cfg.schedule_steps
            )));
        }
    }
    let strategies = [
        (Strategy::Unguided, GuessKind::Random),
        (Strategy::Tweedie, GuessKind::Random),
        (Strategy::Direct, GuessKind::Random),
        (Strategy::Titan, cfg.guess_kind()),
    ];
    let meter = MemMeter::new();
    let gc = guidance_config(cfg);
    let report = memory_bench(
        &model,
        &obj,
        depths,
        &strategies,
        cfg.sample_count,
        &s,
        &gc,
        cfg.sample_seed,
        &meter,
    )
    .map_err(lift)?;
    let mut csv = String::from("strategy,depth,peak_scalars,tape_scalars\n");
    for row in &report.rows {
        let _ = writeln!(csv, "{},{},{},{}", row.strategy.name(), row.depth, row.peak_scalars, row.tape_scalars);
    }
    write_atomic(&dir.join("membench.csv"), &csv)?;
    println!("memory bench over depths {depths:?} -> {}", dir.join("membench.csv").display());
    Ok(())
}
