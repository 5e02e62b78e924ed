//! Builds plants from configs, trains them and writes the run artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use analog_bptt::masking::MaskSet;
use analog_bptt::models::{make_acoustic_system, make_optical_system, make_tube_kernel, project_weights, NoiseModel};
use analog_bptt::serialize::{read_model, write_model};
use analog_bptt::tasks::Task;
use analog_bptt::training::{evaluate_metric, init_masks, train, TrainConfig, TrainState};
use analog_bptt::{seeded_rng, Error, SimRng, TrainingLog};
use anyhow::Context;
use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::config::{ExperimentConfig, PlantConfig};

/// A plant with initial masks and the fully resolved training settings.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub state: TrainState,
    pub task: Task,
    pub train: TrainConfig,
    pub eval_instances: usize,
    pub rng: SimRng,
}

/// Plant, initial parameters and training settings for a config. All
/// randomness comes from one stream seeded with `cfg.seed`.
pub fn build(cfg: &ExperimentConfig) -> anyhow::Result<Experiment> {
    let mut rng = seeded_rng(cfg.seed);
    let mut train_cfg = cfg.train.to_train_config(cfg.seed)?;
    let period = cfg.plant.period();
    let (system, preset_masks) = match &cfg.plant {
        PlantConfig::Acoustic { tube, snr_db, .. } => {
            let kernel = make_tube_kernel(tube)?.retimed(1.0)?;
            let plant = make_acoustic_system(&kernel, period)?;
            train_cfg.seconds_per_time_unit = 1.0 / tube.sample_rate;
            (plant.system.with_noise(snr_db.map(NoiseModel::new))?, None)
        }
        PlantConfig::Optical {
            optical,
            init_weight_std,
            ..
        } => {
            let n = optical.n_nodes;
            let mut w = vec![0.0; n * n];
            if *init_weight_std > 0.0 {
                let normal = Normal::new(0.0, *init_weight_std).context("initial weight distribution")?;
                w.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
            project_weights(&mut w, optical.weight_bound);
            train_cfg.kernel_lags = Some(vec![optical.delay_samples]);
            train_cfg.weight_bound = Some(optical.weight_bound);
            train_cfg.seconds_per_time_unit = optical.dt;
            (make_optical_system(optical, &w)?, None)
        }
        PlantConfig::Custom { path, .. } => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            read_model(file).with_context(|| format!("reading {}", path.display()))?
        }
    };
    let masks = match preset_masks {
        Some(m) => check_masks(m, &cfg.task, period)?,
        None => init_masks(&system, &cfg.task, period, &train_cfg, &mut rng)?,
    };
    Ok(Experiment {
        state: TrainState::new(system, masks),
        task: cfg.task,
        train: train_cfg,
        eval_instances: cfg.eval.instances,
        rng,
    })
}

fn check_masks(m: MaskSet, task: &Task, period: usize) -> anyhow::Result<MaskSet> {
    let (dx, dy) = task.dims();
    if m.period != period || m.dim_x != dx || m.dim_y != dy {
        anyhow::bail!(
            "masks in the model file map {}->{} over {} samples; config needs {dx}->{dy} over {period}",
            m.dim_x,
            m.dim_y,
            m.period
        );
    }
    Ok(m)
}

/// What a finished (or diverged) run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: TrainingLog,
    pub final_metric: Option<f64>,
    pub metric_name: &'static str,
    pub diverged: Option<String>,
}

/// Trains and evaluates without touching the filesystem.
pub fn execute(exp: &mut Experiment) -> anyhow::Result<RunOutcome> {
    let result = train(&mut exp.state, &exp.task, &exp.train, &mut exp.rng);
    let metric_name = exp.task.metric_name();
    match result {
        Ok(()) => {
            let m = evaluate_metric(
                &exp.state.system,
                &exp.state.masks,
                &exp.task,
                exp.eval_instances,
                &mut exp.rng as &mut dyn RngCore,
            )?;
            Ok(RunOutcome {
                log: exp.state.log.clone(),
                final_metric: Some(m),
                metric_name,
                diverged: None,
            })
        }
        Err(e @ Error::Divergence { .. }) => Ok(RunOutcome {
            log: exp.state.log.clone(),
            final_metric: None,
            metric_name,
            diverged: Some(e.to_string()),
        }),
        Err(e) => Err(e.into()),
    }
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// `log.csv`, `masks.csv`, `system.txt` and `summary.txt` under `out`.
pub fn write_artifacts(
    exp: &Experiment,
    outcome: &RunOutcome,
    cfg: &ExperimentConfig,
    out: &Path,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = create(out, "log.csv")?;
    outcome.log.write_csv(&mut w)?;
    w.flush()?;

    let mut w = create(out, "masks.csv")?;
    exp.state.masks.write_csv(&mut w, exp.state.system.dt())?;
    w.flush()?;

    let mut w = create(out, "system.txt")?;
    write_model(&mut w, &exp.state.system, Some(&exp.state.masks))?;
    writeln!(w)?;
    w.flush()?;

    let mut w = create(out, "summary.txt")?;
    match (outcome.final_metric, &outcome.diverged) {
        (Some(m), _) => writeln!(w, "final_metric={m}")?,
        (None, Some(reason)) => writeln!(w, "status=diverged\nreason={reason}")?,
        (None, None) => {}
    }
    writeln!(w, "metric={}", outcome.metric_name)?;
    writeln!(w, "chance_metric={}", exp.task.chance_level())?;
    writeln!(w, "iterations={}", outcome.log.len())?;
    if let Some(last) = outcome.log.records.last() {
        writeln!(w, "final_train_cost={}", last.cost)?;
    }
    writeln!(w, "seed={}", cfg.seed)?;
    w.flush()?;
    Ok(())
}
