//! Commands: dataset export, training, and the evaluation experiments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::checkpoint::{Checkpoint, CheckpointError};
use super::config::{ConfigError, RunConfig, Task};
use crate::environment::{export_dataset, generate_maps, mnist_task, Dataset, EnvError, MapSample};
use crate::tensor::Tape;
use crate::trainer::{evaluate, run_episode, CommMode, EpisodeOptions, Removal, Stage, ThetaBundle, TrainError, TrainReport, Trainer};
use crate::Real;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

/// Marks every report as a reduced-size reproduction.
pub const REPORT_SCALE: &str = "desk-scale";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Dataset named by the config; maps carry the configured clouds.
pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset, HarnessError> {
    let d = &cfg.data;
    Ok(match d.task {
        Task::Maps => generate_maps(
            cfg.seed,
            cfg.world.labels,
            d.train_samples,
            d.test_samples,
            cfg.world.height,
            cfg.world.width,
            cfg.world.clouds,
        ),
        Task::Digits => mnist_task(d.source.as_deref(), cfg.seed, d.train_samples, d.test_samples)?,
    })
}

pub fn cmd_dataset(cfg: &RunConfig) -> Result<Dataset, HarnessError> {
    cfg.validate()?;
    let ds = build_dataset(cfg)?;
    let dir = cfg.out.join("dataset");
    ensure_dir(&dir)?;
    export_dataset(&ds, &dir)?;
    Ok(ds)
}

pub fn new_trainer(cfg: &RunConfig) -> Result<Trainer<Real>, HarnessError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let bundle = ThetaBundle::new(cfg.model_dims(), cfg.world.max_degree, cfg.aggregation, &mut rng)?;
    Ok(Trainer::new(bundle, cfg.world.clone(), cfg.train.clone())?)
}

/// Artifacts of a training run.
pub struct TrainOutput {
    pub trainer: Trainer<Real>,
    pub report: TrainReport,
    pub checkpoint: PathBuf,
}

/// Trains all three stages and writes `checkpoint.bin`, `metrics.csv`
/// and `stages.txt` to the output directory. A checkpoint is also kept
/// at the end of every stage as `checkpoint_stage<k>.bin`.
///
/// With `resume`, parameters and progress come from that checkpoint and
/// only the stages after its recorded stage run.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutput, HarnessError> {
    use rand::SeedableRng;
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let ds = build_dataset(cfg)?;
    let (mut trainer, stages): (Trainer<Real>, Vec<Stage>) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let done = ck.stage;
            let trainer = ck.restore_trainer(cfg)?;
            (trainer, Stage::ALL.into_iter().filter(|&s| s > done).collect())
        }
        None => (new_trainer(cfg)?, Stage::ALL.to_vec()),
    };
    let mut report = TrainReport::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1 + trainer.epoch as u64));
    for stage in stages {
        trainer.train_stage(stage, &ds.train, &mut rng, cfg.seed, &mut report)?;
        Checkpoint::from_trainer(&trainer, cfg).save(&cfg.out.join(format!("checkpoint_stage{}.bin", stage.number())))?;
        write(&cfg.out.join("metrics.csv"), report.metrics_csv())?;
        write(&cfg.out.join("stages.txt"), report.stage_markers())?;
    }
    let checkpoint = cfg.out.join("checkpoint.bin");
    Checkpoint::from_trainer(&trainer, cfg).save(&checkpoint)?;
    Ok(TrainOutput {
        trainer,
        report,
        checkpoint,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedAccuracy {
    pub seed: u64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub mean_reward: f64,
    pub max_degree: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub scale: &'static str,
    pub config_hash: String,
    pub robots: usize,
    pub horizon: usize,
    pub comm: String,
    pub seed_count: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_seed: Vec<SeedAccuracy>,
}

/// Accuracy of `bundle` on the test split, one entry per evaluation seed.
pub fn eval_bundle(
    bundle: &ThetaBundle<Real>,
    cfg: &RunConfig,
    test: &[MapSample],
    comm: CommMode,
    removal: Option<Removal>,
) -> Result<EvalReport, HarnessError> {
    let mut opts = EpisodeOptions::new(Stage::Communication, comm);
    opts.removal = removal;
    let per_seed = (0..cfg.eval.seeds as u64)
        .map(|k| {
            let seed = cfg.seed.wrapping_mul(1000).wrapping_add(k);
            let o = evaluate(bundle, &cfg.world, test, &opts, cfg.eval.batch, seed)?;
            Ok(SeedAccuracy {
                seed,
                accuracy: o.accuracy(),
                correct: o.correct,
                total: o.total,
                mean_reward: o.mean_reward,
                max_degree: o.max_degree,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().map(|s| s.accuracy).sum::<f64>() / n;
    let var = per_seed.iter().map(|s| (s.accuracy - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalReport {
        scale: REPORT_SCALE,
        config_hash: cfg.hash(),
        robots: cfg.world.robots,
        horizon: cfg.world.horizon,
        comm: comm.to_string(),
        seed_count: per_seed.len(),
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
        per_seed,
    })
}

/// Loads a checkpoint and its parameters under `cfg`'s world. `cfg` may
/// change the deployment (robots, horizon, comm) but not the model.
pub fn load_bundle(checkpoint: &Path, cfg: &RunConfig) -> Result<ThetaBundle<Real>, HarnessError> {
    let ck = Checkpoint::load(checkpoint)?;
    Ok(ck.restore_bundle(cfg)?)
}

pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    let bundle = load_bundle(checkpoint, cfg)?;
    let ds = build_dataset(cfg)?;
    let report = eval_bundle(&bundle, cfg, &ds.test, cfg.eval.comm, None)?;
    ensure_dir(&cfg.out)?;
    write(&cfg.out.join("eval.json"), to_json(&report))?;
    dump_edge_lists(&bundle, cfg, &ds.test, &cfg.out.join("edges.txt"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalabilityReport {
    pub scale: &'static str,
    pub config_hash: String,
    pub comm: String,
    pub fusion_parameters: usize,
    pub rows: Vec<EvalReport>,
    /// Largest minus smallest mean accuracy over the robot counts.
    pub spread: f64,
}

/// Evaluates one bundle at several team sizes without retraining.
pub fn scalability(bundle: &ThetaBundle<Real>, cfg: &RunConfig, test: &[MapSample], comm: CommMode) -> Result<ScalabilityReport, HarnessError> {
    let mut rows = Vec::new();
    for &n in &cfg.eval.scalability_robots {
        let mut c = cfg.clone();
        c.world.robots = n;
        rows.push(eval_bundle(bundle, &c, test, comm, None)?);
    }
    let accs = rows.iter().map(|r| r.mean_accuracy);
    let spread = accs.clone().fold(f64::NEG_INFINITY, f64::max) - accs.fold(f64::INFINITY, f64::min);
    Ok(ScalabilityReport {
        scale: REPORT_SCALE,
        config_hash: cfg.hash(),
        comm: comm.to_string(),
        fusion_parameters: bundle.bank.param_count(&bundle.store),
        rows,
        spread,
    })
}

pub fn cmd_scalability(checkpoint: &Path, cfg: &RunConfig) -> Result<ScalabilityReport, HarnessError> {
    cfg.validate()?;
    let bundle = load_bundle(checkpoint, cfg)?;
    let ds = build_dataset(cfg)?;
    let report = scalability(&bundle, cfg, &ds.test, cfg.eval.comm)?;
    ensure_dir(&cfg.out)?;
    write(&cfg.out.join("scalability.json"), to_json(&report))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemovalRow {
    pub fraction: f64,
    pub removed_per_map: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub scale: &'static str,
    pub config_hash: String,
    pub robots: usize,
    pub removal_step: usize,
    pub rows: Vec<RemovalRow>,
}

/// Surviving-robot accuracy when robots are removed at the episode midpoint.
pub fn robustness(bundle: &ThetaBundle<Real>, cfg: &RunConfig, test: &[MapSample]) -> Result<RobustnessReport, HarnessError> {
    let mut c = cfg.clone();
    c.world.robots = cfg.eval.removal_robots;
    let step = c.world.horizon / 2;
    let rows = cfg
        .eval
        .removal_fractions
        .iter()
        .map(|&fraction| {
            let removal = (fraction > 0.0).then_some(Removal { step, fraction });
            Ok(RemovalRow {
                fraction,
                removed_per_map: (fraction * c.world.robots as f64).ceil() as usize,
                report: eval_bundle(bundle, &c, test, cfg.eval.comm, removal)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(RobustnessReport {
        scale: REPORT_SCALE,
        config_hash: cfg.hash(),
        robots: c.world.robots,
        removal_step: step,
        rows,
    })
}

pub fn cmd_robustness(checkpoint: &Path, cfg: &RunConfig) -> Result<RobustnessReport, HarnessError> {
    cfg.validate()?;
    let bundle = load_bundle(checkpoint, cfg)?;
    let ds = build_dataset(cfg)?;
    let report = robustness(&bundle, cfg, &ds.test)?;
    ensure_dir(&cfg.out)?;
    write(&cfg.out.join("robustness.json"), to_json(&report))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub robots: usize,
    /// Smallest horizon reaching the threshold; `None` when not reached.
    pub min_horizon: Option<usize>,
    /// `T × N`.
    pub robot_steps: Option<usize>,
    /// Accuracy at every horizon the search evaluated.
    pub probes: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub scale: &'static str,
    pub config_hash: String,
    pub threshold: f64,
    pub max_horizon: usize,
    pub rows: Vec<TimingRow>,
}

/// Binary search for the smallest horizon whose mean accuracy reaches the
/// threshold, per team size. Assumes accuracy is non-decreasing in the
/// horizon.
pub fn timing(bundle: &ThetaBundle<Real>, cfg: &RunConfig, test: &[MapSample]) -> Result<TimingReport, HarnessError> {
    let threshold = cfg.eval.timing_threshold;
    let t_max = cfg.eval.timing_max_horizon;
    let mut rows = Vec::new();
    for &n in &cfg.eval.timing_robots {
        let mut probes = Vec::new();
        let mut acc_at = |t: usize| -> Result<f64, HarnessError> {
            let mut c = cfg.clone();
            c.world.robots = n;
            c.world.horizon = t;
            let a = eval_bundle(bundle, &c, test, cfg.eval.comm, None)?.mean_accuracy;
            probes.push((t, a));
            Ok(a)
        };
        let min_horizon = if acc_at(t_max)? < threshold {
            None
        } else {
            let (mut lo, mut hi) = (1, t_max);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if acc_at(mid)? >= threshold {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            Some(lo)
        };
        probes.sort_by_key(|p| p.0);
        rows.push(TimingRow {
            robots: n,
            min_horizon,
            robot_steps: min_horizon.map(|t| t * n),
            probes,
        });
    }
    Ok(TimingReport {
        scale: REPORT_SCALE,
        config_hash: cfg.hash(),
        threshold,
        max_horizon: t_max,
        rows,
    })
}

pub fn cmd_timing(checkpoint: &Path, cfg: &RunConfig) -> Result<TimingReport, HarnessError> {
    cfg.validate()?;
    let bundle = load_bundle(checkpoint, cfg)?;
    let ds = build_dataset(cfg)?;
    let report = timing(&bundle, cfg, &ds.test)?;
    ensure_dir(&cfg.out)?;
    write(&cfg.out.join("timing.json"), to_json(&report))?;
    Ok(report)
}

/// Writes the graphs of one evaluation episode as `map t i j` lines.
pub fn dump_edge_lists(bundle: &ThetaBundle<Real>, cfg: &RunConfig, test: &[MapSample], path: &Path) -> Result<(), HarnessError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let maps: Vec<&MapSample> = test.iter().take(cfg.eval.batch).collect();
    let mut opts = EpisodeOptions::new(Stage::Communication, cfg.eval.comm);
    opts.record_graphs = true;
    let tape = Tape::new();
    let rollout = run_episode(&tape, bundle, &cfg.world, &maps, &opts, &mut rng)?;
    let mut out = String::from("# map t i j\n");
    for step in &rollout.result.graphs {
        for (map, g) in step.iter().enumerate() {
            for line in g.edge_list().lines() {
                out.push_str(&format!("{map} {line}\n"));
            }
        }
    }
    write(path, out)
}
