//! Run configuration as sectioned `key = value` text.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::environment::{CloudSettings, WorldConfig, DIGIT_SIDE};
use crate::fusion::Aggregation;
use crate::perception::ModelDims;
use crate::tensor::AdamConfig;
use crate::trainer::{CommMode, TrainSettings};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("[{section}] {key}: {message}")]
    Value {
        section: String,
        key: String,
        message: String,
    },
    #[error("[{section}] unknown key `{key}`")]
    UnknownKey { section: String, key: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Which dataset the run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Procedural three-channel maps.
    Maps,
    /// Ten-class 28×28 digits.
    Digits,
}

impl Task {
    fn as_str(self) -> &'static str {
        match self {
            Task::Maps => "maps",
            Task::Digits => "digits",
        }
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "maps" => Ok(Task::Maps),
            "digits" => Ok(Task::Digits),
            other => Err(format!("unknown task `{other}` (maps|digits)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub task: Task,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Directory with IDX digit files; synthetic glyphs when absent.
    pub source: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub seeds: usize,
    /// Maps per evaluation episode.
    pub batch: usize,
    pub comm: CommMode,
    pub scalability_robots: Vec<usize>,
    pub removal_robots: usize,
    pub removal_fractions: Vec<f64>,
    pub timing_robots: Vec<usize>,
    pub timing_threshold: f64,
    pub timing_max_horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            batch: 50,
            comm: CommMode::Sparse,
            scalability_robots: vec![5, 10, 20],
            removal_robots: 20,
            removal_fractions: vec![0.0, 0.25, 0.5, 0.75],
            timing_robots: vec![1, 2, 4, 8],
            timing_threshold: 0.6,
            timing_max_horizon: 40,
        }
    }
}

/// Everything a command needs, in one place.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub world: WorldConfig,
    /// Classification feature size `a`.
    pub feature: usize,
    /// Goal feature size `b`.
    pub goal_feature: usize,
    pub goal_grid: usize,
    pub aggregation: Aggregation,
    pub train: TrainSettings,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub experiment: String,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// 128×128 procedural maps with 16×16 windows.
    pub fn desk() -> Self {
        Self {
            world: WorldConfig {
                clouds: Some(CloudSettings { count: 80, coverage: 0.4 }),
                ..WorldConfig::default()
            },
            feature: 24,
            goal_feature: 8,
            goal_grid: 8,
            aggregation: Aggregation::Pooled,
            train: TrainSettings::default(),
            data: DataConfig {
                task: Task::Maps,
                train_samples: 600,
                test_samples: 120,
                source: None,
            },
            eval: EvalConfig::default(),
            experiment: "train".into(),
            out: PathBuf::from("runs/desk"),
            seed: 0,
        }
    }

    /// 28×28 digits with 4×4 windows.
    pub fn digits() -> Self {
        let mut cfg = Self::desk();
        cfg.world = WorldConfig {
            height: DIGIT_SIDE,
            width: DIGIT_SIDE,
            window: 4,
            comm_range: 13.0,
            robots: 5,
            horizon: 15,
            max_degree: 4,
            goal_hold: 3,
            step_size: 4.0,
            labels: 10,
            seed: 0,
            clouds: None,
        };
        cfg.goal_grid = 4;
        cfg.train = TrainSettings {
            adam: AdamConfig { lr: 3e-3, ..cfg.train.adam },
            batches_per_epoch: 10,
            patience: 150,
            stage_epochs: [600, 300, 300],
            ..cfg.train
        };
        cfg.eval.timing_threshold = 0.7;
        cfg.eval.timing_max_horizon = 80;
        cfg.data = DataConfig {
            task: Task::Digits,
            train_samples: 2000,
            test_samples: 500,
            source: None,
        };
        cfg.out = PathBuf::from("runs/digits");
        cfg
    }

    pub fn channels(&self) -> usize {
        match self.data.task {
            Task::Maps => 3,
            Task::Digits => 1,
        }
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            channels: self.channels(),
            window: self.world.window,
            feature: self.feature,
            goal_feature: self.goal_feature,
            labels: self.world.labels,
            goal_grid: self.goal_grid,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.world.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.feature == 0 || self.goal_feature == 0 || self.goal_grid == 0 {
            return bad("model: feature, goal_feature and goal_grid must be positive");
        }
        if self.data.task == Task::Digits
            && (self.world.height != DIGIT_SIDE || self.world.width != DIGIT_SIDE || self.world.labels != 10)
        {
            return bad("digits task needs a 28x28 world with 10 labels");
        }
        if self.data.train_samples == 0 || self.data.test_samples == 0 {
            return bad("data: sample counts must be positive");
        }
        if self.train.batch == 0 || self.train.batches_per_epoch == 0 {
            return bad("train: batch and batches_per_epoch must be positive");
        }
        if !(self.train.adam.lr > 0.0) {
            return bad("train: lr must be positive");
        }
        if self.eval.seeds == 0 || self.eval.batch == 0 {
            return bad("eval: seeds and batch must be positive");
        }
        if !(0.0..=1.0).contains(&self.eval.timing_threshold) {
            return bad("eval: timing_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// Canonical text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let w = &self.world;
        let t = &self.train;
        let e = &self.eval;
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let flist = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let (clouds, coverage) = w.clouds.map_or((0, 0.4), |c| (c.count, c.coverage));
        let _ = write!(
            s,
            "[run]\nexperiment = {}\nout = {}\nseed = {}\n\n\
             [world]\nheight = {}\nwidth = {}\nwindow = {}\ncomm_range = {}\nrobots = {}\nhorizon = {}\n\
             max_degree = {}\ngoal_hold = {}\nstep_size = {}\nlabels = {}\nclouds = {}\ncloud_coverage = {}\n\n\
             [model]\nfeature = {}\ngoal_feature = {}\ngoal_grid = {}\nfusion = {}\n\n\
             [train]\nlr = {}\nbeta1 = {}\nbeta2 = {}\nepsilon = {}\nbatch = {}\nbatches_per_epoch = {}\n\
             patience = {}\nmin_improvement = {}\nstage1_epochs = {}\nstage2_epochs = {}\nstage3_epochs = {}\n\
             comm = {}\nbaseline_decay = {}\n\n\
             [data]\ntask = {}\ntrain_samples = {}\ntest_samples = {}\nsource = {}\n\n\
             [eval]\nseeds = {}\nbatch = {}\ncomm = {}\nscalability_robots = {}\nremoval_robots = {}\n\
             removal_fractions = {}\ntiming_robots = {}\ntiming_threshold = {}\ntiming_max_horizon = {}\n",
            self.experiment,
            self.out.display(),
            self.seed,
            w.height,
            w.width,
            w.window,
            w.comm_range,
            w.robots,
            w.horizon,
            w.max_degree,
            w.goal_hold,
            w.step_size,
            w.labels,
            clouds,
            coverage,
            self.feature,
            self.goal_feature,
            self.goal_grid,
            self.aggregation,
            t.adam.lr,
            t.adam.beta1,
            t.adam.beta2,
            t.adam.epsilon,
            t.batch,
            t.batches_per_epoch,
            t.patience,
            t.min_improvement,
            t.stage_epochs[0],
            t.stage_epochs[1],
            t.stage_epochs[2],
            t.comm,
            t.baseline_decay,
            self.data.task.as_str(),
            self.data.train_samples,
            self.data.test_samples,
            self.data.source.as_ref().map_or(String::new(), |p| p.display().to_string()),
            e.seeds,
            e.batch,
            e.comm,
            list(&e.scalability_robots),
            e.removal_robots,
            flist(&e.removal_fractions),
            list(&e.timing_robots),
            e.timing_threshold,
            e.timing_max_horizon,
        );
        s
    }

    /// Parses config text on top of the preset named by `[data] task`
    /// (desk maps when absent). Missing keys keep the preset value.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<(usize, String, String, String)> = Vec::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            if section.is_empty() {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    message: "key outside of a section".into(),
                });
            }
            entries.push((n + 1, section.clone(), k.trim().to_string(), v.trim().to_string()));
        }
        let task = entries
            .iter()
            .find(|(_, s, k, _)| s == "data" && k == "task")
            .map(|(_, s, k, v)| v.parse::<Task>().map_err(|m| value_err(s, k, m)))
            .transpose()?
            .unwrap_or(Task::Maps);
        let mut cfg = match task {
            Task::Maps => Self::desk(),
            Task::Digits => Self::digits(),
        };
        let mut clouds = cfg.world.clouds.map_or(0, |c| c.count);
        let mut coverage = cfg.world.clouds.map_or(0.4, |c| c.coverage);
        for (_, section, key, value) in &entries {
            cfg.set(section, key, value, &mut clouds, &mut coverage)?;
        }
        cfg.world.clouds = (clouds > 0).then_some(CloudSettings { count: clouds, coverage });
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str, clouds: &mut usize, coverage: &mut f64) -> Result<(), ConfigError> {
        let w = &mut self.world;
        let t = &mut self.train;
        let e = &mut self.eval;
        match (section, key) {
            ("run", "experiment") => self.experiment = v.to_string(),
            ("run", "out") => self.out = PathBuf::from(v),
            ("run", "seed") => self.seed = num(section, key, v)?,
            ("world", "height") => w.height = num(section, key, v)?,
            ("world", "width") => w.width = num(section, key, v)?,
            ("world", "window") => w.window = num(section, key, v)?,
            ("world", "comm_range") => w.comm_range = num(section, key, v)?,
            ("world", "robots") => w.robots = num(section, key, v)?,
            ("world", "horizon") => w.horizon = num(section, key, v)?,
            ("world", "max_degree") => w.max_degree = num(section, key, v)?,
            ("world", "goal_hold") => w.goal_hold = num(section, key, v)?,
            ("world", "step_size") => w.step_size = num(section, key, v)?,
            ("world", "labels") => w.labels = num(section, key, v)?,
            ("world", "clouds") => *clouds = num(section, key, v)?,
            ("world", "cloud_coverage") => *coverage = num(section, key, v)?,
            ("model", "feature") => self.feature = num(section, key, v)?,
            ("model", "goal_feature") => self.goal_feature = num(section, key, v)?,
            ("model", "goal_grid") => self.goal_grid = num(section, key, v)?,
            ("model", "fusion") => self.aggregation = num(section, key, v)?,
            ("train", "lr") => t.adam.lr = num(section, key, v)?,
            ("train", "beta1") => t.adam.beta1 = num(section, key, v)?,
            ("train", "beta2") => t.adam.beta2 = num(section, key, v)?,
            ("train", "epsilon") => t.adam.epsilon = num(section, key, v)?,
            ("train", "batch") => t.batch = num(section, key, v)?,
            ("train", "batches_per_epoch") => t.batches_per_epoch = num(section, key, v)?,
            ("train", "patience") => t.patience = num(section, key, v)?,
            ("train", "min_improvement") => t.min_improvement = num(section, key, v)?,
            ("train", "stage1_epochs") => t.stage_epochs[0] = num(section, key, v)?,
            ("train", "stage2_epochs") => t.stage_epochs[1] = num(section, key, v)?,
            ("train", "stage3_epochs") => t.stage_epochs[2] = num(section, key, v)?,
            ("train", "comm") => t.comm = num(section, key, v)?,
            ("train", "baseline_decay") => t.baseline_decay = num(section, key, v)?,
            ("data", "task") => {}
            ("data", "train_samples") => self.data.train_samples = num(section, key, v)?,
            ("data", "test_samples") => self.data.test_samples = num(section, key, v)?,
            ("data", "source") => self.data.source = (!v.is_empty()).then(|| PathBuf::from(v)),
            ("eval", "seeds") => e.seeds = num(section, key, v)?,
            ("eval", "batch") => e.batch = num(section, key, v)?,
            ("eval", "comm") => e.comm = num(section, key, v)?,
            ("eval", "scalability_robots") => e.scalability_robots = num_list(section, key, v)?,
            ("eval", "removal_robots") => e.removal_robots = num(section, key, v)?,
            ("eval", "removal_fractions") => e.removal_fractions = num_list(section, key, v)?,
            ("eval", "timing_robots") => e.timing_robots = num_list(section, key, v)?,
            ("eval", "timing_threshold") => e.timing_threshold = num(section, key, v)?,
            ("eval", "timing_max_horizon") => e.timing_max_horizon = num(section, key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    section: section.into(),
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// CRC-32 of the canonical text, as 8 hex digits.
    pub fn hash(&self) -> String {
        format!("{:08x}", crc32fast::hash(self.to_text().as_bytes()))
    }

    /// Applies the Adam settings while keeping the rest.
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.train.adam = AdamConfig { lr, ..self.train.adam };
        self
    }
}

fn value_err(section: &str, key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Value {
        section: section.into(),
        key: key.into(),
        message: message.to_string(),
    }
}

fn num<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: ToString,
{
    v.parse::<T>().map_err(|e| value_err(section, key, format!("`{v}`: {}", e.to_string())))
}

fn num_list<T: FromStr>(section: &str, key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: ToString,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(section, key, x.trim())).collect()
}
