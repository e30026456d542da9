use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Stage, ThetaBundle, TrainError};
use crate::environment::{observe, random_position, step_motion, MapSample, RobotState, WorldConfig};
use crate::fusion::Degree;
use crate::perception::cell_center;
use crate::scalar::Scalar;
use crate::tensor::kernels::argmax;
use crate::tensor::{Tape, Tensor, Var};
use crate::topology::{CommGraph, Position};

/// Which communication graph robots use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CommMode {
    /// In-range links, at most `δ` per robot.
    #[default]
    Sparse,
    /// Every in-range link.
    Complete,
    /// No messages; every robot keeps its own memory.
    Off,
}

impl fmt::Display for CommMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sparse => "sparse",
            Self::Complete => "complete",
            Self::Off => "off",
        })
    }
}

impl FromStr for CommMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sparse" => Ok(Self::Sparse),
            "complete" => Ok(Self::Complete),
            "off" => Ok(Self::Off),
            other => Err(format!("unknown comm mode `{other}` (sparse|complete|off)")),
        }
    }
}

/// Robots removed from the team at one step of the episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Removal {
    /// Step index at whose start the robots stop.
    pub step: usize,
    /// `⌈fraction·N⌉` robots per map are removed.
    pub fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOptions {
    pub stage: Stage,
    pub comm: CommMode,
    /// Take the most likely goal cell instead of sampling.
    pub greedy_goals: bool,
    pub removal: Option<Removal>,
    /// Keep per-step graphs in the result.
    pub record_graphs: bool,
}

impl EpisodeOptions {
    pub fn new(stage: Stage, comm: CommMode) -> Self {
        Self {
            stage,
            comm,
            greedy_goals: false,
            removal: None,
            record_graphs: false,
        }
    }
}

/// Outcome of one batched episode. Per-robot vectors are indexed like
/// `rows`, which lists the surviving robots as `map · N + robot`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub rows: Vec<usize>,
    /// Terminal rewards `−LSE`, never positive.
    pub rewards: Vec<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub correct: Vec<bool>,
    /// Log-probabilities of every sampled goal, per row of the batch.
    pub goal_logprobs: Vec<Vec<f64>>,
    /// Positions per row of the batch, one entry per observation.
    pub trajectories: Vec<Vec<Position>>,
    /// `graphs[t][map]`, filled when requested.
    pub graphs: Vec<Vec<CommGraph>>,
    pub max_degree: usize,
    pub robots: usize,
}

impl EpisodeResult {
    pub fn accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len().max(1) as f64
    }

    pub fn global_reward(&self) -> Result<f64, TrainError> {
        super::global_reward(&self.rewards)
    }
}

/// Differentiable handles of a rollout on a tape.
pub struct Rollout<'t, S> {
    /// Mean terminal LSE over surviving robots, `−J`.
    pub loss: Var<'t, S>,
    /// Summed goal log-probabilities per surviving robot; `None` when no
    /// goal was sampled.
    pub logprob_sums: Option<Var<'t, S>>,
    pub result: EpisodeResult,
}

fn check_setup<S: Scalar>(bundle: &ThetaBundle<S>, world: &WorldConfig, maps: &[&MapSample], opts: &EpisodeOptions) -> Result<(), TrainError> {
    world.validate()?;
    let d = bundle.dims();
    let bad = |what: String| Err(TrainError::Config(what));
    if maps.is_empty() {
        return bad("episode needs at least one map".into());
    }
    if d.window != world.window {
        return bad(format!("model window {} but world window {}", d.window, world.window));
    }
    if d.labels != world.labels {
        return bad(format!("model has {} labels but world has {}", d.labels, world.labels));
    }
    for m in maps {
        if m.channels() != d.channels || m.height() != world.height || m.width() != world.width {
            return bad(format!(
                "map [{}x{}x{}] does not match channels {} and world {}x{}",
                m.channels(),
                m.height(),
                m.width(),
                d.channels,
                world.height,
                world.width
            ));
        }
        if m.label >= d.labels {
            return bad(format!("map label {} outside 0..{}", m.label, d.labels));
        }
    }
    if opts.comm == CommMode::Sparse && world.max_degree > bundle.bank.delta {
        return bad(format!("degree bound {} exceeds the bank size {}", world.max_degree, bundle.bank.delta));
    }
    if let Some(r) = opts.removal {
        if !(0.0..=1.0).contains(&r.fraction) {
            return bad(format!("removal fraction {} outside [0, 1]", r.fraction));
        }
    }
    Ok(())
}

/// Rolls out one synchronous episode for `N` robots on each of `maps`.
///
/// Each step first lets every robot observe and update its history, then
/// exchanges messages over the step's graph, then moves every robot. The
/// map is classified from the fused memory after the last step.
pub fn run_episode<'t, S: Scalar, R: Rng>(
    tape: &'t Tape<S>,
    bundle: &ThetaBundle<S>,
    world: &WorldConfig,
    maps: &[&MapSample],
    opts: &EpisodeOptions,
    rng: &mut R,
) -> Result<Rollout<'t, S>, TrainError> {
    check_setup(bundle, world, maps, opts)?;
    let store = &bundle.store;
    let model = &bundle.model;
    let d = bundle.dims();
    let (n, b) = (world.robots, maps.len());
    let rows = n * b;
    let c = d.memory();
    let (width, height) = (world.width as f64, world.height as f64);

    let mut robots: Vec<RobotState<S>> = (0..rows)
        .map(|_| RobotState::new(random_position(rng, world.width, world.height), c))
        .collect();
    let mut m = tape.constant(Tensor::zeros(&[rows, c]));
    let mut w = tape.constant(Tensor::zeros(&[rows, c]));
    let mut logprob: Option<Var<'t, S>> = None;
    let mut goal_logprobs = vec![Vec::new(); rows];
    let mut trajectories = vec![Vec::with_capacity(world.horizon); rows];
    let mut graphs = Vec::new();
    let mut max_degree = 0;
    let window_len = d.channels * d.window * d.window;

    for t in 0..world.horizon {
        if let Some(r) = opts.removal.filter(|r| r.step == t) {
            let count = ((r.fraction * n as f64).ceil() as usize).min(n);
            for map in 0..b {
                for i in sample(rng, n, count) {
                    robots[map * n + i].alive = false;
                }
            }
        }

        // Observation, feature extraction and history update for every robot.
        let mut pixels = Vec::with_capacity(rows * window_len);
        let mut pos = Vec::with_capacity(rows * 2);
        for (r, robot) in robots.iter().enumerate() {
            let obs = observe::<S>(maps[r / n], robot.position, d.window, t);
            pixels.extend_from_slice(obs.pixels.data());
            pos.push(S::of(robot.position[0] / width));
            pos.push(S::of(robot.position[1] / height));
            trajectories[r].push(robot.position);
        }
        let obs = tape.constant(Tensor::new(vec![rows, d.channels, d.window, d.window], pixels)?);
        let pos = tape.constant(Tensor::new(vec![rows, 2], pos)?);
        let v = model.extract_features(tape, store, &obs)?;
        let u = model.goal_features(tape, store, &obs, &pos)?;
        let x = Var::concat_cols(&[v, u])?;
        let (m_next, w_next) = model.encode_history(tape, store, &m, &w, &x)?;
        m = m_next;
        w = w_next;

        // Message exchange over this step's graph.
        let mut step_graphs = Vec::with_capacity(b);
        let mut neighbours = vec![Vec::new(); rows];
        for map in 0..b {
            let team = &robots[map * n..(map + 1) * n];
            let positions: Vec<Position> = team.iter().map(|r| r.position).collect();
            let alive: Vec<bool> = team.iter().map(|r| r.alive).collect();
            let graph = match opts.comm {
                CommMode::Off => CommGraph::empty(n),
                CommMode::Sparse => {
                    let g = CommGraph::build(&positions, Some(&alive), world.comm_range, world.max_degree, t);
                    g.check_degree(world.max_degree)?;
                    g
                }
                CommMode::Complete => CommGraph::build(&positions, Some(&alive), world.comm_range, n.saturating_sub(1), t),
            };
            max_degree = max_degree.max(graph.max_degree());
            for i in 0..n {
                neighbours[map * n + i] = graph.neighbours(i).iter().map(|&j| map * n + j).collect();
            }
            step_graphs.push(graph);
        }
        if neighbours.iter().any(|nb| !nb.is_empty()) {
            let degree = if opts.comm == CommMode::Complete { Degree::Unbounded } else { Degree::Bounded };
            m = bundle.bank.fuse_batch(tape, store, &m, &w, &neighbours, degree)?;
        }
        if opts.record_graphs {
            graphs.push(step_graphs);
        }
        {
            let mv = m.value();
            let wv = w.value();
            for (r, robot) in robots.iter_mut().enumerate() {
                robot.memory.m = Tensor::vector(mv.row(r).to_vec());
                robot.memory.w = Tensor::vector(wv.row(r).to_vec());
            }
        }

        if t + 1 == world.horizon {
            break;
        }

        // Goal selection and motion.
        if opts.stage >= Stage::Planning {
            let due: Vec<usize> = (0..rows)
                .filter(|&r| robots[r].alive && (robots[r].goal.is_none() || robots[r].goal_age >= world.goal_hold))
                .collect();
            if !due.is_empty() {
                let u_hat = m.slice_cols(d.feature, c)?.gather_rows(due.clone())?;
                let (cells, lp) = model.sample_goals(tape, store, &u_hat, opts.greedy_goals, rng)?;
                {
                    let lpv = lp.value();
                    for (k, &r) in due.iter().enumerate() {
                        robots[r].goal = Some(cell_center(cells[k], d.goal_grid, width, height));
                        robots[r].goal_age = 0;
                        goal_logprobs[r].push(lpv.data()[k].to_f64_lossless());
                    }
                }
                let k = due.len();
                let spread = lp.reshape(&[k, 1])?.scatter_add_rows(due, rows)?.reshape(&[rows])?;
                logprob = Some(match logprob {
                    Some(acc) => acc.add(&spread)?,
                    None => spread,
                });
            }
        }
        for robot in robots.iter_mut().filter(|r| r.alive) {
            let goal = if opts.stage >= Stage::Planning { robot.goal } else { None };
            robot.position = step_motion(robot.position, goal, world.step_size, world.width, world.height, rng);
            robot.goal_age += 1;
        }
    }

    let alive_rows: Vec<usize> = (0..rows).filter(|&r| robots[r].alive).collect();
    if alive_rows.is_empty() {
        return Err(TrainError::EmptyRewards);
    }
    let labels: Vec<usize> = alive_rows.iter().map(|&r| maps[r / n].label).collect();
    let v_hat = m.slice_cols(0, d.feature)?.gather_rows(alive_rows.clone())?;
    let logits = model.classify(tape, store, &v_hat)?;
    let lse = logits.lse_rows(labels.clone())?;
    let (rewards, predictions) = {
        let lv = logits.value();
        let rewards: Vec<f64> = lse.value().data().iter().map(|l| -l.to_f64_lossless()).collect();
        let predictions: Vec<usize> = (0..alive_rows.len()).map(|k| argmax(lv.row(k))).collect();
        (rewards, predictions)
    };
    let loss = lse.mean();
    let kept = alive_rows.len();
    let logprob_sums = logprob
        .map(|lp| lp.reshape(&[rows, 1])?.gather_rows(alive_rows.clone())?.reshape(&[kept]))
        .transpose()?;
    let correct = predictions.iter().zip(&labels).map(|(p, l)| p == l).collect();
    Ok(Rollout {
        loss,
        logprob_sums,
        result: EpisodeResult {
            rows: alive_rows,
            rewards,
            predictions,
            labels,
            correct,
            goal_logprobs,
            trajectories,
            graphs,
            max_degree,
            robots: n,
        },
    })
}

/// Accuracy of a fixed bundle over a set of maps.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub seed: u64,
    pub correct: usize,
    pub total: usize,
    pub mean_reward: f64,
    pub max_degree: usize,
}

impl EvalOutcome {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total.max(1) as f64
    }
}

/// Runs every map once, `batch` maps per episode, with a seeded stream.
pub fn evaluate<S: Scalar>(
    bundle: &ThetaBundle<S>,
    world: &WorldConfig,
    maps: &[MapSample],
    opts: &EpisodeOptions,
    batch: usize,
    seed: u64,
) -> Result<EvalOutcome, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EvalOutcome {
        seed,
        correct: 0,
        total: 0,
        mean_reward: 0.0,
        max_degree: 0,
    };
    let mut reward_sum = 0.0;
    for chunk in maps.chunks(batch.max(1)) {
        let refs: Vec<&MapSample> = chunk.iter().collect();
        let tape = Tape::new();
        let rollout = run_episode(&tape, bundle, world, &refs, opts, &mut rng)?;
        let r = &rollout.result;
        out.correct += r.correct.iter().filter(|&&c| c).count();
        out.total += r.correct.len();
        reward_sum += r.rewards.iter().sum::<f64>();
        out.max_degree = out.max_degree.max(r.max_degree);
    }
    out.mean_reward = reward_sum / out.total.max(1) as f64;
    Ok(out)
}
