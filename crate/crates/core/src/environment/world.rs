//! Robot mechanics on a map: windowed observation and motion.

use rand::Rng;

use super::{CloudSettings, EnvError, MapSample};
use crate::perception::{MemoryState, Observation};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::topology::Position;

/// Size and dynamics of one deployment.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub height: usize,
    pub width: usize,
    /// Observation window side `p`.
    pub window: usize,
    /// Communication range `e` in pixels.
    pub comm_range: f64,
    pub robots: usize,
    /// Episode length `T`.
    pub horizon: usize,
    /// Degree bound `δ`.
    pub max_degree: usize,
    /// Steps `t_g` a sampled goal is held.
    pub goal_hold: usize,
    pub step_size: f64,
    pub labels: usize,
    pub seed: u64,
    pub clouds: Option<CloudSettings>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            window: 16,
            comm_range: 60.0,
            robots: 5,
            horizon: 15,
            max_degree: 4,
            goal_hold: 3,
            step_size: 8.0,
            labels: 6,
            seed: 0,
            clouds: None,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |field: &str, why: &str| Err(EnvError::Config(format!("{field}: {why}")));
        for (field, v) in [
            ("height", self.height),
            ("width", self.width),
            ("window", self.window),
            ("robots", self.robots),
            ("horizon", self.horizon),
            ("max_degree", self.max_degree),
            ("goal_hold", self.goal_hold),
        ] {
            if v == 0 {
                return fail(field, "must be positive");
            }
        }
        if self.window > self.height.min(self.width) {
            return fail("window", "larger than the map");
        }
        if !(self.comm_range > 0.0) {
            return fail("comm_range", "must be positive");
        }
        if !(self.step_size > 0.0) {
            return fail("step_size", "must be positive");
        }
        if self.labels < 2 {
            return fail("labels", "need at least two");
        }
        if let Some(c) = self.clouds {
            if !(c.coverage > 0.0 && c.coverage < 1.0) {
                return fail("cloud_coverage", "must lie in (0, 1)");
            }
        }
        Ok(())
    }

    /// Observed fraction of the map, `p² / (H·W)`.
    pub fn observation_ratio(&self) -> f64 {
        (self.window * self.window) as f64 / (self.height * self.width) as f64
    }
}

/// Per-robot episode state.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotState<S> {
    pub position: Position,
    pub memory: MemoryState<S>,
    pub goal: Option<Position>,
    pub goal_age: usize,
    pub alive: bool,
}

impl<S: Scalar> RobotState<S> {
    pub fn new(position: Position, memory_size: usize) -> Self {
        Self {
            position,
            memory: MemoryState::zeros(memory_size),
            goal: None,
            goal_age: 0,
            alive: true,
        }
    }
}

/// Positions live in `[0, W] × [0, H]`, `(x, y)` order.
pub fn clamp_to_map(l: Position, width: usize, height: usize) -> Position {
    [l[0].clamp(0.0, width as f64), l[1].clamp(0.0, height as f64)]
}

pub fn random_position<R: Rng>(rng: &mut R, width: usize, height: usize) -> Position {
    [rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64)]
}

fn window_origin(center: f64, p: usize, extent: usize) -> usize {
    let start = (center - p as f64 / 2.0).round();
    start.clamp(0.0, (extent - p) as f64) as usize
}

/// `p×p` window centred on `l`, shifted inward near the borders.
pub fn observe<S: Scalar>(map: &MapSample, l: Position, p: usize, time_index: usize) -> Observation<S> {
    let (c, h, w) = (map.channels(), map.height(), map.width());
    let x0 = window_origin(l[0], p, w);
    let y0 = window_origin(l[1], p, h);
    let src = map.image.data();
    let mut pixels = Vec::with_capacity(c * p * p);
    for ch in 0..c {
        for y in y0..y0 + p {
            let row = (ch * h + y) * w;
            pixels.extend(src[row + x0..row + x0 + p].iter().map(|&v| S::of(f64::from(v))));
        }
    }
    Observation {
        pixels: Tensor::new(vec![c, p, p], pixels).expect("window inside map"),
        position: l,
        time_index,
    }
}

/// Moves `min(s, |g − l|)` toward `goal`, or a length-`s` step in a uniform
/// random direction when there is no goal. The result is clamped to the map.
pub fn step_motion<R: Rng>(
    l: Position,
    goal: Option<Position>,
    s: f64,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Position {
    let next = match goal {
        Some(g) => {
            let (dx, dy) = (g[0] - l[0], g[1] - l[1]);
            let dist = dx.hypot(dy);
            if dist <= s {
                g
            } else {
                [l[0] + dx * s / dist, l[1] + dy * s / dist]
            }
        }
        None => {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            [l[0] + s * angle.cos(), l[1] + s * angle.sin()]
        }
    };
    clamp_to_map(next, width, height)
}
