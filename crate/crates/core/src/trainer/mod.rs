//! Episode rollout and the three-stage training schedule.
//!
//! Stage 1 learns perception and classification from random-walk
//! episodes, stage 2 learns where to look, stage 3 learns to
//! communicate. Each stage trains a disjoint set of parameter groups; all
//! others stay bitwise frozen.

mod episode;
mod schedule;

pub use episode::{evaluate, run_episode, CommMode, EpisodeOptions, EpisodeResult, EvalOutcome, Removal, Rollout};
pub use schedule::{global_reward, reinforce_surrogate, EpochMetrics, StageOutcome, TrainReport, TrainSettings, Trainer};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::environment::EnvError;
use crate::fusion::{Aggregation, MessageBank};
use crate::perception::{Model, ModelDims};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tensor, TensorError};
use crate::topology::TopologyError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("stage {stage}: frozen parameter `{param}` received a nonzero gradient")]
    FrozenGradient { stage: Stage, param: String },
    #[error("stage {stage}: parameter `{param}` changed although it is frozen")]
    FrozenChanged { stage: Stage, param: String },
    #[error("empty reward vector")]
    EmptyRewards,
    #[error("configuration mismatch: {0}")]
    Config(String),
}

/// Training stage. Stages run in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Perception = 1,
    Planning = 2,
    Communication = 3,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Perception, Stage::Planning, Stage::Communication];

    pub fn number(self) -> usize {
        self as usize
    }

    pub fn from_number(n: usize) -> Option<Self> {
        Self::ALL.get(n.checked_sub(1)?).copied()
    }

    /// Parameter groups updated during this stage.
    pub fn groups(self) -> &'static [Group] {
        match self {
            Stage::Perception => &[Group::Extractor, Group::History, Group::Classifier],
            Stage::Planning => &[Group::GoalProcessor, Group::Planner],
            Stage::Communication => &[Group::MessageCells, Group::MessageHeads],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse::<usize>()
            .ok()
            .and_then(Stage::from_number)
            .ok_or_else(|| format!("unknown stage `{s}` (1|2|3)"))
    }
}

/// Named parameter groups of the full system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Extractor,
    GoalProcessor,
    History,
    MessageCells,
    MessageHeads,
    Planner,
    Classifier,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::Extractor,
        Group::GoalProcessor,
        Group::History,
        Group::MessageCells,
        Group::MessageHeads,
        Group::Planner,
        Group::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Extractor => "extractor",
            Group::GoalProcessor => "goal_processor",
            Group::History => "history",
            Group::MessageCells => "message_cells",
            Group::MessageHeads => "message_heads",
            Group::Planner => "planner",
            Group::Classifier => "classifier",
        }
    }
}

/// Every parameter of the system: the shared per-robot networks and the
/// message bank, in one store.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaBundle<S> {
    pub store: ParamStore<S>,
    pub model: Model<S>,
    pub bank: MessageBank<S>,
}

impl<S: Scalar> ThetaBundle<S> {
    pub fn new<R: Rng>(dims: ModelDims, max_degree: usize, aggregation: Aggregation, rng: &mut R) -> Result<Self, TrainError> {
        let mut store = ParamStore::new();
        let model = Model::new(&mut store, dims, rng)?;
        let bank = MessageBank::new(&mut store, max_degree, dims.memory(), aggregation, rng)?;
        Ok(Self { store, model, bank })
    }

    pub fn dims(&self) -> ModelDims {
        self.model.dims
    }

    pub fn group(&self, group: Group) -> Vec<ParamId> {
        match group {
            Group::Extractor => self.model.extractor_params(),
            Group::GoalProcessor => self.model.goal_params(),
            Group::History => self.model.history_params(),
            Group::MessageCells => self.bank.cell_params(),
            Group::MessageHeads => self.bank.head_params(),
            Group::Planner => self.model.planner_params(),
            Group::Classifier => self.model.classifier_params(),
        }
    }

    pub fn stage_params(&self, stage: Stage) -> Vec<ParamId> {
        stage.groups().iter().flat_map(|&g| self.group(g)).collect()
    }

    /// Makes exactly the stage's groups trainable.
    pub fn set_stage(&mut self, stage: Stage) {
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            self.store.set_trainable(id, false);
        }
        for id in self.stage_params(stage) {
            self.store.set_trainable(id, true);
        }
    }

    /// Copies of every parameter value outside the stage's groups.
    pub fn frozen_snapshot(&self, stage: Stage) -> Vec<(ParamId, Tensor<S>)> {
        let live = self.stage_params(stage);
        self.store
            .iter()
            .filter(|(id, _)| !live.contains(id))
            .map(|(id, p)| (id, p.value.clone()))
            .collect()
    }

    /// Fails unless every frozen parameter still equals its snapshot bit for bit.
    pub fn check_unchanged(&self, stage: Stage, snapshot: &[(ParamId, Tensor<S>)]) -> Result<(), TrainError> {
        for (id, before) in snapshot {
            let p = self.store.get(*id);
            let same = p
                .value
                .data()
                .iter()
                .zip(before.data())
                .all(|(a, b)| a.to_f64_lossless().to_bits() == b.to_f64_lossless().to_bits());
            if !same {
                return Err(TrainError::FrozenChanged {
                    stage,
                    param: p.name.clone(),
                });
            }
        }
        Ok(())
    }

    /// Fails if any parameter outside the stage's groups holds a nonzero gradient.
    pub fn check_frozen_grads(&self, stage: Stage) -> Result<(), TrainError> {
        let live = self.stage_params(stage);
        for (id, p) in self.store.iter() {
            if !live.contains(&id) && p.grad.data().iter().any(|g| *g != S::zero()) {
                return Err(TrainError::FrozenGradient {
                    stage,
                    param: p.name.clone(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            channels: 1,
            window: 4,
            feature: 6,
            goal_feature: 4,
            labels: 3,
            goal_grid: 2,
        }
    }

    #[test]
    fn stage_groups_partition_the_store() {
        let b = ThetaBundle::<f64>::new(dims(), 3, Aggregation::Pooled, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut all: Vec<ParamId> = Stage::ALL.iter().flat_map(|&s| b.stage_params(s)).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(n, b.store.len());
    }

    #[test]
    fn set_stage_flips_trainability() {
        let mut b = ThetaBundle::<f64>::new(dims(), 2, Aggregation::Pooled, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        b.set_stage(Stage::Planning);
        for g in Group::ALL {
            let expected = Stage::Planning.groups().contains(&g);
            for id in b.group(g) {
                assert_eq!(b.store.get(id).trainable(), expected, "{}", g.name());
            }
        }
        assert_eq!("3".parse::<Stage>().unwrap(), Stage::Communication);
        assert!("4".parse::<Stage>().is_err());
    }
}
