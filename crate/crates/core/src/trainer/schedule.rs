use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::episode::{run_episode, CommMode, EpisodeOptions, EpisodeResult};
use super::{Stage, ThetaBundle, TrainError};
use crate::environment::{MapSample, WorldConfig};
use crate::scalar::Scalar;
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, Var};

/// `J = Σ r / N`.
pub fn global_reward(rewards: &[f64]) -> Result<f64, TrainError> {
    if rewards.is_empty() {
        return Err(TrainError::EmptyRewards);
    }
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// Score-function surrogate `−mean_i (r_i − b) · Σ_t log π(g_it)`. Its
/// gradient is the centred REINFORCE estimate of `−∇J`.
pub fn reinforce_surrogate<'t, S: Scalar>(logprob_sums: &Var<'t, S>, rewards: &[f64], baseline: f64) -> Result<Var<'t, S>, TrainError> {
    let n = rewards.len();
    let adv: Vec<S> = rewards.iter().map(|r| S::of(r - baseline)).collect();
    let adv = logprob_sums.tape().constant(Tensor::new(vec![n], adv)?);
    Ok(logprob_sums.dot(&adv)?.scale(S::of(-1.0 / n as f64)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub adam: AdamConfig,
    /// Maps per episode.
    pub batch: usize,
    /// Episodes per epoch.
    pub batches_per_epoch: usize,
    /// Epochs without a best-`J` gain of `min_improvement` that end a stage.
    pub patience: usize,
    pub min_improvement: f64,
    /// Epoch cap per stage.
    pub stage_epochs: [usize; 3],
    /// Graph used during the communication stage.
    pub comm: CommMode,
    /// Weight of the previous value in the running reward baseline.
    pub baseline_decay: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch: 8,
            batches_per_epoch: 4,
            patience: 20,
            min_improvement: 1e-3,
            stage_epochs: [100, 100, 100],
            comm: CommMode::Sparse,
            baseline_decay: 0.9,
        }
    }
}

/// One row of the metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: Stage,
    pub reward: f64,
    pub accuracy: f64,
    pub max_degree: usize,
    pub seed: u64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,stage,J,mean_accuracy,max_degree_observed,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{},{}",
            self.epoch, self.stage, self.reward, self.accuracy, self.max_degree, self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub start_epoch: usize,
    pub epochs: usize,
    pub best_reward: f64,
    /// Ended by the plateau rule rather than the epoch cap.
    pub plateaued: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub stages: Vec<StageOutcome>,
}

impl TrainReport {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(EpochMetrics::CSV_HEADER);
        s.push('\n');
        for m in &self.metrics {
            s.push_str(&m.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn stage_markers(&self) -> String {
        self.stages
            .iter()
            .map(|s| format!("stage {} start_epoch {} epochs {}\n", s.stage, s.start_epoch, s.epochs))
            .collect()
    }
}

/// Owns the parameters, the active stage's optimizer, and the reward baseline.
#[derive(Clone, Debug)]
pub struct Trainer<S> {
    pub bundle: ThetaBundle<S>,
    pub world: WorldConfig,
    pub settings: TrainSettings,
    stage: Stage,
    optimizer: Adam<S>,
    /// Running mean of `J` used as the REINFORCE baseline.
    pub baseline: Option<f64>,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(mut bundle: ThetaBundle<S>, world: WorldConfig, settings: TrainSettings) -> Result<Self, TrainError> {
        world.validate()?;
        if settings.batch == 0 || settings.batches_per_epoch == 0 {
            return Err(TrainError::Config("batch and batches_per_epoch must be positive".into()));
        }
        let stage = Stage::Perception;
        bundle.set_stage(stage);
        let optimizer = Adam::new(&bundle.store, bundle.stage_params(stage), settings.adam);
        Ok(Self {
            bundle,
            world,
            settings,
            stage,
            optimizer,
            baseline: None,
            epoch: 0,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn optimizer(&self) -> &Adam<S> {
        &self.optimizer
    }

    pub fn optimizer_mut(&mut self) -> &mut Adam<S> {
        &mut self.optimizer
    }

    /// Switches trainability and starts a fresh optimizer for `stage`.
    pub fn enter_stage(&mut self, stage: Stage) {
        self.stage = stage;
        self.bundle.set_stage(stage);
        self.optimizer = Adam::new(&self.bundle.store, self.bundle.stage_params(stage), self.settings.adam);
    }

    fn episode_options(&self) -> EpisodeOptions {
        let comm = if self.stage == Stage::Communication { self.settings.comm } else { CommMode::Off };
        EpisodeOptions::new(self.stage, comm)
    }

    fn apply(&mut self, tape: &Tape<S>, loss: Var<'_, S>) -> Result<(), TrainError> {
        let snapshot = self.bundle.frozen_snapshot(self.stage);
        self.bundle.store.zero_grad();
        tape.backward(loss, &mut self.bundle.store)?;
        self.bundle.check_frozen_grads(self.stage)?;
        self.optimizer.step(&mut self.bundle.store)?;
        self.bundle.check_unchanged(self.stage, &snapshot)
    }

    fn require(&self, stage: Stage) -> Result<(), TrainError> {
        if self.stage != stage {
            return Err(TrainError::Config(format!("update for stage {stage} called during stage {}", self.stage)));
        }
        Ok(())
    }

    /// Random-walk episode; exact gradient of `−J` into perception,
    /// history and classifier.
    pub fn stage1_update(&mut self, maps: &[&MapSample], rng: &mut ChaCha8Rng) -> Result<EpisodeResult, TrainError> {
        self.require(Stage::Perception)?;
        let tape = Tape::new();
        let rollout = run_episode(&tape, &self.bundle, &self.world, maps, &self.episode_options(), rng)?;
        self.apply(&tape, rollout.loss)?;
        Ok(rollout.result)
    }

    /// Goal-driven episode; REINFORCE on the goal choices against the
    /// running baseline plus the exact gradient of `−J` into the goal
    /// processor.
    pub fn stage2_update(&mut self, maps: &[&MapSample], rng: &mut ChaCha8Rng) -> Result<EpisodeResult, TrainError> {
        self.require(Stage::Planning)?;
        let tape = Tape::new();
        let rollout = run_episode(&tape, &self.bundle, &self.world, maps, &self.episode_options(), rng)?;
        let j = rollout.result.global_reward()?;
        let baseline = *self.baseline.get_or_insert(j);
        let loss = match &rollout.logprob_sums {
            Some(lp) => rollout.loss.add(&reinforce_surrogate(lp, &rollout.result.rewards, baseline)?)?,
            None => rollout.loss,
        };
        self.apply(&tape, loss)?;
        let decay = self.settings.baseline_decay;
        self.baseline = Some(decay * baseline + (1.0 - decay) * j);
        Ok(rollout.result)
    }

    /// Communicating episode; exact gradient of `−J` into the message bank.
    pub fn stage3_update(&mut self, maps: &[&MapSample], rng: &mut ChaCha8Rng) -> Result<EpisodeResult, TrainError> {
        self.require(Stage::Communication)?;
        if self.settings.comm == CommMode::Off {
            return Err(TrainError::Config("the communication stage needs comm enabled".into()));
        }
        let tape = Tape::new();
        let rollout = run_episode(&tape, &self.bundle, &self.world, maps, &self.episode_options(), rng)?;
        self.apply(&tape, rollout.loss)?;
        Ok(rollout.result)
    }

    pub fn update(&mut self, maps: &[&MapSample], rng: &mut ChaCha8Rng) -> Result<EpisodeResult, TrainError> {
        match self.stage {
            Stage::Perception => self.stage1_update(maps, rng),
            Stage::Planning => self.stage2_update(maps, rng),
            Stage::Communication => self.stage3_update(maps, rng),
        }
    }

    /// One epoch of `batches_per_epoch` episodes over shuffled training maps.
    pub fn run_epoch(&mut self, train: &[MapSample], rng: &mut ChaCha8Rng, seed: u64) -> Result<EpochMetrics, TrainError> {
        if train.is_empty() {
            return Err(TrainError::Config("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(rng);
        let mut cursor = order.iter().cycle();
        let (mut reward, mut correct, mut total, mut max_degree) = (0.0, 0usize, 0usize, 0usize);
        for _ in 0..self.settings.batches_per_epoch {
            let maps: Vec<&MapSample> = (0..self.settings.batch).map(|_| &train[*cursor.next().expect("cycle")]).collect();
            let r = self.update(&maps, rng)?;
            reward += r.global_reward()?;
            correct += r.correct.iter().filter(|&&c| c).count();
            total += r.correct.len();
            max_degree = max_degree.max(r.max_degree);
        }
        let metrics = EpochMetrics {
            epoch: self.epoch,
            stage: self.stage,
            reward: reward / self.settings.batches_per_epoch as f64,
            accuracy: correct as f64 / total.max(1) as f64,
            max_degree,
            seed,
        };
        self.epoch += 1;
        Ok(metrics)
    }

    /// Runs one stage until its epoch cap or until `J` plateaus.
    pub fn train_stage(
        &mut self,
        stage: Stage,
        train: &[MapSample],
        rng: &mut ChaCha8Rng,
        seed: u64,
        report: &mut TrainReport,
    ) -> Result<StageOutcome, TrainError> {
        self.enter_stage(stage);
        let cap = self.settings.stage_epochs[stage.number() - 1];
        let start_epoch = self.epoch;
        let mut best = f64::NEG_INFINITY;
        let mut stale = 0;
        let mut plateaued = false;
        for _ in 0..cap {
            let m = self.run_epoch(train, rng, seed)?;
            if m.reward > best + self.settings.min_improvement {
                best = m.reward;
                stale = 0;
            } else {
                best = best.max(m.reward);
                stale += 1;
            }
            report.metrics.push(m);
            if stale >= self.settings.patience {
                plateaued = true;
                break;
            }
        }
        let outcome = StageOutcome {
            stage,
            start_epoch,
            epochs: self.epoch - start_epoch,
            best_reward: best,
            plateaued,
        };
        report.stages.push(outcome.clone());
        Ok(outcome)
    }

    /// All three stages in order, seeded by `seed`.
    pub fn train(&mut self, train: &[MapSample], seed: u64) -> Result<TrainReport, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = TrainReport::default();
        for stage in Stage::ALL {
            self.train_stage(stage, train, &mut rng, seed, &mut report)?;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::sample_categorical;
    use crate::tensor::{ParamStore, Tensor};

    #[test]
    fn global_reward_is_the_mean() {
        assert_eq!(global_reward(&[-0.5; 4]).unwrap(), -0.5);
        assert!((global_reward(&[-0.2, -0.4]).unwrap() + 0.3).abs() < 1e-15);
        assert_eq!(global_reward(&[-1.25]).unwrap(), -1.25);
        assert!(matches!(global_reward(&[]), Err(TrainError::EmptyRewards)));
    }

    #[test]
    fn centred_rewards_give_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("logits", Tensor::vector(vec![0.3, -0.2, 0.5])).unwrap();
        let tape = Tape::new();
        let lp = tape.param(&store, id).reshape(&[1, 3]).unwrap().log_softmax_rows().unwrap();
        let picked = lp.pick(vec![2]).unwrap();
        let loss = reinforce_surrogate(&picked, &[-0.7], -0.7).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    // Eight-armed bandit where arm 5 pays 1 and the others pay 0.
    #[test]
    fn reinforce_finds_the_best_arm() {
        let arms = 8;
        let mut store = ParamStore::<f64>::new();
        let id = store.add("logits", Tensor::zeros(&[arms])).unwrap();
        let mut adam = Adam::new(&store, vec![id], AdamConfig { lr: 0.05, ..AdamConfig::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut baseline = 0.0;
        let prob = |store: &ParamStore<f64>| {
            let l = store.get(id).value.data();
            let z: f64 = l.iter().map(|x| x.exp()).sum();
            l[5].exp() / z
        };
        let mut reached = None;
        for step in 0..500 {
            let tape = Tape::new();
            let logits = tape.param(&store, id).reshape(&[1, arms]).unwrap();
            let lp = logits.log_softmax_rows().unwrap();
            let picks: Vec<usize> = (0..16)
                .map(|_| sample_categorical(lp.value().row(0), &mut rng))
                .collect();
            let rewards: Vec<f64> = picks.iter().map(|&a| if a == 5 { 1.0 } else { 0.0 }).collect();
            let rows = lp.gather_rows(vec![0; 16]).unwrap().pick(picks).unwrap();
            let loss = reinforce_surrogate(&rows, &rewards, baseline).unwrap();
            tape.backward(loss, &mut store).unwrap();
            adam.step(&mut store).unwrap();
            baseline = 0.9 * baseline + 0.1 * rewards.iter().sum::<f64>() / 16.0;
            if prob(&store) > 0.9 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "p = {}", prob(&store));
    }
}
