//! Per-robot neural pipeline: classification features, goal features,
//! LSTM history encoder, classifier and goal sampler.
//!
//! Every forward function is batched over rows: row `r` belongs to one
//! robot on one map. All robots share the same parameters.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::kernels::{argmax, softmax};
use crate::tensor::{ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

/// Initial weight range `uniform(-INIT_RANGE, INIT_RANGE)`.
pub const INIT_RANGE: f64 = 0.08;
const KERNEL: usize = 3;
const EXTRACTOR_FILTERS: [usize; 2] = [8, 16];
const GOAL_FILTERS: usize = 4;

/// Size knobs of the perception stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Image channels.
    pub channels: usize,
    /// Observation window side `p`.
    pub window: usize,
    /// Classification feature size `a`.
    pub feature: usize,
    /// Goal feature size `b`.
    pub goal_feature: usize,
    /// Number of labels `M`.
    pub labels: usize,
    /// Goal grid side `G`; the planner picks one of `G²` cells.
    pub goal_grid: usize,
}

impl ModelDims {
    /// Memory size `c = a + b`.
    pub fn memory(&self) -> usize {
        self.feature + self.goal_feature
    }

    pub fn goal_cells(&self) -> usize {
        self.goal_grid * self.goal_grid
    }
}

/// Window handed to a robot at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation<S> {
    /// `[C×p×p]`, values in `[0, 1]`.
    pub pixels: Tensor<S>,
    /// Robot position in map pixels `(x, y)`.
    pub position: [f64; 2],
    pub time_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector<S>(pub Tensor<S>);

#[derive(Clone, Debug, PartialEq)]
pub struct GoalFeature<S>(pub Tensor<S>);

/// `x = [v; u]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointFeature<S>(pub Tensor<S>);

impl<S: Scalar> JointFeature<S> {
    pub fn concat(v: &FeatureVector<S>, u: &GoalFeature<S>) -> Self {
        let mut data = v.0.data().to_vec();
        data.extend_from_slice(u.0.data());
        Self(Tensor::vector(data))
    }
}

/// LSTM output `m` and cell state `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState<S> {
    pub m: Tensor<S>,
    pub w: Tensor<S>,
}

impl<S: Scalar> MemoryState<S> {
    pub fn zeros(c: usize) -> Self {
        Self {
            m: Tensor::zeros(&[c]),
            w: Tensor::zeros(&[c]),
        }
    }
}

/// Classifier output: logits and their softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<S> {
    pub logits: Tensor<S>,
    pub probabilities: Tensor<S>,
}

impl<S: Scalar> Prediction<S> {
    pub fn label(&self) -> usize {
        argmax(self.logits.data())
    }
}

pub(crate) fn uniform_tensor<S: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<S> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::of(rng.gen_range(-INIT_RANGE..INIT_RANGE))).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// Dense layer `y = x·W + b` with `W: [in×out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Affine {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), uniform_tensor(&[inputs, outputs], rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]))?;
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        x.matmul(&tape.param(store, self.weight))?
            .add_row_bias(&tape.param(store, self.bias))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// LSTM cell with fused gate weights `[hidden + input] × 4·hidden`,
/// gate blocks ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
    pub input: usize,
}

impl LstmCell {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        hidden: usize,
        input: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(&[hidden + input, 4 * hidden], rng),
        )?;
        let mut b = Tensor::zeros(&[4 * hidden]);
        for x in &mut b.data_mut()[hidden..2 * hidden] {
            *x = S::one();
        }
        let bias = store.add(format!("{name}.bias"), b)?;
        Ok(Self {
            weight,
            bias,
            hidden,
            input,
        })
    }

    /// One step: returns `(m, w)` given previous `(m, w)` and input `x`.
    pub fn step<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        m_prev: &Var<'t, S>,
        w_prev: &Var<'t, S>,
        x: &Var<'t, S>,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        let c = self.hidden;
        let z = Var::concat_cols(&[*m_prev, *x])?
            .matmul(&tape.param(store, self.weight))?
            .add_row_bias(&tape.param(store, self.bias))?;
        let i = z.slice_cols(0, c)?.sigmoid();
        let f = z.slice_cols(c, 2 * c)?.sigmoid();
        let g = z.slice_cols(2 * c, 3 * c)?.tanh();
        let o = z.slice_cols(3 * c, 4 * c)?.sigmoid();
        let w = f.mul(w_prev)?.add(&i.mul(&g)?)?;
        let m = o.mul(&w.tanh())?;
        Ok((m, w))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvStage {
    kernel: ParamId,
    pool: bool,
}

/// Stack of 3×3 valid convolutions with relu and optional 2×2 mean
/// pooling. Stages that do not fit the remaining spatial extent are
/// dropped; pooling is applied only when at least 4 pixels remain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvStack {
    stages: Vec<ConvStage>,
    /// Flattened output length per row.
    pub flat: usize,
}

impl ConvStack {
    fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        window: usize,
        filters: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let (mut side, mut chans) = (window, channels);
        let mut stages = Vec::new();
        for (l, &f) in filters.iter().enumerate() {
            if side < KERNEL {
                break;
            }
            let kernel = store.add(format!("{name}.conv{l}"), uniform_tensor(&[f, chans, KERNEL, KERNEL], rng))?;
            side -= KERNEL - 1;
            let pool = side >= 4;
            if pool {
                side /= 2;
            }
            chans = f;
            stages.push(ConvStage { kernel, pool });
        }
        Ok(Self {
            stages,
            flat: chans * side * side,
        })
    }

    fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let rows = x.shape()[0];
        let mut h = *x;
        for stage in &self.stages {
            h = h.conv2d(&tape.param(store, stage.kernel), 1)?.relu();
            if stage.pool {
                h = h.mean_pool2()?;
            }
        }
        h.reshape(&[rows, self.flat])
    }

    fn params(&self) -> Vec<ParamId> {
        self.stages.iter().map(|s| s.kernel).collect()
    }
}

/// Parameter handles of the shared per-robot networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub dims: ModelDims,
    extractor: ConvStack,
    extractor_head: Affine,
    goal_conv: ConvStack,
    goal_head: Affine,
    pub history: LstmCell,
    planner: Affine,
    classifier: Affine,
    _scalar: std::marker::PhantomData<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new<R: Rng>(store: &mut ParamStore<S>, dims: ModelDims, rng: &mut R) -> Result<Self> {
        if dims.window == 0 || dims.channels == 0 || dims.labels < 2 || dims.goal_grid == 0 {
            return Err(TensorError::Invalid(format!("invalid model dims {dims:?}")));
        }
        let extractor = ConvStack::new(store, "extractor", dims.channels, dims.window, &EXTRACTOR_FILTERS, rng)?;
        let extractor_head = Affine::new(store, "extractor.head", extractor.flat, dims.feature, rng)?;
        let goal_conv = ConvStack::new(store, "goal", dims.channels, dims.window, &[GOAL_FILTERS], rng)?;
        let goal_head = Affine::new(store, "goal.head", goal_conv.flat + 2, dims.goal_feature, rng)?;
        let history = LstmCell::new(store, "history", dims.memory(), dims.memory(), rng)?;
        let planner = Affine::new(store, "planner", dims.goal_feature, dims.goal_cells(), rng)?;
        let classifier = Affine::new(store, "classifier", dims.feature, dims.labels, rng)?;
        Ok(Self {
            dims,
            extractor,
            extractor_head,
            goal_conv,
            goal_head,
            history,
            planner,
            classifier,
            _scalar: std::marker::PhantomData,
        })
    }

    /// θ₁: extractor parameters.
    pub fn extractor_params(&self) -> Vec<ParamId> {
        let mut v = self.extractor.params();
        v.extend(self.extractor_head.params());
        v
    }

    /// θ₂: goal-feature processor parameters.
    pub fn goal_params(&self) -> Vec<ParamId> {
        let mut v = self.goal_conv.params();
        v.extend(self.goal_head.params());
        v
    }

    /// θ₃
    pub fn history_params(&self) -> Vec<ParamId> {
        self.history.params().to_vec()
    }

    /// θ₅
    pub fn planner_params(&self) -> Vec<ParamId> {
        self.planner.params().to_vec()
    }

    /// θ₆
    pub fn classifier_params(&self) -> Vec<ParamId> {
        self.classifier.params().to_vec()
    }

    fn check_obs(&self, obs: &Var<'_, S>) -> Result<()> {
        let shape = obs.shape();
        let d = self.dims;
        if shape.len() != 4 || shape[1..] != [d.channels, d.window, d.window] {
            return Err(TensorError::Shape {
                op: "observation",
                left: shape,
                right: vec![d.channels, d.window, d.window],
            });
        }
        Ok(())
    }

    /// `v = V(O)` for a batch `[R×C×p×p]`; yields `[R×a]`.
    pub fn extract_features<'t>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, obs: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.check_obs(obs)?;
        let h = self.extractor.forward(tape, store, obs)?;
        self.extractor_head.forward(tape, store, &h)
    }

    /// `u = G₁(O, l)` with positions normalized to `[0,1]²` (`[R×2]`).
    pub fn goal_features<'t>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        obs: &Var<'t, S>,
        position: &Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        self.check_obs(obs)?;
        let h = self.goal_conv.forward(tape, store, obs)?;
        let h = Var::concat_cols(&[h, *position])?;
        self.goal_head.forward(tape, store, &h)
    }

    /// One LSTM step of the history encoder.
    pub fn encode_history<'t>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        m_prev: &Var<'t, S>,
        w_prev: &Var<'t, S>,
        x: &Var<'t, S>,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        self.history.step(tape, store, m_prev, w_prev, x)
    }

    /// Classifier logits `[R×M]` from `v̂`.
    pub fn classify<'t>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, v_hat: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.classifier.forward(tape, store, v_hat)
    }

    /// Goal-cell logits `[R×G²]` from `û`.
    pub fn goal_logits<'t>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, u_hat: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.planner.forward(tape, store, u_hat)
    }

    /// Samples (or, when `greedy`, takes the argmax of) one goal cell per
    /// row. Returns the cells and their log-probabilities `[R]`.
    pub fn sample_goals<'t, R: Rng>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        u_hat: &Var<'t, S>,
        greedy: bool,
        rng: &mut R,
    ) -> Result<(Vec<usize>, Var<'t, S>)> {
        let logp = self.goal_logits(tape, store, u_hat)?.log_softmax_rows()?;
        let cells = {
            let lp = logp.value();
            let cols = lp.shape()[1];
            (0..lp.shape()[0])
                .map(|r| {
                    let row = &lp.data()[r * cols..(r + 1) * cols];
                    if greedy {
                        argmax(row)
                    } else {
                        sample_categorical(row, rng)
                    }
                })
                .collect::<Vec<_>>()
        };
        let picked = logp.pick(cells.clone())?;
        Ok((cells, picked))
    }

    // Single-robot convenience wrappers over the batched forward passes.

    fn obs_batch<'t>(&self, tape: &'t Tape<S>, obs: &Observation<S>) -> Result<Var<'t, S>> {
        let d = self.dims;
        Ok(tape.constant(obs.pixels.reshape(&[1, d.channels, d.window, d.window])?))
    }

    pub fn features(&self, store: &ParamStore<S>, obs: &Observation<S>) -> Result<FeatureVector<S>> {
        let tape = Tape::new();
        let x = self.obs_batch(&tape, obs)?;
        let v = self.extract_features(&tape, store, &x)?;
        let out = v.value().reshape(&[self.dims.feature])?;
        Ok(FeatureVector(out))
    }

    /// `position` is normalized by the caller.
    pub fn goal_feature(&self, store: &ParamStore<S>, obs: &Observation<S>, position: [f64; 2]) -> Result<GoalFeature<S>> {
        let tape = Tape::new();
        let x = self.obs_batch(&tape, obs)?;
        let l = tape.constant(Tensor::from_f64(&[1, 2], &position)?);
        let u = self.goal_features(&tape, store, &x, &l)?;
        let out = u.value().reshape(&[self.dims.goal_feature])?;
        Ok(GoalFeature(out))
    }

    pub fn encode(&self, store: &ParamStore<S>, prev: &MemoryState<S>, x: &JointFeature<S>) -> Result<MemoryState<S>> {
        let c = self.dims.memory();
        let tape = Tape::new();
        let m = tape.constant(prev.m.reshape(&[1, c])?);
        let w = tape.constant(prev.w.reshape(&[1, c])?);
        let x = tape.constant(x.0.reshape(&[1, x.0.len()])?);
        let (m, w) = self.encode_history(&tape, store, &m, &w, &x)?;
        let (m, w) = (m.value().reshape(&[c])?, w.value().reshape(&[c])?);
        Ok(MemoryState { m, w })
    }

    pub fn predict(&self, store: &ParamStore<S>, v_hat: &Tensor<S>) -> Result<Prediction<S>> {
        let tape = Tape::new();
        let v = tape.constant(v_hat.reshape(&[1, v_hat.len()])?);
        let logits = self.classify(&tape, store, &v)?.value().reshape(&[self.dims.labels])?;
        let probabilities = softmax(&logits)?;
        Ok(Prediction { logits, probabilities })
    }

    /// Goal cell and its log-probability for a single `û`.
    pub fn sample_goal<R: Rng>(
        &self,
        store: &ParamStore<S>,
        u_hat: &Tensor<S>,
        greedy: bool,
        rng: &mut R,
    ) -> Result<(usize, S)> {
        let tape = Tape::new();
        let u = tape.constant(u_hat.reshape(&[1, u_hat.len()])?);
        let (cells, lp) = self.sample_goals(&tape, store, &u, greedy, rng)?;
        let lp = lp.value().data()[0];
        Ok((cells[0], lp))
    }
}

/// Draws an index from log-probabilities by inverse CDF.
pub fn sample_categorical<S: Scalar, R: Rng>(log_probs: &[S], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.to_f64_lossless().exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Centre of goal cell `cell` on a `grid×grid` partition of a `width×height` map.
pub fn cell_center(cell: usize, grid: usize, width: f64, height: f64) -> [f64; 2] {
    let (gx, gy) = (cell % grid, cell / grid);
    [
        (gx as f64 + 0.5) * width / grid as f64,
        (gy as f64 + 0.5) * height / grid as f64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            channels: 1,
            window: 16,
            feature: 24,
            goal_feature: 8,
            labels: 6,
            goal_grid: 8,
        }
    }

    fn setup() -> (ParamStore<f64>, Model<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let model = Model::new(&mut store, dims(), &mut rng).unwrap();
        (store, model, rng)
    }

    fn zero_all(store: &mut ParamStore<f64>, ids: &[ParamId]) {
        for &id in ids {
            store.get_mut(id).value.fill_zero();
        }
    }

    fn obs(pixels: Tensor<f64>) -> Observation<f64> {
        Observation {
            pixels,
            position: [3.0, 4.0],
            time_index: 1,
        }
    }

    #[test]
    fn feature_lengths_follow_config() {
        let (store, model, mut rng) = setup();
        let o = obs(uniform_tensor::<f64, _>(&[1, 16, 16], &mut rng).map(|x| x.abs()));
        assert_eq!(model.features(&store, &o).unwrap().0.len(), 24);
        assert_eq!(model.goal_feature(&store, &o, [0.2, 0.3]).unwrap().0.len(), 8);
    }

    #[test]
    fn zero_observation_gives_constant_features() {
        let (store, model, _) = setup();
        let v = model.features(&store, &obs(Tensor::zeros(&[1, 16, 16]))).unwrap();
        let first = v.0.data()[0];
        assert!(v.0.data().iter().all(|&x| x == first));
    }

    #[test]
    fn features_are_deterministic() {
        let (store, model, mut rng) = setup();
        let o = obs(uniform_tensor::<f64, _>(&[1, 16, 16], &mut rng).map(|x| x.abs()));
        assert_eq!(model.features(&store, &o).unwrap(), model.features(&store, &o).unwrap());
    }

    #[test]
    fn goal_features_depend_on_position() {
        let (store, model, mut rng) = setup();
        let o = obs(uniform_tensor::<f64, _>(&[1, 16, 16], &mut rng).map(|x| x.abs()));
        let a = model.goal_feature(&store, &o, [0.1, 0.1]).unwrap();
        let b = model.goal_feature(&store, &o, [0.9, 0.4]).unwrap();
        assert_ne!(a, b);
        let mut store = store;
        zero_all(&mut store, &model.goal_params());
        let z = model.goal_feature(&store, &o, [0.9, 0.4]).unwrap();
        assert!(z.0.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrong_window_is_rejected() {
        let (store, model, _) = setup();
        assert!(model.features(&store, &obs(Tensor::zeros(&[1, 8, 8]))).is_err());
    }

    #[test]
    fn small_window_drops_unfit_stages() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let d = ModelDims { window: 4, labels: 10, goal_grid: 7, ..dims() };
        let model = Model::new(&mut store, d, &mut rng).unwrap();
        assert_eq!(model.extractor.stages.len(), 1);
        assert_eq!(model.extractor.flat, 8 * 2 * 2);
        let o = obs(Tensor::full(&[1, 4, 4], 0.5));
        assert_eq!(model.features(&store, &o).unwrap().0.len(), 24);
    }

    #[test]
    fn zero_history_weights_gate_algebra() {
        let (mut store, model, _) = setup();
        zero_all(&mut store, &model.history_params());
        let c = 32;
        let w_prev: Vec<f64> = (0..c).map(|i| i as f64 / 10.0 - 1.0).collect();
        let prev = MemoryState {
            m: Tensor::vector((0..c).map(|i| i as f64).collect()),
            w: Tensor::vector(w_prev.clone()),
        };
        let x = JointFeature(Tensor::vector(vec![0.7; c]));
        let next = model.encode(&store, &prev, &x).unwrap();
        for i in 0..c {
            assert!((next.w.data()[i] - 0.5 * w_prev[i]).abs() < 1e-15);
            assert!((next.m.data()[i] - 0.5 * (0.5 * w_prev[i]).tanh()).abs() < 1e-15);
        }
        let next = model.encode(&store, &MemoryState::zeros(c), &x).unwrap();
        assert!(next.m.data().iter().chain(next.w.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let (mut store, model, mut rng) = setup();
        zero_all(&mut store, &model.classifier_params());
        let v = uniform_tensor::<f64, _>(&[24], &mut rng);
        let p = model.predict(&store, &v).unwrap();
        for &x in p.probabilities.data() {
            assert!((x - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn prediction_probabilities_are_consistent() {
        let (store, model, mut rng) = setup();
        for _ in 0..20 {
            let v = uniform_tensor::<f64, _>(&[24], &mut rng).map(|x| x * 50.0);
            let p = model.predict(&store, &v).unwrap();
            let total: f64 = p.probabilities.data().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert_eq!(argmax(p.probabilities.data()), p.label());
        }
    }

    #[test]
    fn zero_planner_is_uniform_and_logprob_matches() {
        let (mut store, model, mut rng) = setup();
        zero_all(&mut store, &model.planner_params());
        let u = uniform_tensor::<f64, _>(&[8], &mut rng);
        for _ in 0..10 {
            let (cell, lp) = model.sample_goal(&store, &u, false, &mut rng).unwrap();
            assert!(cell < 64);
            assert!((lp.exp() - 1.0 / 64.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_logit_is_nearly_always_sampled() {
        let (mut store, model, mut rng) = setup();
        zero_all(&mut store, &model.planner_params());
        store.get_mut(model.planner.bias).value.data_mut()[13] = 20.0;
        let u = Tensor::zeros(&[8]);
        let (cell, glp) = model.sample_goal(&store, &u, true, &mut rng).unwrap();
        assert_eq!(cell, 13);
        assert!(glp.exp() > 0.999);
        let hits = (0..1000)
            .filter(|_| model.sample_goal(&store, &u, false, &mut rng).unwrap().0 == 13)
            .count();
        assert!(hits >= 995, "{hits}");
    }

    #[test]
    fn works_in_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::<f32>::new();
        let model = Model::new(&mut store, dims(), &mut rng).unwrap();
        let o = Observation {
            pixels: Tensor::<f32>::full(&[1, 16, 16], 0.25),
            position: [1.0, 1.0],
            time_index: 1,
        };
        let v = model.features(&store, &o).unwrap();
        assert!(v.0.is_finite());
    }

    #[test]
    fn cell_centers_tile_the_map() {
        assert_eq!(cell_center(0, 8, 128.0, 128.0), [8.0, 8.0]);
        assert_eq!(cell_center(63, 8, 128.0, 128.0), [120.0, 120.0]);
        assert_eq!(cell_center(9, 7, 28.0, 28.0), [10.0, 6.0]);
    }
}
