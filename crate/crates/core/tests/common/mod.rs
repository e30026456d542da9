//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use star_swarm::environment::{synthetic_digits, MapSample, WorldConfig, DIGIT_SIDE};
use star_swarm::fusion::{Aggregation, Degree, MessageBank};
use star_swarm::perception::ModelDims;
use star_swarm::tensor::{grad_check, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use star_swarm::trainer::{run_episode, CommMode, EpisodeOptions, Stage, ThetaBundle};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(rng, n, scale)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// Oracles

/// Row-major `[m×k]·[k×n]`, one dot product per output entry.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct ConvCase {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvCase {
    pub fn out_h(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }
}

/// Valid cross-correlation, summing over channel and kernel offsets for
/// each output pixel.
pub fn naive_conv(x: &[f64], k: &[f64], c: ConvCase) -> Vec<f64> {
    let (oh, ow) = (c.out_h(), c.out_w());
    let mut out = vec![0.0; c.batch * c.filters * oh * ow];
    for b in 0..c.batch {
        for f in 0..c.filters {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c.channels {
                        for ky in 0..c.kernel {
                            for kx in 0..c.kernel {
                                let iy = oy * c.stride + ky;
                                let ix = ox * c.stride + kx;
                                let xi = ((b * c.channels + ch) * c.height + iy) * c.width + ix;
                                let ki = ((f * c.channels + ch) * c.kernel + ky) * c.kernel + kx;
                                acc += x[xi] * k[ki];
                            }
                        }
                    }
                    out[((b * c.filters + f) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM step for a single row. `weight` is `[(hidden+input) × 4·hidden]`
/// with gate blocks input, forget, candidate, output.
pub fn naive_lstm_step(weight: &[f64], bias: &[f64], hidden: usize, m: &[f64], w: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let z_in: Vec<f64> = m.iter().chain(x).copied().collect();
    let cols = 4 * hidden;
    let gate = |g: usize, j: usize| {
        let col = g * hidden + j;
        let mut acc = bias[col];
        for (r, &zi) in z_in.iter().enumerate() {
            acc += zi * weight[r * cols + col];
        }
        acc
    };
    let mut m_next = vec![0.0; hidden];
    let mut w_next = vec![0.0; hidden];
    for j in 0..hidden {
        let i = logistic(gate(0, j));
        let f = logistic(gate(1, j));
        let g = gate(2, j).tanh();
        let o = logistic(gate(3, j));
        w_next[j] = f * w[j] + i * g;
        m_next[j] = o * w_next[j].tanh();
    }
    (m_next, w_next)
}

/// `log Σ exp(qⱼ) − q_k` with the maximum shifted out.
pub fn naive_lse(q: &[f64], k: usize) -> f64 {
    let mx = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = q.iter().map(|&v| (v - mx).exp()).sum();
    mx + s.ln() - q[k]
}

// Graph enumeration

/// Counts graphs on `n` labelled vertices by walking every edge subset
/// and collecting the distinct symmetric loop-free adjacency matrices.
pub fn brute_force_graph_count(n: usize) -> u64 {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut seen = BTreeSet::new();
    for mask in 0u64..(1u64 << pairs.len()) {
        let mut adj = vec![false; n * n];
        for (bit, &(i, j)) in pairs.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                adj[i * n + j] = true;
                adj[j * n + i] = true;
            }
        }
        let loop_free = (0..n).all(|i| !adj[i * n + i]);
        let symmetric = (0..n).all(|i| (0..n).all(|j| adj[i * n + j] == adj[j * n + i]));
        assert!(loop_free && symmetric);
        seen.insert(adj);
    }
    seen.len() as u64
}

/// Every ordering of `0..k`.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

// Small model fixtures

pub fn small_dims() -> ModelDims {
    ModelDims {
        channels: 1,
        window: 4,
        feature: 4,
        goal_feature: 3,
        labels: 5,
        goal_grid: 2,
    }
}

pub fn small_world(robots: usize, horizon: usize) -> WorldConfig {
    WorldConfig {
        height: DIGIT_SIDE,
        width: DIGIT_SIDE,
        window: 4,
        comm_range: 13.0,
        robots,
        horizon,
        max_degree: 3,
        goal_hold: 2,
        step_size: 4.0,
        labels: 5,
        seed: 0,
        clouds: None,
    }
}

/// Digit maps relabelled into `labels` classes.
pub fn small_maps(seed: u64, n: usize, labels: usize) -> Vec<MapSample> {
    synthetic_digits(seed, n, 0)
        .train
        .into_iter()
        .map(|mut m| {
            m.label %= labels;
            m
        })
        .collect()
}

pub fn small_bundle(seed: u64, delta: usize, aggregation: Aggregation) -> ThetaBundle<f64> {
    ThetaBundle::new(small_dims(), delta, aggregation, &mut rng(seed)).unwrap()
}

fn train_only(store: &mut ParamStore<f64>, ids: &[ParamId]) {
    let all: Vec<ParamId> = store.ids().collect();
    for id in all {
        store.set_trainable(id, ids.contains(&id));
    }
}

fn weighted_sum<'t>(tape: &'t Tape<f64>, v: &Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>, TensorError> {
    let shape = v.shape();
    let n: usize = shape.iter().product();
    let c = tape.constant(Tensor::new(vec![n], random_vec(&mut rng(seed), n, 1.0))?);
    v.reshape(&[n])?.dot(&c)
}

pub const GRAD_EPS: f64 = 1e-5;

/// Finite-difference checks of every model component and of the full
/// stage-1 loss (2 robots, T=2). Returns `(name, max relative error)`.
pub fn gradient_checks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let dims = small_dims();
    let c = dims.memory();
    let mut r = rng(91);
    let obs = random_tensor(&mut r, &[3, 1, 4, 4], 1.0);
    let pos = Tensor::new(vec![3, 2], (0..6).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
    let m0 = random_tensor(&mut r, &[3, c], 0.8);
    let w0 = random_tensor(&mut r, &[3, c], 0.8);
    let xs: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut r, &[3, c], 0.8)).collect();

    let mut b = small_bundle(5, 3, Aggregation::Pooled);
    let model = b.model.clone();

    train_only(&mut b.store, &model.extractor_params());
    let e = grad_check(&mut b.store, GRAD_EPS, |tape, store| {
        let v = model.extract_features(tape, store, &tape.constant(obs.clone()))?;
        weighted_sum(tape, &v, 1)
    })
    .unwrap();
    out.push(("extractor".to_string(), e));

    train_only(&mut b.store, &model.goal_params());
    let e = grad_check(&mut b.store, GRAD_EPS, |tape, store| {
        let u = model.goal_features(tape, store, &tape.constant(obs.clone()), &tape.constant(pos.clone()))?;
        weighted_sum(tape, &u, 2)
    })
    .unwrap();
    out.push(("goal features".to_string(), e));

    train_only(&mut b.store, &model.history_params());
    let e = grad_check(&mut b.store, GRAD_EPS, |tape, store| {
        let mut m = tape.constant(m0.clone());
        let mut w = tape.constant(w0.clone());
        for x in &xs {
            let (mn, wn) = model.encode_history(tape, store, &m, &w, &tape.constant(x.clone()))?;
            m = mn;
            w = wn;
        }
        weighted_sum(tape, &m.add(&w)?, 3)
    })
    .unwrap();
    out.push(("history lstm".to_string(), e));

    train_only(&mut b.store, &model.classifier_params());
    let v_hat = random_tensor(&mut r, &[3, dims.feature], 1.0);
    let e = grad_check(&mut b.store, GRAD_EPS, |tape, store| {
        let q = model.classify(tape, store, &tape.constant(v_hat.clone()))?;
        Ok(q.lse_rows(vec![0, 3, 4])?.mean())
    })
    .unwrap();
    out.push(("classifier".to_string(), e));

    train_only(&mut b.store, &model.planner_params());
    let u_hat = random_tensor(&mut r, &[3, dims.goal_feature], 1.0);
    let e = grad_check(&mut b.store, GRAD_EPS, |tape, store| {
        let lp = model.goal_logits(tape, store, &tape.constant(u_hat.clone()))?.log_softmax_rows()?;
        Ok(lp.pick(vec![1, 0, 3])?.sum())
    })
    .unwrap();
    out.push(("planner".to_string(), e));

    for (name, agg, degree, rows) in [
        ("bank pooled", Aggregation::Pooled, Degree::Bounded, 5),
        ("bank concat", Aggregation::Concat, Degree::Bounded, 5),
        ("bank complete", Aggregation::Pooled, Degree::Unbounded, 6),
    ] {
        let mut bb = small_bundle(6, 3, agg);
        let bank: MessageBank<f64> = bb.bank.clone();
        let mut ids = bank.cell_params();
        ids.extend(bank.head_params());
        train_only(&mut bb.store, &ids);
        let m = random_tensor(&mut r, &[rows, c], 0.8);
        let w = random_tensor(&mut r, &[rows, c], 0.8);
        // Rows 0..3 see k = 0, 1, 2, 3; with six rows row 5 sees k = 5.
        let mut nb: Vec<Vec<usize>> = vec![vec![], vec![2], vec![0, 4], vec![0, 1, 4], vec![3]];
        if rows == 6 {
            nb.push(vec![0, 1, 2, 3, 4]);
        }
        let e = grad_check(&mut bb.store, GRAD_EPS, |tape, store| {
            let fused = bank.fuse_batch(tape, store, &tape.constant(m.clone()), &tape.constant(w.clone()), &nb, degree)?;
            weighted_sum(tape, &fused, 4)
        })
        .unwrap();
        out.push((name.to_string(), e));
    }

    let world = small_world(2, 2);
    let maps = small_maps(3, 2, world.labels);
    let refs: Vec<&MapSample> = maps.iter().collect();
    let mut full = small_bundle(7, world.max_degree, Aggregation::Pooled);
    full.set_stage(Stage::Perception);
    let (model, bank) = (full.model.clone(), full.bank.clone());
    let opts = EpisodeOptions::new(Stage::Perception, CommMode::Off);
    let e = grad_check(&mut full.store, GRAD_EPS, |tape, store| {
        let bundle = ThetaBundle {
            store: store.clone(),
            model: model.clone(),
            bank: bank.clone(),
        };
        let rollout = run_episode(tape, &bundle,&world, &refs, &opts, &mut rng(17)).map_err(|e| TensorError::Invalid(e.to_string()))?;
        Ok(rollout.loss)
    })
    .unwrap();
    out.push(("stage-1 loss".to_string(), e));
    out
}

/// Max degree over `steps` random-walk steps of `n` robots in the desk
/// world, together with the number of steps that broke the bound.
pub fn degree_walk(n: usize, steps: usize, seed: u64) -> (usize, usize) {
    use star_swarm::environment::{random_position, step_motion};
    use star_swarm::topology::CommGraph;
    let world = WorldConfig::default();
    let mut r = rng(seed);
    let mut pos: Vec<[f64; 2]> = (0..n).map(|_| random_position(&mut r, world.width, world.height)).collect();
    let (mut worst, mut violations) = (0, 0);
    for t in 0..steps {
        let g = CommGraph::build(&pos, None, world.comm_range, world.max_degree, t);
        worst = worst.max(g.max_degree());
        if g.check_degree(world.max_degree).is_err() {
            violations += 1;
        }
        for p in &mut pos {
            *p = step_motion(*p, None, world.step_size, world.width, world.height, &mut r);
        }
    }
    (worst, violations)
}

#[derive(Clone, Debug)]
pub struct FreezeOutcome {
    pub stage: Stage,
    /// Every parameter outside the stage's groups kept its exact bits.
    pub off_stage_unchanged: bool,
    /// Every parameter of the stage's groups moved.
    pub on_stage_changed: bool,
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

/// Runs `updates` trainer updates in each stage on a small team and
/// compares every parameter before and after.
pub fn freezing_run(updates: usize) -> Vec<FreezeOutcome> {
    use star_swarm::tensor::AdamConfig;
    use star_swarm::trainer::{TrainSettings, Trainer};
    let world = small_world(4, 4);
    let maps = small_maps(8, 6, world.labels);
    let settings = TrainSettings {
        adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
        batch: 2,
        ..TrainSettings::default()
    };
    let mut trainer = Trainer::new(small_bundle(9, world.max_degree, Aggregation::Pooled), world, settings).unwrap();
    let mut r = rng(10);
    let mut out = Vec::new();
    for stage in Stage::ALL {
        trainer.enter_stage(stage);
        let on: Vec<ParamId> = trainer.bundle.stage_params(stage);
        let before: Vec<(ParamId, Vec<u64>)> = trainer.bundle.store.iter().map(|(id, p)| (id, bits(&p.value))).collect();
        for u in 0..updates {
            let batch = [&maps[(2 * u) % maps.len()], &maps[(2 * u + 1) % maps.len()]];
            trainer.update(&batch, &mut r).unwrap();
        }
        let mut off_stage_unchanged = true;
        let mut on_stage_changed = true;
        for (id, old) in &before {
            let same = bits(&trainer.bundle.store.get(*id).value) == *old;
            if on.contains(id) {
                on_stage_changed &= !same;
            } else {
                off_stage_unchanged &= same;
            }
        }
        out.push(FreezeOutcome {
            stage,
            off_stage_unchanged,
            on_stage_changed,
        });
    }
    out
}

/// Largest degree seen in a recorded sparse episode of `n` robots on
/// the desk map world.
pub fn episode_max_degree(n: usize, seed: u64) -> usize {
    use star_swarm::environment::generate_maps;
    let world = WorldConfig {
        robots: n,
        horizon: 6,
        ..WorldConfig::default()
    };
    let maps = generate_maps(seed, world.labels, 1, 0, world.height, world.width, None).train;
    let dims = ModelDims {
        channels: 3,
        window: world.window,
        feature: 4,
        goal_feature: 3,
        labels: world.labels,
        goal_grid: 4,
    };
    let bundle = ThetaBundle::<f64>::new(dims, world.max_degree, Aggregation::Pooled, &mut rng(seed)).unwrap();
    let mut opts = EpisodeOptions::new(Stage::Communication, CommMode::Sparse);
    opts.record_graphs = true;
    let tape = Tape::new();
    let rollout = run_episode(&tape, &bundle, &world, &[&maps[0]], &opts, &mut rng(seed + 1)).unwrap();
    let recorded = rollout.result.graphs.iter().flatten().map(|g| g.max_degree()).max().unwrap_or(0);
    assert_eq!(recorded, rollout.result.max_degree);
    recorded
}

// Seeded oracle sweeps; each returns the largest absolute gap seen.

pub fn matmul_gap(cases: usize, seed: u64) -> f64 {
    use star_swarm::tensor::kernels::matmul;
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let (m, k, n) = (r.gen_range(1..10), r.gen_range(1..10), r.gen_range(1..10));
        let a = random_tensor(&mut r, &[m, k], 2.0);
        let b = random_tensor(&mut r, &[k, n], 2.0);
        let got = matmul(&a, &b).unwrap();
        assert_eq!(got.shape(), &[m, n]);
        worst = worst.max(max_abs_diff(got.data(), &naive_matmul(a.data(), b.data(), m, k, n)));
    }
    worst
}

pub fn conv_gap(cases: usize, seed: u64) -> f64 {
    use star_swarm::tensor::kernels::conv2d;
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let kernel = r.gen_range(1..4);
        let case = ConvCase {
            batch: r.gen_range(1..3),
            channels: r.gen_range(1..4),
            height: r.gen_range(kernel..9),
            width: r.gen_range(kernel..9),
            filters: r.gen_range(1..4),
            kernel,
            stride: r.gen_range(1..3),
        };
        let x = random_tensor(&mut r, &[case.batch, case.channels, case.height, case.width], 1.0);
        let k = random_tensor(&mut r, &[case.filters, case.channels, kernel, kernel], 1.0);
        let got = conv2d(&x, &k, case.stride).unwrap();
        assert_eq!(got.shape(), &[case.batch, case.filters, case.out_h(), case.out_w()]);
        worst = worst.max(max_abs_diff(got.data(), &naive_conv(x.data(), k.data(), case)));
    }
    worst
}

/// Multi-step sequences through the tape LSTM cell against the scalar
/// recurrence, comparing both `m` and `w`.
pub fn lstm_gap(cases: usize, seed: u64) -> f64 {
    use star_swarm::perception::LstmCell;
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let (hidden, input, rows, steps) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..4), r.gen_range(1..5));
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, "cell", hidden, input, &mut r).unwrap();
        let weight = store.get(cell.weight).value.data().to_vec();
        let bias = store.get(cell.bias).value.data().to_vec();
        let xs: Vec<Tensor<f64>> = (0..steps).map(|_| random_tensor(&mut r, &[rows, input], 1.5)).collect();
        let tape = Tape::new();
        let mut m = tape.constant(Tensor::zeros(&[rows, hidden]));
        let mut w = tape.constant(Tensor::zeros(&[rows, hidden]));
        for x in &xs {
            let (mn, wn) = cell.step(&tape, &store, &m, &w, &tape.constant(x.clone())).unwrap();
            m = mn;
            w = wn;
        }
        for row in 0..rows {
            let (mut mo, mut wo) = (vec![0.0; hidden], vec![0.0; hidden]);
            for x in &xs {
                (mo, wo) = naive_lstm_step(&weight, &bias, hidden, &mo, &wo, x.row(row));
            }
            worst = worst.max(max_abs_diff(m.value().row(row), &mo));
            worst = worst.max(max_abs_diff(w.value().row(row), &wo));
        }
    }
    worst
}

/// Relative gap, so logits in the hundreds are held to the same digits.
pub fn lse_gap(cases: usize, seed: u64) -> f64 {
    use star_swarm::tensor::lse_loss;
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let n = r.gen_range(2..12);
        let scale = [1.0, 10.0, 300.0][r.gen_range(0..3)];
        let q = random_vec(&mut r, n, scale);
        let k = r.gen_range(0..n);
        let got = lse_loss(&Tensor::vector(q.clone()), k).unwrap();
        let want = naive_lse(&q, k);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
        let tape = Tape::new();
        let rows = tape.constant(Tensor::new(vec![1, n], q).unwrap()).lse_rows(vec![k]).unwrap();
        assert_eq!(rows.value().data()[0], got);
    }
    worst
}

/// Number of seeded cases where some ordering of `k ≤ 4` messages changed
/// any bit of the pooled fused state.
pub fn permutation_failures(cases: usize, seed: u64) -> usize {
    use star_swarm::perception::MemoryState;
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let bank = MessageBank::<f64>::new(&mut store, 4, 7, Aggregation::Pooled, &mut r).unwrap();
    let mut failures = 0;
    for _ in 0..cases {
        let k = r.gen_range(1..=4);
        let own = MemoryState {
            m: random_tensor(&mut r, &[7], 3.0),
            w: random_tensor(&mut r, &[7], 3.0),
        };
        let msgs: Vec<Tensor<f64>> = (0..k).map(|_| random_tensor(&mut r, &[7], 3.0)).collect();
        let reference = bank.fuse(&store, &own, &msgs, 4).unwrap();
        let stable = permutations(k).into_iter().all(|perm| {
            let shuffled: Vec<_> = perm.iter().map(|&i| msgs[i].clone()).collect();
            bank.fuse(&store, &own, &shuffled, 4).unwrap().m_hat.data() == reference.m_hat.data()
        });
        failures += usize::from(!stable);
    }
    failures
}

/// A run small enough to train in well under a second.
pub const TINY_CONFIG: &str = "\
[data]
task = digits
train_samples = 24
test_samples = 12

[world]
horizon = 3

[model]
feature = 6
goal_feature = 3

[train]
batch = 2
batches_per_epoch = 2
stage1_epochs = 2
stage2_epochs = 2
stage3_epochs = 2

[eval]
seeds = 2
batch = 6
scalability_robots = 2,3
removal_robots = 4
timing_robots = 1,2
timing_max_horizon = 4
";

/// Every file below `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
