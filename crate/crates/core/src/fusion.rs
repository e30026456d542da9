//! Star-graph message fusion.
//!
//! A robot with `k ≥ 1` neighbours runs each neighbour's memory `m(j)` as
//! the input of LSTM cell `H_k`, with its own `(m(i), w(i))` as the
//! recurrent state, and maps the collected outputs through head `H̄_k` to
//! the fused state `m̂(i)`. A robot with no neighbours keeps `m(i)`.
//!
//! The bank holds exactly `δ` cells and `δ` heads no matter how many robots
//! are deployed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::perception::{Affine, LstmCell, MemoryState};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Reduce, Result, Tape, Tensor, TensorError, Var};

/// How a robot combines the per-neighbour cell outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Mean over neighbours, then a `c → c` head per `k`. Permutation invariant.
    #[default]
    Pooled,
    /// Concatenation in ascending sender id, then a `k·c → c` head per `k`.
    Concat,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pooled => "pooled",
            Self::Concat => "concat",
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pooled" => Ok(Self::Pooled),
            "concat" => Ok(Self::Concat),
            other => Err(format!("unknown fusion mode `{other}` (pooled|concat)")),
        }
    }
}

/// Whether the graph honours the degree bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degree {
    /// Every robot has at most `δ` neighbours; `k > δ` is an error.
    Bounded,
    /// Complete-graph baseline: any number of neighbours. Pooled banks sum
    /// the cell outputs instead of averaging them and robots with `k > δ`
    /// reuse `H_δ`/`H̄_δ`. Concat banks cannot serve `k > δ`.
    Unbounded,
}

/// Per-degree LSTM cells `H_1..H_δ` and heads `H̄_1..H̄_δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageBank<S> {
    pub delta: usize,
    pub memory: usize,
    pub aggregation: Aggregation,
    cells: Vec<LstmCell>,
    heads: Vec<Affine>,
    _scalar: std::marker::PhantomData<S>,
}

/// Post-communication memory `m̂ = [v̂; û]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedState<S> {
    pub m_hat: Tensor<S>,
    /// Length of the classification prefix `v̂`.
    pub feature: usize,
}

impl<S: Scalar> FusedState<S> {
    /// `(v̂, û)`: the first `a` entries and the remaining `b`.
    pub fn split(&self) -> Result<(Tensor<S>, Tensor<S>)> {
        let d = self.m_hat.data();
        if self.feature == 0 || self.feature >= d.len() {
            return Err(TensorError::Index {
                op: "split",
                index: self.feature,
                len: d.len(),
            });
        }
        Ok((
            Tensor::vector(d[..self.feature].to_vec()),
            Tensor::vector(d[self.feature..].to_vec()),
        ))
    }
}

/// Stores `m̂` as the robot's memory for the next step; `w` is kept.
pub fn write_back<S: Scalar>(state: &MemoryState<S>, fused: &FusedState<S>) -> MemoryState<S> {
    MemoryState {
        m: fused.m_hat.clone(),
        w: state.w.clone(),
    }
}

impl<S: Scalar> MessageBank<S> {
    pub fn new<R: Rng>(
        store: &mut ParamStore<S>,
        delta: usize,
        memory: usize,
        aggregation: Aggregation,
        rng: &mut R,
    ) -> Result<Self> {
        if delta == 0 {
            return Err(TensorError::Invalid("message bank needs δ ≥ 1".into()));
        }
        let mut cells = Vec::with_capacity(delta);
        let mut heads = Vec::with_capacity(delta);
        for k in 1..=delta {
            cells.push(LstmCell::new(store, &format!("bank.cell{k}"), memory, memory, rng)?);
            let inputs = match aggregation {
                Aggregation::Pooled => memory,
                Aggregation::Concat => k * memory,
            };
            heads.push(Affine::new(store, &format!("bank.head{k}"), inputs, memory, rng)?);
        }
        Ok(Self {
            delta,
            memory,
            aggregation,
            cells,
            heads,
            _scalar: std::marker::PhantomData,
        })
    }

    /// θ₄: the cells.
    pub fn cell_params(&self) -> Vec<ParamId> {
        self.cells.iter().flat_map(|c| c.params()).collect()
    }

    /// θ̄₄: the heads.
    pub fn head_params(&self) -> Vec<ParamId> {
        self.heads.iter().flat_map(|h| h.params()).collect()
    }

    pub fn param_count(&self, store: &ParamStore<S>) -> usize {
        store.count(&self.cell_params()) + store.count(&self.head_params())
    }

    /// Batched fusion. Row `r` of `m`/`w` is one robot; `neighbours[r]`
    /// lists the rows it hears from, in ascending sender order.
    pub fn fuse_batch<'t>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        m: &Var<'t, S>,
        w: &Var<'t, S>,
        neighbours: &[Vec<usize>],
        degree: Degree,
    ) -> Result<Var<'t, S>> {
        let rows = m.shape()[0];
        if neighbours.len() != rows {
            return Err(TensorError::Shape {
                op: "fuse",
                left: m.shape(),
                right: vec![neighbours.len()],
            });
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut isolated = Vec::new();
        for (r, nb) in neighbours.iter().enumerate() {
            let k = nb.len();
            if k == 0 {
                isolated.push(r);
                continue;
            }
            let overflow = k > self.delta;
            if overflow && (degree == Degree::Bounded || self.aggregation == Aggregation::Concat) {
                return Err(TensorError::Invalid(format!(
                    "robot row {r} has {k} neighbours but the bank serves at most {}",
                    self.delta
                )));
            }
            groups.entry(k.min(self.delta)).or_default().push(r);
        }

        let mut pieces = Vec::new();
        if !isolated.is_empty() {
            pieces.push(m.gather_rows(isolated.clone())?.scatter_add_rows(isolated, rows)?);
        }
        for (k, centers) in groups {
            let mut center_rows = Vec::new();
            let mut sender_rows = Vec::new();
            let mut segments = Vec::with_capacity(centers.len());
            for &r in &centers {
                let start = center_rows.len();
                for &j in &neighbours[r] {
                    center_rows.push(r);
                    sender_rows.push(j);
                }
                segments.push((start..center_rows.len()).collect::<Vec<_>>());
            }
            let m_c = m.gather_rows(center_rows.clone())?;
            let w_c = w.gather_rows(center_rows)?;
            let x = m.gather_rows(sender_rows)?;
            let (m_bar, _) = self.cells[k - 1].step(tape, store, &m_c, &w_c, &x)?;
            let collected = match (self.aggregation, degree) {
                (Aggregation::Pooled, Degree::Bounded) => m_bar.segment_reduce(segments, Reduce::Mean)?,
                (Aggregation::Pooled, Degree::Unbounded) => m_bar.segment_reduce(segments, Reduce::Sum)?,
                (Aggregation::Concat, _) => {
                    let slots = (0..k)
                        .map(|s| m_bar.gather_rows(segments.iter().map(|seg| seg[s]).collect()))
                        .collect::<Result<Vec<_>>>()?;
                    Var::concat_cols(&slots)?
                }
            };
            let fused = self.heads[k - 1].forward(tape, store, &collected)?;
            pieces.push(fused.scatter_add_rows(centers, rows)?);
        }
        let mut total = pieces[0];
        for p in &pieces[1..] {
            total = total.add(p)?;
        }
        Ok(total)
    }

    /// Fuses one robot's state with `k` incoming messages, taken in the
    /// order given.
    pub fn fuse(
        &self,
        store: &ParamStore<S>,
        own: &MemoryState<S>,
        messages: &[Tensor<S>],
        feature: usize,
    ) -> Result<FusedState<S>> {
        let c = self.memory;
        let tape = Tape::new();
        let mut m_rows = own.m.data().to_vec();
        for msg in messages {
            if msg.len() != c {
                return Err(TensorError::Shape {
                    op: "fuse",
                    left: vec![c],
                    right: msg.shape().to_vec(),
                });
            }
            m_rows.extend_from_slice(msg.data());
        }
        let rows = messages.len() + 1;
        let mut w_rows = own.w.data().to_vec();
        w_rows.resize(rows * c, S::zero());
        let m = tape.constant(Tensor::new(vec![rows, c], m_rows)?);
        let w = tape.constant(Tensor::new(vec![rows, c], w_rows)?);
        let mut neighbours = vec![Vec::new(); rows];
        neighbours[0] = (1..rows).collect();
        let out = self.fuse_batch(&tape, store, &m, &w, &neighbours, Degree::Bounded)?;
        let m_hat = Tensor::vector(out.value().row(0).to_vec());
        Ok(FusedState { m_hat, feature })
    }
}
