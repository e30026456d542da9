//! Multi-robot map classification with a bounded-degree star-graph
//! communication structure.
//!
//! Each robot sees a small window of a shared map, encodes its feature
//! history with an LSTM, exchanges memory with at most `δ` in-range
//! neighbours through a bank of per-degree LSTM cells, and classifies the
//! map at the end of the episode. Training runs in three stages with
//! disjoint trainable parameter groups.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the 64-bit instantiation used by the trainer and the
//! command line.

pub mod environment;
pub mod fusion;
pub mod harness;
pub mod perception;
pub mod scalar;
pub mod tensor;
pub mod topology;
pub mod trainer;

pub use scalar::Scalar;

/// Default real type of the simulator.
pub type Real = f64;

pub type Tensor = tensor::Tensor<Real>;
pub type ParamStore = tensor::ParamStore<Real>;
pub type Tape = tensor::Tape<Real>;
pub type Model = perception::Model<Real>;
pub type MessageBank = fusion::MessageBank<Real>;
pub type ThetaBundle = trainer::ThetaBundle<Real>;
