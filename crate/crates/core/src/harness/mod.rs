//! Configuration, checkpoints and the experiment commands.

pub mod checkpoint;
pub mod config;
pub mod experiments;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, DataConfig, EvalConfig, RunConfig, Task};
pub use experiments::{
    build_dataset, cmd_dataset, cmd_eval, cmd_robustness, cmd_scalability, cmd_timing, cmd_train, dump_edge_lists,
    eval_bundle, load_bundle, new_trainer, robustness, scalability, timing, EvalReport, HarnessError, RemovalRow,
    RobustnessReport, ScalabilityReport, SeedAccuracy, TimingReport, TimingRow, TrainOutput, REPORT_SCALE,
};
