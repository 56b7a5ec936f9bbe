//! Staged optimisation: identity and camera pre-training, channel
//! recombination with style alignment, then target-domain identity
//! consistency. Per-epoch loss logs and checkpoints.

mod checkpoint;
mod config;
mod optim;
mod run;
mod schedule;

pub use checkpoint::{checkpoint_dir, latest_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{TrainConfig, Variant};
pub use optim::{OptimizerConfig, Sgd};
pub use run::{LossReport, TrainData, Trainer};
pub use schedule::{LrScope, Stage, StageMode, StageSchedule};
