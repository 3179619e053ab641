//! Training loop, checkpoints, evaluation, confidence maps, and sweeps.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod maps;
pub mod sweep;
pub mod trainer;

pub use checkpoint::{load_checkpoint, load_checkpoint_checked, save_checkpoint, Checkpoint};
pub use config::{TrainConfig, TrainMode};
pub use eval::{evaluate, evaluate_pools, f1_scores, ClassScore, ConfusionMatrix, EvalReport};
pub use maps::render_maps;
pub use sweep::{run_sweep, SweepCell, SweepReport};
pub use trainer::{continue_training, split_for, train, train_on, train_supervised_baseline, MetricsLine, Streams, TrainOutcome, Trainer};
