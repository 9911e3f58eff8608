//! Poly-scheduled Adam training, evaluation, checkpoints and the ablation protocol.

mod ablation;
mod checkpoint;
mod eval;
mod fit;
mod optim;
mod schedule;
mod step;

pub use ablation::{ablate, ablation_table, AblationRow};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use eval::{evaluate, overlay, predict_image, write_predictions, Evaluation, Prediction};
pub use fit::{fit, fit_samples, history_csv, FitOutcome, HistoryRow};
pub use optim::{Adam, OptimizerConfig};
pub use schedule::{poly_lr, ScheduleConfig};
pub use step::{batch_tensor, compute_gradients, nchw_to_rows, rows_to_nchw, train_step, Gradients, LossRecord, TrainState, BN_MOMENTUM};
