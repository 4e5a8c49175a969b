//! Loss, optimizer, schedules, and the training loop.

mod loss;
mod metrics;
mod radam;
mod runner;
mod scheduler;

pub use loss::cross_entropy;
pub use metrics::{sig6, Metrics, METRICS_HEADER};
pub use radam::RAdam;
pub use runner::{
    evaluate, load_train_state, run_training, save_train_state, train_epoch, EvalReport, Monitor,
    TrainPlan, TrainReport,
};
pub use scheduler::{Scheduler, SchedulerKind};
