//! Differentiable tensor kernel with a family of lightweight attention
//! blocks (SE, triplet attention, and their combinations), a miniature
//! stage-based CNN hosting them, seeded data pipelines, and a deterministic
//! training loop. Everything runs on CPU with reproducible results: same
//! seed, same bytes.

pub mod attention;
pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod element;
pub mod error;
pub mod ops;
pub mod parallel;
pub mod rng;
pub mod shape;
pub mod train;
pub mod tensor;
pub mod verify;

pub use attention::{
    zpool, AttentionBlock, AttentionKind, BranchRole, SeBlock, TaBranch, TripSeBlock,
    TripSeVariant, TripletAttention,
};
pub use autodiff::{finite_diff_check, finite_diff_check_many, no_grad, NoGrad};
pub use backbone::{BackboneConfig, BasicBlock, MiniBackbone, StageSpec};
pub use config::{DataSource, RunConfig};
pub use data::{
    augment, batches, hflip, load_fer_csv, resize_bilinear, rotate_bilinear, stack,
    synth_dataset,
    AugmentConfig, Sample, Split,
};
pub use element::Element;
pub use error::{Error, Result};
pub use ops::{BatchNorm2d, Conv2d, EwKind, Linear, ReduceMode};
pub use shape::Shape;
pub use train::{
    cross_entropy, evaluate, load_train_state, run_training, save_train_state, sig6,
    train_epoch, EvalReport, Metrics, Monitor, RAdam, Scheduler, SchedulerKind, TrainPlan,
    TrainReport, METRICS_HEADER,
};
pub use tensor::{Fill, Tensor};
pub use verify::{gradcheck_backbone, gradcheck_block, DEFAULT_TOL};
