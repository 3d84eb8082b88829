//! Efficient multi-scale attention (EMA) with cross-spatial fusion, plus
//! coordinate-attention and squeeze-excitation baselines, built on a small
//! dense-f64 tensor core with tape-based reverse-mode differentiation.
//!
//! The crate also carries a symbolic graph layer that reproduces the
//! parameter and multiply-accumulate budgets of ResNet-50/101 (CIFAR form)
//! and MobileNetV2 with any of the three modules attached, a CIFAR-100
//! loader with a synthetic stand-in task, and a small training harness.
//!
//! Start with the `examples/` directory: each file there is a runnable tour
//! of one capability (forward passes, gradient checking, complexity
//! analysis, training, benchmarking, parameter serialization). The `emattn`
//! binary wraps the same entry points behind `analyze`, `gradcheck`,
//! `train`, and `bench` subcommands.
//!
//! Everything is single-threaded and deterministic: every stochastic entry
//! point takes an explicit seed, and repeated runs produce bit-identical
//! tensors, reports, and checkpoints.

pub mod attention;
pub mod bench;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod report;
pub mod sample;
pub mod tape;
pub mod tensor;
pub mod train;

pub use attention::{
    ca_forward, ema_forward, load_params, param_count_module, save_params, se_forward,
    AttentionKind, AttentionParams, CaParams, EmaParams, EmaVariant, SeParams,
};
pub use bench::{median, run_bench, BenchConfig, BenchReport};
pub use data::{count_cifar100_records, load_cifar100, synth_quadrant, Dataset, Split};
pub use error::{Error, Result};
pub use gradcheck::{grad_check_attention, CheckTarget, GradCheckReport};
pub use graph::{
    attach_attention, build_backbone, build_mobilenetv2, build_resnet50_cifar,
    build_resnet101_cifar, ComplexityReport, LayerKind, LayerSpec, ModelGraph,
};
pub use report::{Report, ReportFormat};
pub use tape::{Gradients, Tape, VarId};
pub use tensor::{Shape, Tensor};
pub use train::{
    sgd_step, train_toy, AttentionConfig, ToyNet, TrainConfig, TrainReport, TOY_CHANNELS,
};
