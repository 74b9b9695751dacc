//! Compiler pipeline for training small neural networks on extreme-edge
//! devices: a static graph IR, reverse-mode differentiation as a graph
//! transformation, low-rank adaptation rewrites, a liveness-driven memory
//! planner for an L1/L2/L3 hierarchy, a calibrated latency model for a
//! RISC-V cluster plus a GEMM accelerator, and a portable C99 backend.
//!
//! The pipeline stages compose over one artifact type, [`ir::Graph`]:
//!
//! ```text
//! models::build_*  ->  peft::apply_strategy  ->  autodiff::build_training_graph
//!                 ->  memplan::{liveness, plan_tiles, allocate, transfer_volume}
//!                 ->  perf::estimate  /  exec::run_step  /  codegen::emit
//! ```

pub mod autodiff;
pub mod codegen;
pub mod exec;
pub mod ir;
pub mod memplan;
pub mod models;
pub mod peft;
pub mod perf;
pub mod report;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
