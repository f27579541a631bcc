//! Full-duplex two-stream video object segmentation at desk scale.
//!
//! The crate bundles everything needed to train and study the architecture
//! end to end on a synthetic corpus:
//!
//! - [`data`]: clip records and bit-exact mask/flow/frame I/O
//! - [`encoder`]: appearance/motion/merging backbones and flow colouring
//! - [`rcam`]: relational cross-attention between the two streams
//! - [`bpm`]: the cascaded bidirectional purification units
//! - [`decoder`]: pyramid-pooling decoders and the training objective
//! - [`synth`]: moving-shapes clip generator with an analytic flow oracle
//! - [`metrics`]: the U-VOS / V-SOD evaluation suite
//! - [`harness`]: training schedule, checkpoints, evaluation and ablations
//!
//! The numeric substrate is a small tape-based autodiff ([`graph`]) over
//! dense f64 tensors ([`tensor`]).

pub mod bpm;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod flops;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rcam;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
