//! Key-point focused optical flow estimation at desk scale.

pub mod ablation;
pub mod cli;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gradsuite;
pub mod io;
pub mod keypoints;
pub mod losses;
pub mod masks;
pub mod model;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use flow::FlowField;
pub use tensor::{backward, grad_check, Gradients, Init, Scalar, Tensor};
