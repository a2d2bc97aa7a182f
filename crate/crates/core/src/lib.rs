//! Compound-scaled MBConv image classifier trained as a snapshot ensemble.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`ops`]: NCHW tensors and layer kernels with hand-written
//!   backward passes.
//! * [`arch`] and [`model`]: stage tables, compound scaling and the assembled
//!   network.
//! * [`train`]: Adam under a cyclic cosine schedule, one snapshot per cycle.
//! * [`augment`], [`ensemble`], [`metrics`], [`gradcam`]: data augmentation,
//!   hard/soft voting, evaluation and saliency maps.
//! * [`io`] and [`cli`]: datasets, snapshot files and the command line.

pub mod arch;
pub mod augment;
pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradcam;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod train;

pub use cli::run_cli;
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
