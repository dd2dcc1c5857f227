//! Uncertainty-guided student-teacher semi-supervised semantic segmentation.
//!
//! A Bayesian teacher (a Dense-UNet evaluated with Monte Carlo spatial
//! dropout) produces soft labels plus a per-pixel confidence map for
//! unlabeled images. A student with the same architecture is then trained on
//! labeled images and on the teacher's soft labels, where each pseudo-labeled
//! pixel is weighted by the teacher's confidence.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, rendering and the
//! command-line driver live in the `segssl` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod inference;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use grid::{Grid, LabelMap, ScoreMap};
pub use inference::{ConfidenceMap, McConfig, SoftLabelRecord, UncertaintyMap};
pub use model::{ModelConfig, SegmentationModel};
pub use tensor::Tensor;
