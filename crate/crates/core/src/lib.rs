//! Boundary detection from deep convolutional feature stacks.
//!
//! The detection pipeline selects candidate contour points, interpolates a
//! descriptor for every candidate from a precomputed feature stack, regresses
//! the fraction of human annotators expected to agree on a boundary there,
//! and writes the predictions back into a dense boundary map:
//!
//! 1. [`candidates`]: gradient proxy (or an imported edge map), thinning, selection.
//! 2. [`features`]: layer-streaming bilinear interpolation into a [`features::DescriptorMatrix`].
//! 3. [`regressor`]: two fully connected layers, quartile balancing, hard-positive mining,
//!    and a ridge linear probe.
//! 4. [`boundary_map`]: assembly and max-pool downscaling.
//!
//! Consumers of the resulting maps live alongside it: [`spectral`] builds an
//! intervening-contour affinity and its smallest generalized eigenvectors,
//! [`semlabel`] attaches object classes to boundary pixels, and [`eval`] holds
//! the benchmark metrics. [`tensor_io`] defines the on-disk formats.

pub mod boundary_map;
pub mod candidates;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod regressor;
pub mod semlabel;
pub mod spectral;
pub mod tensor_io;

pub use error::{Error, Result};
