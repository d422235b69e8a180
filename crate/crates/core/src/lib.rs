//! Recovery of piecewise-linear curves from the low-order moments of
//! high-noise Gaussian point clouds.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checks;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod io;
pub mod moments;
pub mod optim;
pub mod ordering;
pub mod plot;
pub mod pwl;
pub mod recover;
pub mod rng;
pub mod tensor;
pub mod tpm;
pub mod tracer;

pub use error::{Error, Result};
pub use moments::{exact_moments, relaxed_moments, MomentTriple};
pub use pwl::{curve_distance, random_curve, PwlCurve, SegmentWeights};
pub use tensor::Tensor3;
