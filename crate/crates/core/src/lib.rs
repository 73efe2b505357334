//! Restricted Boltzmann machine and deep belief network machinery for
//! process fault diagnosis.
//!
//! The crate is `no_std` (it only needs `alloc`) and contains every numeric
//! part of the pipeline: RBM energies and conditionals, the interchangeable
//! model-expectation samplers (exact enumeration, contrastive divergence and
//! an annealing sampler that stands in for a quantum annealer), generative
//! and discriminative training, data windowing, a synthetic process generator
//! and the evaluation metrics. File formats, the CLI and anything touching the
//! filesystem live in the `qdiag` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod classifier;
pub mod data;
pub mod error;
pub mod eval;
pub mod math;
pub mod matrix;
pub mod pipeline;
pub mod rbm;
pub mod sampler;
pub mod seed;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rbm::{JointState, QuboProblem, RbmParams, UnitRef, VisibleKind};
pub use sampler::{AnnealConfig, ExpectationEstimate, ModelSampler};
