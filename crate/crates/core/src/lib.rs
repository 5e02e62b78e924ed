//! Trainable analog computers modelled as linear dynamic systems with
//! nonlinear feedback, trained by backpropagating errors through the same
//! (reciprocal) medium.
//!
//! The crate is organised bottom-up:
//!
//! * [`signal`] holds multichannel traces, impulse-response kernels and the
//!   causal / anti-causal convolution pair.
//! * [`system`] simulates the feedback plant forward in time and runs the
//!   adjoint pass backward in time.
//! * [`masking`] converts discrete sequences to and from plant signals
//!   (time multiplexing) and computes mask gradients.
//! * [`gradients`] assembles kernel and mask gradients and provides the
//!   finite-difference oracle used to check them.
//! * [`models`] builds the two concrete plants (acoustic tube, optical delay
//!   network) and the measurement-noise model.
//! * [`tasks`], [`training`] and [`reductions`] cover benchmark data, the
//!   optimisation loop and the dense-network equivalences.

// Index loops mirror the matrix formulas; negated comparisons reject NaN.
#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments
)]

pub mod error;
pub mod gradients;
pub mod masking;
pub mod models;
pub mod reductions;
pub mod serialize;
pub mod signal;
pub mod system;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use gradients::{GradCheckConfig, GradCheckReport, GradientBundle};
pub use masking::MaskSet;
pub use models::{NoiseModel, OpticalParams, TubeParams};
pub use signal::{Kernel, Signal};
pub use system::{BackwardPath, BackwardTrace, ForwardTrace, Nonlinearity, PhysicalSystem};
pub use tasks::SequenceDataset;
pub use training::{TrainConfig, TrainingLog};

/// Seeded random stream used everywhere a simulation needs randomness.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's standard random stream from a seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}
