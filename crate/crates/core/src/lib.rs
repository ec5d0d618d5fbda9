//! Semi-supervised communication signal recognition.
//!
//! * [`sigsim`]: QPSK emitters with power-amplifier fingerprints over AWGN.
//! * [`augment`]: rotation/flip plus segment-permutation strong augmentation.
//! * [`losses`]: cross-entropy, KL, MSE, pseudo-labeling and the scaled,
//!   symmetric swapped-prediction consistency loss.
//! * [`netcore`]: residual 1-D CNN with its own reverse-mode differentiation.
//! * [`trainer`]: the semi-supervised training loop with EMA weights.
//! * [`dataio`]: datasets, labeled/unlabeled assignment, binary persistence.
//! * [`config`]: the JSON run-configuration document.

pub mod augment;
pub mod config;
pub mod dataio;
pub mod error;
pub mod iq;
pub mod losses;
pub mod netcore;
pub mod rng;
pub mod sigsim;
pub mod trainer;

pub use error::{Error, Result};
pub use iq::IqVector;
