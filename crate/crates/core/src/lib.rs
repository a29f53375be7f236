//! Speaker-verification pipeline built around a residual shrinkage
//! ResNet-34 embedding extractor.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`audio`]: WAV I/O, trial lists, fixed-length crop sampling
//! - [`dsp`]: pre-emphasis, STFT and 64-band log-mel features
//! - [`augment`]: SNR-controlled additive noise and RIR reverberation
//! - [`tensor`]: dense tensors with reverse-mode gradients and a
//!   finite-difference gradient checker
//! - [`net`]: RSBU-CW blocks, the trunk, attentive pooling heads and the
//!   512-dim embedding model
//! - [`loss`]: additive-margin softmax
//! - [`train`]: Adam optimization with the step-decay schedule
//! - [`verify`]: crop-pair cosine scoring, score normalization and
//!   fusion, EER and minimum detection cost

pub mod audio;
pub mod augment;
pub mod dsp;
pub mod error;
pub mod loss;
pub mod net;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
