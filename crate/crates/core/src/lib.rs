//! Coded index modulation over Gaussian broadcast channels with receiver
//! side information.
//!
//! * [`modulation`]: lattice index modulations, subcodes and side-information gain
//! * [`channel`]: AWGN model and ML detection on expurgated subcodes
//! * [`capacity`]: Gaussian-input limits and Monte-Carlo mutual information
//! * [`fec`]: terminated convolutional codes and BCJR decoding
//! * [`bicm`]: bit-interleaved coded modulation with iterative demapping
//! * [`sim`]: reproducible BER simulation and CSV output
//! * [`cli`]: the `icm` command-line front end

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bicm;
pub mod capacity;
pub mod channel;
pub mod cli;
pub mod error;
pub mod fec;
pub mod modulation;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
