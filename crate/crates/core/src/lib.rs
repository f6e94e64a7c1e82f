//! Link-level workbench for Wi-Fi CSI feedback.
//!
//! Two feedback schemes share one evaluation chain:
//!
//! * the 802.11 compressed beamforming report ([`givens`]): per-subcarrier
//!   Givens-rotation angles, Type 0/1 quantization, optional subcarrier grouping;
//! * EFNet ([`efnet`]): a convolutional autoencoder with channel-attention refine
//!   blocks that compresses a whole packet's beamforming vectors into an
//!   `M`-element codeword quantized to `q` bits per element.
//!
//! [`channel`] produces synthetic frequency-selective MIMO channels and the
//! beamforming "images" the autoencoder consumes, [`eval`] implements cosine
//! similarity, EVM, MCS-mapped gross throughput and sounding-adjusted net
//! throughput, and [`sounding`] frames feedback payloads and times the
//! sounding exchange.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod bitpack;
pub mod channel;
pub mod efnet;
pub mod error;
pub mod eval;
pub mod givens;
pub mod linalg;
pub mod sounding;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, SvdResult};
pub use num_complex::Complex64;
