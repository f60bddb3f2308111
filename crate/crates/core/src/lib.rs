//! Software emulation of a free-space optical video link.
//!
//! The pipeline mirrors a hardware testbed: a video source is segmented
//! into CRC-protected frames, FEC-encoded and interleaved, sent with on-off
//! keying through a turbulent atmospheric channel, detected, decoded and
//! reassembled with freeze-frame concealment. Channel parameters can be
//! changed while a run is in progress.
//!
//! - [`channel`]: path loss, turbulence fading and pointing loss
//! - [`phy`]: OOK modulation, noisy channel and detection
//! - [`fec_framing`]: block codes, interleaver, CRC-32 and frame format
//! - [`transport`]: PGM frames, segmentation, reassembly and PSNR
//! - [`runtime`]: scenario config, tick engine and batch runner

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod fec_framing;
pub mod phy;
pub mod rng;
pub mod runtime;
pub mod transport;
