//! Input-waveform design for multi-carrier wireless power transfer through a
//! non-linear solid-state power amplifier (Rapp model) and a non-linear
//! rectenna.
//!
//! The crate is organized bottom-up:
//!
//! * [`signal`]: multisine waveforms on an evenly spaced sub-carrier grid.
//! * [`hpa`]: the SSPA forward/inverse maps, the sampled-baseband spectral
//!   map to post-amplifier weights, the ideal band-pass filter and the
//!   OBO/PE/APE efficiency metrics.
//! * [`channel`]: flat and tapped-delay-line Rayleigh channels.
//! * [`rectenna`]: the harvested-DC scaling term `z_dc`, its gradient and the
//!   end-to-end power transfer efficiency.
//! * [`numopt`]: the dense LCQP solver and damped Newton minimizer.
//! * [`model1`]: successive convex programming with an SQP inner loop over
//!   joint input/transmit weights.
//! * [`model2`]: successive convex programming with a log-barrier inner loop
//!   over transmit weights, plus input reconstruction.
//! * [`baselines`]: the ideal-amplifier optimum and the shared evaluation
//!   chain.
//! * [`experiment`]: configuration, sweeps and CSV/JSON output.

// `!(x > 0.0)` guards are how argument checks reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod hpa;
pub mod model1;
pub mod model2;
pub mod numopt;
pub mod rectenna;
pub mod signal;

pub use error::{Error, Result};
pub use num_complex::Complex64;
