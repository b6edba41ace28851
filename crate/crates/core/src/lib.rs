//! Popularity modeling, optimal random caching and throughput–outage analysis
//! for cache-aided device-to-device (D2D) networks.
//!
//! The crate is organized bottom-up:
//!
//! * [`popularity`]: the Mandelbrot-Zipf (MZipf) request law, generalized
//!   harmonic partial sums with integral sandwich bounds, and rank sampling.
//! * [`fitting`]: access-log ingestion, unique-access deduplication and
//!   KL-distance fitting of MZipf parameters.
//! * [`caching`]: the hit-rate-optimal caching distribution (exact
//!   water-filling), the exact hit probability and the asymptotic constants.
//! * [`asymptotics`]: closed-form hit probabilities and leading-order
//!   throughput–outage tradeoffs, with regime classification.
//! * [`simulator`]: Monte Carlo simulation of the clustered grid network
//!   under the protocol model.

pub mod asymptotics;
pub mod caching;
mod error;
pub mod fitting;
pub mod popularity;
pub mod simulator;

pub use error::{Error, Result};
