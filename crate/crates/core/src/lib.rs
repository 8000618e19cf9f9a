//! Simulating SGD as a quantized Markov chain: encode parameter
//! trajectories as digit strings, estimate per-coordinate transition kernels
//! from a next-digit predictor, and forecast by propagating those kernels.

pub mod error;
pub mod experiment;
pub mod forecast;
pub mod kernel;
pub mod provider;
pub mod quantizer;
pub mod scaling;
pub mod sim;

pub use error::{Error, Result};
pub use quantizer::{AffineMap, Band, CoordinateCodec, Precision, StateDistribution, StateId};
