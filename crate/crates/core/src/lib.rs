//! Image inpainting with Fourier convolutions, from scratch: an f64
//! autodiff tensor engine, FFC-based generator, adversarial training, and
//! evaluation tooling.

pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod erf;
pub mod error;
pub mod experiments;
pub mod ffc;
pub mod fft;
pub mod imageio;
pub mod layers;
pub mod losses;
pub mod maskgen;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{backward, GradStore, Tensor};
