//! Linear RNNs and their equivalent scaled convolutional models.
//!
//! A linear RNN `h_t = W h_{t-1} / sqrt(n) + F x_t`, `y_t = C h_t / sqrt(n)`
//! realizes a causal convolution with impulse response
//! `L_j = C W^j F / n^{(j+1)/2}`. In the wide limit its neural tangent
//! kernel equals that of a convolution whose filters are reweighted by
//! geometrically decaying factors `rho_j`, so gradient descent on the RNN
//! moves long-lag coefficients exponentially slowly.
//!
//! | module | contents |
//! |--------|----------|
//! | [`seq`], [`sampler`], [`scales`], [`impulse`] | containers, Toeplitz operator, seeded Gaussians, SNR noise |
//! | [`rnn`] | initialization, forward pass, BPTT gradients, spectral radius |
//! | [`conv`] | scaled convolution, scale factors, gradients |
//! | [`realization`] | RNN to convolution and back (diagonal/Vandermonde construction) |
//! | [`ntk`] | closed-form and empirical kernels, Gram matrices, kernel predictor |
//! | [`trainer`] | full-batch GD, trajectory logs, dynamics comparison, implicit-bias bound |
//! | [`se`] | state-evolution recursions, finite-width Monte Carlo, Gaussian W2 |
//! | [`experiments`], [`io`], [`config`] | experiment drivers and file formats used by the CLI |

// index loops read closer to the formulas in numeric code
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod conv;
pub mod error;
pub mod experiments;
pub mod impulse;
pub mod io;
pub mod linalg;
pub mod ntk;
pub mod realization;
pub mod rnn;
pub mod sampler;
pub mod scales;
pub mod se;
pub mod seq;
pub mod trainer;

pub use conv::{conv_forward, conv_gradients, conv_impulse, scale_factors, ConvParams};
pub use error::{Error, Result};
pub use impulse::ImpulseResponse;
pub use rnn::{init_rnn, rnn_forward, rnn_gradients, rnn_impulse, spectral_radius, InitVariances, RnnParams};
pub use sampler::{gaussian_matrix, SeededSampler};
pub use scales::{ScaleProvenance, ScaleVector};
pub use seq::{toeplitz_of, Dataset, Sequence, ToeplitzOp};
