//! Differential-privacy primitives.
//!
//! Everything here is a pure function of its inputs plus an explicit RNG
//! handle, so callers on different threads only need their own [`SimRng`].
//!
//! [`SimRng`]: crate::rng::SimRng

mod calibrate;
mod clip;
mod labels;
mod params;
mod perturb;

pub use calibrate::{
    amplified_epsilon, amplified_gaussian_sigma, amplified_laplace_scale, attention_noise,
    gaussian_sigma, laplace_scale, padded_gaussian_sigma, vdp_noise,
};
pub use clip::{clip_l2, clip_l2_in_place};
pub use labels::{label_beta, label_probabilities, permute_labels};
pub use params::{NoiseKind, NoiseScale, PrivacyParams};
pub use perturb::{
    add_noise, draw_noise, gaussian_noise, laplace_noise, laplace_perturb, perturb_positive_normalize,
    perturb_with, positive_normalize, softplus, Activation,
};
