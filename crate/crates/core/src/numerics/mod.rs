//! Dense-matrix primitives, layer kernels with analytic backward passes,
//! the Adam optimizer and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod layers;
mod matrix;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, numeric_gradient, relative_error};
pub use layers::{
    dropout_backward, dropout_forward, gelu, gelu_backward, gelu_derivative, gelu_forward,
    layernorm_backward, layernorm_forward, linear_backward, linear_forward, normal_cdf,
    normal_pdf, DropoutCache, GeluCache, LayerNormCache, LayerNormGrads, LinearCache,
    LinearGrads, LAYERNORM_EPS,
};
pub use matrix::{transpose_blocks, Matrix};
pub use rng::{mix64, SeededRng};
