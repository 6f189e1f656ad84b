//! Numerical laboratory for quantitative stability of the Yamabe equation:
//! bubbles and their interactions, the deficit Gamma(u) = |L_g u - u^{2*-1}|_{H^{-1}},
//! constrained bubble fits, coercivity spectra, and scaling laws on model manifolds.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bubble_euclid;
pub mod bubble_profiles;
pub mod decomposition;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model_manifold;
pub mod quad_engine;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double precision bubble.
pub type EuclideanBubbleF64 = bubble_euclid::EuclideanBubble<f64>;
/// Single precision bubble.
pub type EuclideanBubbleF32 = bubble_euclid::EuclideanBubble<f32>;
