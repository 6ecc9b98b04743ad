//! Numerical toolkit for the three-dimensional rotating Oseen system.
//!
//! The library evaluates the fundamental solution of the stationary system
//!
//! ```text
//!     -Δu + τ∂₁u − (ω×z)·∇u + ω×u + ∇π = f,   div u = 0,
//! ```
//!
//! with translation along `e₁` (Reynolds number `τ > 0`) and rotation about
//! `e₁` (Taylor number `ϱ ≠ 0`, `ω = ϱe₁`). The velocity part of the kernel
//! is a time integral
//!
//! ```text
//!     𝔷(y,z) = ∫₀^∞ Λ(y − τt e₁ − e^{−tΩ}z, t) · e^{−tΩ} dt
//! ```
//!
//! over a tensor `Λ` built from the heat kernel and the Kummer function
//! ₁F₁(1, 5/2, ·). On top of the kernel sit the anisotropic wake weights
//! `s_τ(x) = 1 + τ(|x| − x₁)`, quadrature and measurement utilities, a
//! weighted-convolution exponent calculus, numerical verification of the
//! decay lemmas, and the assembly of the far-field asymptotic expansion
//! (leading term plus remainder functionals).
//!
//! Module map:
//!
//! * [`scalar_kernels`] — heat kernel, Kummer function, the tensor `Λ` and
//!   its derivatives, pressure kernel `E₄`.
//! * [`oseen_kernel`] — flow parameters, rotations `e^{±tΩ}`, the kernel
//!   `Γ(y,z,t)`, its derivatives and pointwise majorant.
//! * [`time_quadrature`] — adaptive evaluation of `𝔷 = ∫₀^∞ Γ dt` with
//!   certified error estimates.
//! * [`wake_geometry`] — wake weights, sphere quadrature, decay-slope fits.
//! * [`inequality_lab`] — envelope verification of the decay lemmas.
//! * [`convolution_tables`] — exponent predictor and Monte-Carlo verifier
//!   for the weighted convolution calculus.
//! * [`expansion`] — asymptotic-expansion coefficients, boundary and volume
//!   functionals, remainder terms and their decay scans.
//!
//! All operations are pure functions of their arguments and safe to call
//! concurrently. Batch helpers that parallelize internally write to
//! preallocated slots so results never depend on thread scheduling.

mod error;
pub mod linalg;
pub mod oseen_kernel;
pub mod convolution_tables;
pub mod expansion;
pub mod inequality_lab;
pub mod scalar_kernels;
pub mod time_quadrature;
pub mod wake_geometry;

pub use error::{Error, Result};
pub use linalg::{Mat3, Vec3};

/// Library version, embedded in CLI reports for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
