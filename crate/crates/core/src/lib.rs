//! Wave-corpuscle charge mechanics.
//!
//! Self-interaction nonlinearities built from form factors, free-space
//! Poisson solvers, split-step evolution of coupled NLS charges, exact
//! accelerating solitons, and the radial nonlinear hydrogen eigenproblem.

pub mod dynamics;
pub mod eigensolver;
pub mod fft3;
pub mod fields;
pub mod interp;
pub mod nonlin;
pub mod par;
pub mod quad;
pub mod soliton;
pub mod tridiag;
pub mod special;

pub use num_complex::Complex64;

pub type Vec3 = [f64; 3];
