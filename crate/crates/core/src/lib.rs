//! Semiclassical microlocal analysis on the flat torus `(ℝ/2πℤ)ⁿ`.
//!
//! Functions are stored as sparse Fourier coefficients, symbols are
//! quantized by exact lattice sums, and defect-set membership is read off
//! from the decay rate of probe norms as `h → 0`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod coisotropic;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod hamiltonian;
pub mod quantize;
pub mod symbol;
pub mod torus;
pub mod wavefront;

pub use error::{Error, Result};
pub use quantize::{Quantization, Quantizer};
pub use symbol::{Profile, Symbol, SymbolTerm};
pub use torus::{SemiclassicalFamily, TorusFunction};
