//! Dynamics of g_β = β℘_Λ on pole-critical triangular lattices: evaluation,
//! parameter maps, nested cylinder families and dimension bounds.

pub mod cantor;
pub mod dimension;
pub mod dynamics;
pub mod lattice;
pub mod mp;
pub mod util;
pub mod weierstrass;

pub use num_complex::Complex64 as C64;
