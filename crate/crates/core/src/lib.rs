//! Geometry and optimization of linear convolutional networks (LCNs).
//!
//! Filters are identified with homogeneous bivariate polynomials: a filter
//! `w = (w_0, ..., w_{k-1})` stands for `w_0 x^{k-1} + w_1 x^{k-2} y + ... + w_{k-1} y^{k-1}`,
//! so composing stride-one convolutions is polynomial multiplication. The crate
//! builds on that identification:
//!
//! * [`poly`]: architectures, filter composition, Toeplitz/circulant matrices,
//!   the maps `π` and `π_s`, and D-dimensional convolutional tensors.
//! * [`rootlab`]: projective root finding, real root multiplicity patterns
//!   (rrmps), closed-form discriminants and balls-into-bins compatibility.
//! * [`funcspace`]: function-space membership, boundary detection and
//!   constructive factorization into an architecture.
//! * [`optim`]: square losses in filter coordinates and gradient descent.
//! * [`dynamics`]: gradient-flow invariants, fiber scales, Jacobian rank, NTK.
//! * [`critlab`]: critical points on multiple root loci and ED-degree tables.
//! * [`harness`]: seeded experiment protocols producing tables and grids.

pub mod critlab;
pub mod dynamics;
pub mod error;
pub mod format;
pub mod funcspace;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod poly;
pub mod rootlab;

pub use error::{LcnError, Result};
pub use poly::{Architecture, Filter, PolyR};
pub use rootlab::{Rrmp, RootTolerance};
