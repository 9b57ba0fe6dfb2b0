//! Variational toolkit on the first Heisenberg group.
//!
//! Exact group arithmetic lives in [`heis`]; everything else works on uniform
//! (x, y, t) grids with Dirichlet masks. The discrete sub-Laplacian is
//! assembled in divergence form in [`hdiff`] so that symmetry and the energy
//! identity hold to rounding.

pub mod bubbles;
pub mod cli;
pub mod error;
pub mod extremals;
pub mod grid;
pub mod hdiff;
pub mod heis;
pub mod io;
pub mod measures;
pub(crate) mod par;
pub mod profiles;
pub mod subcrit;

pub use error::{Error, Result};
pub use grid::{field_from_function, pairing, quadrature_lp, DomainMask, Field, Grid, MaskShape};
pub use heis::{GroupParams, GroupPoint};
