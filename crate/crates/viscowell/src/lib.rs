//! Desk-scale simulator and analysis toolkit for a singular nonlocal
//! viscoelastic wave problem with a power source term.
//!
//! The equation lives on (0, ell) with the degenerate radial operator
//! (1/x)(x u_x)_x, a memory convolution against a relaxation kernel g, an
//! optional linear damping and the source |u|^{p-2} u.  The boundary data are
//! u(ell, t) = 0 together with the nonlocal condition ∫ x u dx = 0.
//!
//! The crate provides:
//!
//! - [`kernels`]: relaxation kernels, their decay certificates and the
//!   structural hypothesis checks;
//! - [`space`]: weighted quadrature, norms and the sharp Poincare and
//!   embedding constants;
//! - [`solver`]: the explicit constrained time stepper;
//! - [`energetics`]: the energy functionals and dissipation identity;
//! - [`well`]: potential-well classification of initial data, blow-up
//!   certificates and along-trajectory inequality checks;
//! - [`decay`]: fitting trajectory energies against the proved decay
//!   envelopes;
//! - [`config`], [`report`], [`csvio`]: the experiment front end used by the
//!   `viscowell` binary and the runnable examples.

pub mod config;
pub mod csvio;
pub mod decay;
pub mod energetics;
pub mod error;
pub mod kernels;
pub mod report;
pub mod solver;
pub mod space;
pub mod well;

pub use error::{Error, Result};
