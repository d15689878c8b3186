//! Learning the discrete flow map of an unknown system with Gaussian process
//! regression, extracting state-dependent affine models from the gradient of
//! the posterior mean, and closing the loop with a receding-horizon
//! controller.
//!
//! The pipeline, bottom to top:
//!
//! * [`kernels`]: RBF / periodic / product kernels with analytic gradients.
//! * [`gp`]: multi-output GP on state displacements, posterior mean,
//!   variance and the Jacobian of the mean.
//! * [`matfun`]: `expm`, `logm` and a finite-horizon Riccati iteration.
//! * [`linearize`]: discrete `(Ad, Bd, Cd)` triples from the GP and the
//!   exact discrete/continuous conversions.
//! * [`plants`]: pendulum and two-wheeled balancing robot used as ground truth.
//! * [`datasets`]: transition collection, Ward-linkage subsampling, CSV I/O.
//! * [`qpsolve`]: ADMM solver for sparse convex QPs.
//! * [`mpc`]: the finite-horizon problem and the receding-horizon policy.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod datasets;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linearize;
pub mod matfun;
pub mod mpc;
pub mod plants;
pub mod qpsolve;

pub use error::{Error, Result};
