//! Gaussian message-passing iterative detection (GMPID) for massive
//! multi-user MIMO uplink, its scaled-and-added variant SA-GMPID, exact MMSE
//! and Jacobi/Richardson baselines, large-system convergence analysis, and a
//! Monte Carlo harness.
//!
//! ```no_run
//! use gmpid::{detectors, model::{Dimensions, SystemInstance}, RngSeed};
//!
//! let dims = Dimensions::new(50, 400).unwrap();
//! let inst = SystemInstance::generate_uniform(dims, 1.0, 0.1, RngSeed(7)).unwrap();
//! let result = detectors::gmpid_run(&inst, &Default::default()).unwrap();
//! println!("{} after {} iterations", result.verdict, result.iterations_run);
//! ```

pub mod analysis;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod model;
mod rng;

pub use error::{Error, Result};
pub use rng::RngSeed;
