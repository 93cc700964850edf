//! Projected Wirtinger Flow (PWF) for recovering structured signals from
//! phaseless Gaussian measurements `y_r = (a_r . x)^2`.
//!
//! The crate is split by concern:
//!
//! * [`model`]: measurement synthesis, the intensity and amplitude losses,
//!   their gradients, and the sign-invariant distance.
//! * [`constraints`]: regularizers and exact projections onto their
//!   sublevel sets.
//! * [`solver`]: the PWF iteration, step schedules and initializers.
//! * [`geometry`]: descent cones, Moreau-based cone projection and Monte
//!   Carlo statistical dimension.
//! * [`lemma_lab`]: empirical checks of the concentration and projection
//!   facts that drive the convergence guarantees.
//!
//! ```
//! use pwfkit::constraints::{ConstraintSet, SetKind};
//! use pwfkit::model::{gen_structured_signal, MeasurementSet, Structure};
//! use pwfkit::solver::{init_oracle, pwf_run, SolverConfig};
//!
//! let x = gen_structured_signal(&Structure::Sparse { s: 2 }, 32, 1).unwrap();
//! let meas = MeasurementSet::synthesize(x.values.view(), 80, 2).unwrap();
//! let set = ConstraintSet::new(SetKind::TopK { k: 2 }, 32).unwrap();
//! let z0 = init_oracle(x.values.view(), 1.0 / 15.0, 3).unwrap();
//! let mut config = SolverConfig::amplitude();
//! config.tol_rel = 1e-10;
//! let trace = pwf_run(&meas, &set, &config, z0.view(), Some(x.values.view())).unwrap();
//! assert!(trace.converged);
//! ```

pub mod constraints;
pub mod error;
pub mod geometry;
pub mod lemma_lab;
pub mod model;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/measurement-model.md")]
    mod measurement_model {}
    #[doc = include_str!("../../../book/src/constraints.md")]
    mod constraints {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/lemma-lab.md")]
    mod lemma_lab {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
