//! Simulation and analysis toolkit for multipartite Bell experiments under
//! hidden-influence models with local parts.
//!
//! The crate is organised bottom-up:
//!
//! * [`spacetime`]: boosts, lightcones, the finite-speed and before-before
//!   timing criteria, and the point-D construction.
//! * [`quantum`]: small state vectors, Born-rule behaviors, correlators and
//!   marginals.
//! * [`inequality`]: CHSH and chained Bell expressions, enumerated local
//!   bounds, numerically optimized quantum values and mixtures.
//! * [`hvmodels`]: coordination maps, effective behaviors and reproducible
//!   sampling of run records.
//! * [`signaling`]: setting-dependence of marginals, local-polytope
//!   membership and the local-parts feasibility program.
//! * [`cli`]: scenario files, presets and subcommands behind the
//!   `localparts` binary.

pub mod cli;
pub mod error;
pub mod hvmodels;
pub mod inequality;
pub mod lp;
pub mod quantum;
pub mod signaling;
pub mod spacetime;

pub use error::{Error, Result};
