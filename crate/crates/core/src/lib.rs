//! Simulation and reconstruction of photon statistics from on/off
//! (click / no-click) detection at a set of quantum efficiencies.
//!
//! * [`states`]: photon distributions, joint two-mode distributions and
//!   density matrices, with generators for the usual state families.
//! * [`detection`]: the on/off measurement model and a seeded click sampler.
//! * [`em`] and [`bipartite`]: maximum-likelihood EM reconstruction for one
//!   and two modes.
//! * [`full_rho`]: density-matrix reconstruction from displaced,
//!   phase-modulated data.
//! * [`io`], [`config`], [`workflow`]: file formats and pipelines.

pub mod bipartite;
pub mod config;
pub mod detection;
pub mod em;
pub mod error;
pub mod full_rho;
pub mod io;
mod linpos;
mod special;
pub mod states;
pub mod workflow;

pub use error::{Error, Result};
pub use linpos::StopReason;
