//! Adaptive internal-model regulator synthesis and closed-loop verification.
//!
//! The crate builds output-feedback regulators for a class of nonlinear
//! plants driven by an oscillatory exosystem with unknown constant
//! parameters, simulates the resulting closed loop with a deterministic
//! fixed-step integrator, and checks the structural properties the design
//! promises: bounded trajectories, output regulation, parameter convergence
//! under persistent excitation, and attractor geometry.

pub mod analysis;
pub mod cli;
pub mod closed_loop;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod reduction;
pub mod regulator;
pub mod scenarios;
