//! Tabular offline reinforcement learning with pessimistic value shaping.
//!
//! The crate implements exact finite-MDP dynamic programming, gridworld maze
//! environments, behavior-policy dataset generation, a bootstrapped dynamics
//! ensemble for out-of-distribution state scoring, the pessimistic
//! policy-evaluation variants built on top of conservative Q-learning, and
//! numeric evaluations of the lower-bound and ordering guarantees those
//! variants come with.
//!
//! Everything is `no_std` + `alloc`; IO, file formats and the CLI live in the
//! companion `pessorl-lab` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod math;
pub mod maze;
pub mod mdp;
pub mod theory;
pub mod trainer;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
