//! Simulation and verification toolkit for a one-dimensional diffusion in a
//! drifted Brownian potential.

pub mod cli;
pub mod diffusion;
pub mod error;
pub mod localtime;
pub mod numerics;
pub mod potential;
pub mod processes;
pub mod rng;
pub mod spectral;
pub mod tails;
pub mod verify;

pub use error::{Error, Result};
