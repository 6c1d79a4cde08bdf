//! Numerical laboratory for Klein-Gordon type equations `u_tt + R^s u + m u = 0`
//! with singular masses on graded (weighted-dilation) groups `R^d`.

pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod mass;
pub mod runner;
pub mod selftest;
pub mod spectral;
pub mod structure;

pub use error::{Error, Result};
