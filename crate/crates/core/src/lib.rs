//! Lifetime clustering: weighted Kaplan-Meier curves over soft cluster
//! memberships, a Kuiper p-value bound divergence between them, and a network
//! trained to maximize the smallest pairwise divergence.

pub mod config;
pub mod cv;
pub mod data;
pub mod divergence;
pub mod error;
pub mod km;
pub mod kuiper;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod termination;

pub use error::{Error, ErrorKind, Result};
