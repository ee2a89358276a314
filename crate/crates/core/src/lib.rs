//! Decentralized optimization with affine constraints over time-varying
//! networks: the dual accelerated method, its Chebyshev and multi-consensus
//! acceleration, Lyapunov certification, and worst-case instance generators.

pub mod accel;
pub mod adom;
pub mod error;
pub mod experiment;
pub mod graphs;
pub mod linalg;
pub mod lowerbounds;
pub mod problems;

pub use error::{Error, Result};
