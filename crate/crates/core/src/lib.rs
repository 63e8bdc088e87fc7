//! Closed-loop drifting laboratory.
//!
//! A nominal Fiala brush front tire and a small learned network are swapped
//! behind the same port of a nonlinear MPC, and both are evaluated against a
//! plant tire carrying thermal fade and steering-dependent stiffness.

// `!(x > 0.0)` guards are written that way so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ad;
pub mod datagen;
pub mod dynamics;
pub mod equilibrium;
pub mod harness;
pub mod mlp;
pub mod nmpc;
pub mod sim;
mod error;
pub mod tire;

pub use error::{Error, Result};
