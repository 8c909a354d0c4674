//! Change detection in streams of attributed graphs.
//!
//! Graphs are embedded onto constant-curvature manifolds by an adversarially
//! regularised graph autoencoder, and the resulting stream of embeddings is
//! monitored with CUSUM tests built on geodesic distances (D-CDT) or on
//! tangent-space coordinates at the nominal Fréchet mean (R-CDT).

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cdt;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod seeding;

pub use harness::{exit_code, Error, Result};
