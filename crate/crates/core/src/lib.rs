//! Learning hidden aggregator weights from equilibrium data and computing
//! robust generalized Nash equilibria of aggregative games.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod game;
pub mod learn;
pub mod lp;
pub mod robust;
pub mod uncertainty;
pub mod vgne;

pub use error::{Error, Result};
