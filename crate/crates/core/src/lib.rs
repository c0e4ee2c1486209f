//! Certified performance guarantees for block-sparse recovery.

pub mod block;
pub mod bounds;
pub mod error;
pub mod fixedpoint;
pub mod harness;
pub mod inner;
pub mod io;
pub mod linalg;
pub mod oracles;
pub mod recovery;

pub use error::{Error, Result};
