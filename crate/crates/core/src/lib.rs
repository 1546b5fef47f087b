//! Reward learning from pairwise preferences grounded in natural-language
//! rationales.

mod error;

pub mod autodiff;
pub mod datastore;
pub mod embedding;
pub mod encoder;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod objectives;
pub mod worlds;

pub use error::{Error, Result};
