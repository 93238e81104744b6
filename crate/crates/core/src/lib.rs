//! Lyrics-only singing voice synthesis on a desk budget.

pub mod audiofront;
pub mod container;
pub mod error;
pub mod harness;
pub mod lexicon;
pub mod lm;
pub mod vqvae;

pub use error::{Error, Result};
