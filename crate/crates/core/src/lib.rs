pub mod cli;
pub mod dataaug;
pub mod error;
pub mod eval;
pub mod losses;
pub mod numcore;
pub mod simcache;
pub mod trainer;

pub use error::{Error, Result};
