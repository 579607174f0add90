pub mod bandit;
pub mod bench;
pub mod data;
pub mod error;
pub mod kernel;
pub mod numeric;
pub mod reward;
pub mod simlab;
pub mod submod;
pub mod trainer;

pub use error::{Error, Result};
