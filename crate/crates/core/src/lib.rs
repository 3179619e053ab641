pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod models;
pub mod train;

pub use error::{Error, Result};
