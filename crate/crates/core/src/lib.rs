pub mod backends;
pub mod cloud;
pub mod device;
pub mod draw;
pub mod edge;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod protocol;

pub use error::{Error, Result};
