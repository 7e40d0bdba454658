pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod session;
pub mod training;
pub mod viz;

pub use error::{Error, Result};
