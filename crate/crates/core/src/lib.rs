pub mod autodiff;
pub mod encodings;
pub mod error;
pub mod model;
pub mod motion;
pub mod tbpm;
pub mod training;

pub use error::{Error, Result};
