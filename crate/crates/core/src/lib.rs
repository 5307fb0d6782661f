pub mod error;
pub mod lrp;
pub mod model;
pub mod saliency;
pub mod tensor;
pub mod training;
pub mod validation;

pub use error::{Error, Result};
