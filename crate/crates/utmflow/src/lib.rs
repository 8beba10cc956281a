pub mod airspace;
pub mod boundary_control;
pub mod fdsolver;
pub mod flowfield;
pub mod linalg;
pub mod microscopic;
pub mod scenario;
pub mod tolerances;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
