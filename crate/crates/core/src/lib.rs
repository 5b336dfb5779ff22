pub mod analysis;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod stats;
pub mod training;
pub mod transfer;
pub mod uncertainty;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
