pub mod construction;
pub mod error;
pub mod extract;
pub mod fubini;
pub mod geometry;
pub mod numerics;
pub mod pipeline;
pub mod profiles;
pub mod rp1;
pub mod surfaces;
pub mod verify;

pub use error::{Error, Result};
pub use rp1::Rp1;
