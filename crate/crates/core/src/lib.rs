pub mod design;
pub mod error;
pub mod gf256;
pub mod hhpda;
pub mod json;
pub mod mds;
pub mod pda;
pub mod sim;
pub mod verdict;

pub use error::{Error, Result};
pub use verdict::Verdict;
