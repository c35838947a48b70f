pub mod augment;
pub mod data;
pub mod docsbench;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod numerics;
pub mod proxies;
pub mod supervision;
pub mod transformer;

pub use error::{Error, Result};
