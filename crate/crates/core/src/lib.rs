pub mod brackets;
pub mod error;
pub mod experiments;
pub mod lp;
pub mod malliavin;
pub mod models;
pub mod poly;
pub mod sde;
pub mod spectral;
pub mod variation;
pub mod wiener_poly;

pub use error::{Error, Result};
