pub mod copula;
pub mod datagen;
pub mod data;
pub mod error;
pub mod gp;
pub mod mcmc;
pub mod model;
pub mod sa_test;
pub mod selection;
pub mod special;

pub use copula::{CalibrationValue, CopulaFamily, CopulaParam};
pub use data::{ingest, Dataset, Normalization};
pub use error::{Error, Result};
