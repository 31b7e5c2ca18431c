pub mod catalog;
pub mod chain;
pub mod criteria;
pub mod error;
pub mod martingale;
pub mod matrix;
pub mod projective;
pub mod quenched;
pub mod report;

pub use catalog::{catalog, catalog_chain, CatalogEntry};
pub use chain::{
    ergodicity_report, kernel_power, stationary_law, validate_chain, ChainSpec, ErgodicityReport,
    RawChain,
};
pub use error::{LabError, Result};
pub use matrix::Matrix;
