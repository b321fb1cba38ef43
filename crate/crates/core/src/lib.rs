//! Perturbation-based zero-cost operation scoring for cell-based NAS.
//!
//! The crate is layered bottom-up: [`autodiff`] evaluates and differentiates
//! small networks, [`space`] describes supernets and materializes them,
//! [`proxies`] scores untrained networks, [`scoring`] turns scores into
//! per-edge operation rankings and correlations, [`search`] runs the
//! two-stage perturbation search, and [`tabular`] provides benchmark tables.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod proxies;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod search;
pub mod space;
pub mod tabular;
pub mod tensor;

pub use error::{Error, Result};
pub use space::{ArchState, Genotype, NetConfig, OpId, Space};
pub use tensor::Tensor;
