//! Sum-product networks over continuous features with a categorical class variable, plus
//! generative, discriminative and safe semi-supervised parameter learning.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64` aliases below cover
//! the common case.

pub mod batch;
pub mod config;
pub mod data;
pub mod disc_learn;
pub mod error;
pub mod experiment;
pub mod gen_learn;
pub mod leaves;
pub mod metrics;
pub mod parallel;
pub mod safe_ssl;
pub mod scalar;
pub mod spn;
pub mod structure;

pub use batch::Batch;
pub use error::{DataError, Result, SpnError};
pub use scalar::Real;
pub use spn::{Evidence, Header, Node, NodeId, Spn};

pub type Spn64 = spn::Spn<f64>;
pub type Spn32 = spn::Spn<f32>;
pub type Node64 = spn::Node<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type CpleState64 = safe_ssl::CpleState<f64>;
