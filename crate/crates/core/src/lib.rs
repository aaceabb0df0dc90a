//! Negation-aware dense retrieval by direct optimization of query embeddings.

pub mod bench;
pub mod config;
pub mod decompose;
pub mod error;
#[cfg(feature = "http")]
pub mod http;
pub mod index;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod parallel;
pub mod pca;
pub mod store;
pub mod synthetic;
pub mod trajectory;
pub mod vector;

pub use error::{Error, Result};
