//! Unified data-management gateway for a simulated multi-cloud federation.

pub mod analytics;
pub mod codec;
pub mod error;
pub mod gateway;
pub mod http;
pub mod offload;
pub mod protocol;
pub mod security;
pub mod sim;
pub mod wrappers;

pub use error::{Error, ErrorBody, Result};
pub use gateway::Gateway;
