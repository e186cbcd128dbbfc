//! Shared embedding store served over TCP.
//!
//! Clients speak newline-delimited JSON: one request object per line, one
//! response object per line, in request order. Ingested batches are
//! appended to a durable log before they are acknowledged and become
//! visible to queries all at once.

pub mod protocol;
pub mod server;

pub use protocol::{Client, Response, WireRecord, WireRequest};
pub use server::{Server, ServerConfig, ServerHandle, Service, ServiceError};
