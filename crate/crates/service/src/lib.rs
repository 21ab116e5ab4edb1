//! HTTP service running adaptive test sessions.
//!
//! Each session is an append-only event log under `<data_dir>/sessions`, and
//! banks are stored under `<data_dir>/banks`. On start every log is replayed,
//! so a restarted service resumes each session where it stopped.

pub mod error;
pub mod events;
pub mod http;
pub mod sessions;
pub mod types;

use std::net::SocketAddr;
use std::sync::Arc;

pub use error::ServiceError;
pub use http::router;
pub use sessions::{SessionService, Snapshot};

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(service: Arc<SessionService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
