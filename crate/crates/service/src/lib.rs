//! HTTP API for interactive triage: projects, bugs, screen/component
//! localization sessions, code localization, and evaluation.

pub mod embed;
pub mod error;
pub mod routes;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use error::{ApiError, ErrorBody};
pub use routes::router;
pub use state::{AppState, ServiceConfig, Session};

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
