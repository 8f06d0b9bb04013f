//! Session service for live adaptive experiments.
//!
//! Each session is an append-only event log on disk; the in-memory state
//! is always the replay of that log. [`api::router`] exposes sessions over
//! HTTP.

pub mod api;
pub mod error;
pub mod log;
pub mod session;

pub use api::router;
pub use error::ServiceError;
pub use log::{replay, Event, EventLog, SessionEvent};
pub use session::{CreateSession, PointRef, Registry, Session, SubmitObservation};

/// Environment variable naming the data directory.
pub const DATA_DIR_ENV: &str = "WYNN_DATA_DIR";

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(registry: std::sync::Arc<Registry>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, dir = %registry.dir().display(), "listening");
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
