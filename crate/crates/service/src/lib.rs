//! HTTP annotation service: stores stimuli with their static and adaptive
//! grids, runs participant sessions, and serves importance maps and
//! convergence reports over the collected annotations.

mod api;
mod error;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::{router, TOKEN_HEADER};
pub use error::{Result, ServiceError};
pub use store::{
    session_order, GridSpecs, NewSession, NewStimulus, Receipt, SessionRecord, SessionView, Stimulus, StimulusMeta,
    Store, StoreConfig, StoredAnnotation,
};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_DATA_DIR: &str = "gridlab-data";

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub addr: SocketAddr,
}

impl ServerConfig {
    /// Reads `GRIDLAB_DATA_DIR` and `GRIDLAB_PORT`, falling back to defaults.
    pub fn from_env() -> Result<Self> {
        let data_dir = std::env::var_os("GRIDLAB_DATA_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
        let port = match std::env::var("GRIDLAB_PORT") {
            Ok(p) => p
                .parse()
                .map_err(|_| ServiceError::BadRequest(format!("GRIDLAB_PORT is not a port number: `{p}`")))?,
            Err(_) => DEFAULT_PORT,
        };
        Ok(Self {
            data_dir,
            addr: SocketAddr::from(([0, 0, 0, 0], port)),
        })
    }
}

/// Opens the store and serves until ctrl-c. The bound address (useful with
/// port 0) is reported through `on_bound` before requests are accepted.
pub async fn serve(config: ServerConfig, on_bound: impl FnOnce(SocketAddr)) -> Result<()> {
    let data_dir = config.data_dir.clone();
    let store = tokio::task::spawn_blocking(move || Store::open(StoreConfig::new(data_dir)))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|e| ServiceError::Internal(format!("cannot bind {}: {e}", config.addr)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    tracing::info!(%addr, data_dir = %config.data_dir.display(), "listening");
    on_bound(addr);
    axum::serve(listener, router(Arc::new(store)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
