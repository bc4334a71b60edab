//! HTTP annotation service. Configured through `GRIDLAB_DATA_DIR` and
//! `GRIDLAB_PORT` (0 picks a free port); the bound address is printed on
//! stdout once the server accepts connections.

use std::io::Write;
use std::process::ExitCode;

use gridlab_service::{serve, ServerConfig, ServiceError};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let result = match ServerConfig::from_env() {
        Ok(config) => {
            serve(config, |addr| {
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "gridlab-server listening on http://{addr}");
                let _ = out.flush();
            })
            .await
        }
        Err(e) => Err(e),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match e {
                ServiceError::BadRequest(_) => 2,
                ServiceError::Io { .. } => 3,
                _ => 4,
            };
            eprintln!("{}", serde_json::json!({ "error": { "exit_code": code, "message": e.to_string() } }));
            ExitCode::from(code)
        }
    }
}
