use std::process::ExitCode;

use cogtrain_server::{router, ApiConfig, AppState};
use tracing::{error, info};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let config = match ApiConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            error!("configuration: {e}");
            return ExitCode::FAILURE;
        }
    };
    let addr = config.listen_addr;
    let state = match AppState::open(config, None, None) {
        Ok(s) => s,
        Err(e) => {
            error!("startup: {e}");
            return ExitCode::FAILURE;
        }
    };
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) => {
            error!("bind {addr}: {e}");
            return ExitCode::FAILURE;
        }
    };
    info!(%addr, "listening");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
        info!("shutting down");
    };
    if let Err(e) = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await {
        error!("server: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
