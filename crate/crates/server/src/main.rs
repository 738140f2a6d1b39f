//! Serves the Core and its components over HTTP.
//!
//! The config file is the first argument or `BUDAMAF_CONFIG`; without one
//! the built-in defaults apply. `BUDAMAF_PORT` overrides the port.

use std::path::PathBuf;
use std::process::ExitCode;

use budamaf::gateway::config::ENV_CONFIG;
use budamaf::gateway::{GatewayConfig, PrincipalRegistry};
use budamaf::Gateway;
use tracing_subscriber::EnvFilter;

fn config_path() -> Option<PathBuf> {
    std::env::args_os().nth(1).map(PathBuf::from).or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from))
}

async fn run() -> budamaf::Result<()> {
    let gw = match config_path() {
        Some(p) => Gateway::from_config_file(&p).await?,
        None => {
            let mut cfg = GatewayConfig::default();
            cfg.apply_env()?;
            Gateway::start(cfg, PrincipalRegistry::new()).await?
        }
    };
    if gw.config().principals.is_none() {
        tracing::warn!("no principal registry configured; every request will fail authentication");
    }
    let addr = gw.config().listen_addr()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "gateway listening");
    tokio::select! {
        r = budamaf::http::serve(gw, listener) => r,
        _ = tokio::signal::ctrl_c() => {
            tracing::info!("shutting down");
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    match run().await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(code = e.code(), "{}", e.detail());
            ExitCode::FAILURE
        }
    }
}
