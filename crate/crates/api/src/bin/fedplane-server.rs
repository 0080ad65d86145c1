//! `fedplane-server`: serves the platform API from environment settings.

use std::process::ExitCode;

use fedplane_api::{serve, ServerConfig};
use fedplane_core::platform::Plugins;
use tracing_subscriber::EnvFilter;

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let config = match ServerConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("fedplane-server: {e}");
            return ExitCode::from(2);
        }
    };
    let state = match tokio::task::block_in_place(|| config.open(Plugins::default())) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("fedplane-server: cannot open state in {}: {e}", config.state_dir.display());
            return ExitCode::FAILURE;
        }
    };
    let listener = match tokio::net::TcpListener::bind(config.listen_addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("fedplane-server: cannot listen on {}: {e}", config.listen_addr);
            return ExitCode::FAILURE;
        }
    };
    tracing::info!(
        "listening on {} with state in {}",
        listener.local_addr().map_or_else(|_| config.listen_addr.to_string(), |a| a.to_string()),
        config.state_dir.display()
    );
    match serve(listener, state, shutdown_signal()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedplane-server: {e}");
            ExitCode::FAILURE
        }
    }
}
