use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use mmreact_core::config::Config;
use mmreact_service::store::Store;
use mmreact_service::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "mmreact-server", version, about = "Serve mmreact sessions over HTTP")]
struct Args {
    /// Config file; defaults to $MMREACT_CONFIG when set.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Require this bearer token on every request.
    #[arg(long, env = "MMREACT_TOKEN")]
    token: Option<String>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let args = Args::parse();
    let config = Config::discover(args.config.as_deref()).context("loading config")?;
    let engine = config.engine().context("building engine")?;
    let store = Store::open(&config.storage.data_dir)
        .with_context(|| format!("opening data dir {}", config.storage.data_dir.display()))?;
    let state = AppState::open(engine, store, config.session_config(), args.token).context("replaying sessions")?;
    let listener = tokio::net::TcpListener::bind(args.listen)
        .await
        .with_context(|| format!("binding {}", args.listen))?;
    tracing::info!(addr = %args.listen, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
