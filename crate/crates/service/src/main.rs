use anyhow::Context;
use clap::Parser;
use t2p_service::commands::{run, Cli};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let output = run(cli).await.context("t2p failed")?;
    print!("{output}");
    Ok(())
}
