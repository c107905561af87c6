use std::path::PathBuf;

use clap::Parser;
use fluidrec_service::{serve, AppState, Registry};

#[derive(Parser)]
#[command(name = "fluidrec-service", about = "Serve fluid recommendations over HTTP")]
struct Args {
    #[arg(long, env = "FLUIDREC_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "FLUIDREC_PORT", default_value_t = 8080)]
    port: u16,
    /// Directory where registered bundles are kept across restarts.
    #[arg(long, env = "FLUIDREC_BUNDLE_DIR")]
    bundle_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let args = Args::parse();
    let registry = match &args.bundle_dir {
        Some(dir) => Registry::persistent(dir)?,
        None => Registry::in_memory(),
    };
    serve(&args.host, args.port, AppState::new(registry)).await
}
