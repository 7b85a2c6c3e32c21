use std::net::SocketAddr;

use clap::Parser;

#[derive(Parser)]
#[command(
    name = "prodyn-service",
    version,
    about = "HTTP service for model simulation, step analysis and identification"
)]
struct Args {
    #[arg(long, default_value = prodyn_service::DEFAULT_BIND)]
    bind: SocketAddr,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, prodyn_service::router()).await
}
