//! Serve the deterministic mock backend over HTTP.

use std::sync::Arc;

use clap::Parser;
use narrative_core::backend::{server, MockBackend, MOCK_EMBED_DIM};

#[derive(Debug, Parser)]
#[command(name = "narrative-mock-server", version, about = "Deterministic mock inference server")]
struct Args {
    /// Listen address; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = MOCK_EMBED_DIM)]
    dim: usize,
    #[arg(long, default_value = "mock")]
    model: String,
    #[arg(long, default_value_t = 4)]
    threads: usize,
}

fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let backend = Arc::new(MockBackend::new(args.seed).with_dim(args.dim).with_model(args.model));
    match server::serve(backend, &args.addr, args.threads) {
        Ok(handle) => {
            // The bound URL goes to stdout so scripts can pick up an ephemeral port.
            println!("{}", handle.url());
            log::info!("serving mock backend on {}", handle.url());
            handle.join();
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.addr);
            std::process::ExitCode::FAILURE
        }
    }
}
