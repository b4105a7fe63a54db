//! `paperq-server [CONFIG]`: serves the HTTP API. The config path falls back
//! to `PAPERQ_CONFIG`; the bearer token comes from `PAPERQ_API_TOKEN`.

use std::path::PathBuf;
use std::process::ExitCode;

use paperq_core::config::Config;
use paperq_service::{serve, Service, TOKEN_ENV};

fn load_config() -> Result<Config, String> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("PAPERQ_CONFIG").map(PathBuf::from));
    match path {
        Some(p) => Config::load(&p).map_err(|e| e.to_string()),
        None => {
            let mut cfg = Config::default();
            cfg.apply_env(|k| std::env::var(k).ok()).map_err(|e| e.to_string())?;
            Ok(cfg)
        }
    }
}

fn run() -> Result<(), String> {
    let config = load_config()?;
    let token = std::env::var(TOKEN_ENV).map_err(|_| format!("{TOKEN_ENV} must be set"))?;
    let bind = config.bind.clone();
    let service = Service::new(config, token).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| format!("cannot start runtime: {e}"))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| format!("cannot bind {bind}: {e}"))?;
        tracing::info!(%bind, "listening");
        serve(listener, service.router(), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
