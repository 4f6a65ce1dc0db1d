//! `serve`: the editing service, optionally with a preloaded mesh.

use std::net::{IpAddr, SocketAddr};
use std::path::Path;

use anyhow::{Context, Result};
use deformkit::net::Ljn;
use deformkit_service::{bind, serve, AppState};

use crate::config::RunConfig;

pub fn run(cfg: &RunConfig, net: Option<Ljn>, mesh: Option<&Path>, host: IpAddr, port: u16) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting the async runtime")?;
    runtime.block_on(async move {
        let addr = SocketAddr::new(host, port);
        let listener = bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
        let state = AppState::new(net, cfg.edit.clone());
        if let Some(path) = mesh {
            let obj = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let id = state
                .create_session(obj)
                .await
                .map_err(|e| anyhow::anyhow!("{}: {}", e.code, e.message))
                .with_context(|| format!("preloading {}", path.display()))?;
            println!("session {id}");
        }
        let local = listener.local_addr()?;
        println!("listening on http://{local}");
        log::info!("listening on {local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, state, shutdown).await.context("serving")
    })
}
