//! `up` and `client`: long-running coordinator and client processes.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use fedvis_core::datasim::Manifest;
use fedvis_core::pipeline::read_records;
use fedvis_core::sweep::AffinityKind;
use fedvis_net::transport::tcp_connect;
use fedvis_net::{ClientNode, Config, Coordinator, NetError, SimFleet};
use tokio::net::TcpListener;
use tokio::process::{Child, Command};

use crate::data::{generate_shards, load_shards};
use crate::exit::{self, CliError};
use crate::{show, ClientArgs, UpArgs};

/// How long child client processes get to join.
const JOIN_TIMEOUT: Duration = Duration::from_secs(30);

fn load_config(args: &UpArgs) -> Result<Config, CliError> {
    let mut config = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    config.apply_env(std::env::vars())?;
    if let Some(l) = &args.listen {
        config.listen = l.clone();
    }
    if let Some(h) = &args.http {
        config.http = (h != "off").then(|| h.clone());
    }
    if let Some(d) = &args.data {
        config.manifest = Some(d.clone());
    }
    Ok(config)
}

async fn bind(addr: &str, what: &str) -> Result<TcpListener, CliError> {
    TcpListener::bind(addr).await.map_err(|e| {
        CliError::new(
            exit::BIND,
            format!("cannot bind {what} address {addr}: {e}"),
        )
    })
}

/// Shard files of a manifest for child processes.
fn shard_files(path: &std::path::Path) -> Result<Vec<(u16, PathBuf)>, CliError> {
    let file = if path.is_dir() {
        path.join(Manifest::FILE_NAME)
    } else {
        path.to_path_buf()
    };
    if !file.is_file() {
        return Err(CliError::config(format!(
            "manifest not found: {}",
            file.display()
        )));
    }
    let manifest =
        Manifest::load(&file).map_err(|e| CliError::config(format!("{}: {e}", file.display())))?;
    for e in &manifest.clients {
        if !e.path.is_file() {
            return Err(CliError::config(format!(
                "shard for client {} not found: {}",
                e.id,
                e.path.display()
            )));
        }
    }
    Ok(manifest
        .clients
        .into_iter()
        .map(|e| (e.id, e.path))
        .collect())
}

fn spawn_client(
    addr: std::net::SocketAddr,
    id: u16,
    data: &std::path::Path,
) -> Result<Child, CliError> {
    let exe = std::env::current_exe()
        .map_err(|e| CliError::other(format!("cannot locate own binary: {e}")))?;
    Command::new(exe)
        .arg("client")
        .arg("--connect")
        .arg(addr.to_string())
        .arg("--id")
        .arg(id.to_string())
        .arg("--data")
        .arg(data)
        .kill_on_drop(true)
        .spawn()
        .map_err(|e| CliError::other(format!("cannot start client {id}: {e}")))
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        let mut term =
            match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
                Ok(s) => s,
                Err(_) => {
                    let _ = tokio::signal::ctrl_c().await;
                    return;
                }
            };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

pub async fn cmd_up(args: UpArgs, seed: u64, clients: usize) -> Result<(), CliError> {
    let started = Instant::now();
    let config = load_config(&args)?;

    // Fail on bad data before touching the network.
    enum Fleet {
        Sim(SimFleet),
        Procs(Vec<Child>),
    }
    let (sim_shards, files) =
        match (&config.manifest, args.sim) {
            (Some(m), true) => (Some(load_shards(m)?), None),
            (None, true) => (
                Some(generate_shards(
                    args.records,
                    clients,
                    seed,
                    0.0,
                    AffinityKind::Hotspots,
                )),
                None,
            ),
            (Some(m), false) => (None, Some(shard_files(m)?)),
            (None, false) => return Err(CliError::config(
                "no shard manifest: pass --data DIR, set `manifest` in the config, or use --sim",
            )),
        };

    let listener = bind(&config.listen, "client").await?;
    let http = match &config.http {
        Some(a) => Some(bind(a, "http").await?),
        None => None,
    };
    let listen_addr = listener
        .local_addr()
        .map_err(|e| CliError::other(e.to_string()))?;
    let http_addr = http.as_ref().and_then(|l| l.local_addr().ok());

    let coord = Coordinator::new(config.coordinator_options());
    let serving = coord.clone();
    tokio::spawn(async move {
        if let Err(e) = serving.serve(listener).await {
            tracing::error!(error = %e, "client listener stopped");
        }
    });
    if let Some(l) = http {
        let app = fedvis_net::http::router(coord.clone(), config.static_dir.clone());
        tokio::spawn(async move {
            if let Err(e) = fedvis_net::http::serve(l, app).await {
                tracing::error!(error = %e, "http server stopped");
            }
        });
    }

    let (fleet, n) = match (sim_shards, files) {
        (Some(shards), _) => {
            let n = shards.len();
            (Fleet::Sim(SimFleet::start(coord.clone(), shards).await?), n)
        }
        (None, Some(files)) => {
            let mut children = Vec::with_capacity(files.len());
            for (id, path) in &files {
                children.push(spawn_client(listen_addr, *id, path)?);
            }
            if !coord.wait_for_clients(files.len(), JOIN_TIMEOUT).await {
                return Err(NetError::Handshake(format!(
                    "only {} of {} clients joined within {JOIN_TIMEOUT:?}",
                    coord.clients().len(),
                    files.len()
                ))
                .into());
            }
            (Fleet::Procs(children), files.len())
        }
        (None, None) => unreachable!("data source resolved above"),
    };

    println!(
        "ready clients={n} listen={listen_addr} http={} ms={}",
        show(http_addr),
        started.elapsed().as_millis()
    );
    let _ = std::io::stdout().flush();

    shutdown_signal().await;
    tracing::info!("shutting down");
    match fleet {
        Fleet::Sim(f) => f.shutdown(),
        Fleet::Procs(mut children) => {
            for c in &mut children {
                let _ = c.start_kill();
            }
        }
    }
    Ok(())
}

/// Retries the initial connect for a short while, since a coordinator
/// started alongside may not be listening yet.
async fn connect_with_retry(addr: &str) -> Result<fedvis_net::Link, CliError> {
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        match tcp_connect(addr).await {
            Ok(link) => return Ok(link),
            Err(e) if Instant::now() >= deadline => {
                return Err(CliError::new(
                    exit::HANDSHAKE,
                    format!("cannot connect to {addr}: {e}"),
                ))
            }
            Err(_) => tokio::time::sleep(Duration::from_millis(100)).await,
        }
    }
}

pub async fn cmd_client(args: ClientArgs) -> Result<(), CliError> {
    let file = std::fs::File::open(&args.data)
        .map_err(|e| CliError::config(format!("{}: {e}", args.data.display())))?;
    let ingested = read_records(std::io::BufReader::new(file))
        .map_err(|e| CliError::config(format!("{}: {e}", args.data.display())))?;
    if ingested.malformed > 0 {
        tracing::warn!(skipped = ingested.malformed, "malformed rows skipped");
    }
    let node = ClientNode::new(args.id, ingested.records)?;
    let link = connect_with_retry(&args.connect).await?;
    tracing::info!(id = args.id, coordinator = %args.connect, "connected");
    match node.run(link).await {
        Ok(()) | Err(NetError::Disconnected) => Ok(()),
        Err(e) => Err(e.into()),
    }
}
