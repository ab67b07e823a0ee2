//! Operator entry points: `serve`, `mount`, `sync`, and `bench`.
//!
//! Exit codes: 0 success, 1 operation failure, 2 usage error.

pub mod bench;
pub mod script;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Knobs;
use crate::net::{LinkProfile, SimNet, SimProfileFile, Transport};
use crate::server::{Server, ServerConfig};
use crate::vfs::{Mount, MountConfig, MountFile, MountOptions};
use crate::wire::auth::AuthCredential;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "xufs", version, about = "wide-area caching file system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON file with default connection settings (server, export, cache,
    /// key, phrase_file, localized, client_id). Flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Transport: real sockets or the in-process simulated WAN.
    #[arg(long, global = true, value_enum, default_value_t = TransportKind::Tcp)]
    pub transport: TransportKind,

    /// Simulation profile (JSON: latency_ms, bandwidth_bps, per_stream,
    /// partitions, seed). Sim transport only.
    #[arg(long, global = true)]
    pub sim_profile: Option<PathBuf>,

    /// Emit machine-readable JSON instead of human tables.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    Tcp,
    Sim,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the personal file server over one exported root.
    Serve(ServeArgs),
    /// Mount an export and execute an operation script against it.
    Mount(MountArgs),
    /// Drain the pending meta-operation queue of an existing cache space.
    Sync(SyncArgs),
    /// Run a benchmark scenario and print its report.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory to export.
    #[arg(long)]
    pub root: PathBuf,
    /// Listen address, e.g. 127.0.0.1:7070.
    #[arg(long)]
    pub listen: String,
    #[arg(long)]
    pub key: Option<String>,
    /// File whose bytes are the shared secret phrase.
    #[arg(long)]
    pub phrase_file: Option<PathBuf>,
    /// Export id clients mount (defaults to "home").
    #[arg(long, default_value = "home")]
    pub export: String,
    /// Backing-store poll interval in seconds.
    #[arg(long)]
    pub poll_interval: Option<u64>,
    /// Lease term in seconds.
    #[arg(long)]
    pub lease_term: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MountArgs {
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long)]
    pub export: Option<String>,
    /// Cache root directory (the cache space lives at <cache>/<export>).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long)]
    pub phrase_file: Option<PathBuf>,
    /// Localized directory prefix; repeatable. Files under these never
    /// reach the server.
    #[arg(long = "localized")]
    pub localized: Vec<String>,
    #[arg(long)]
    pub client_id: Option<String>,
    /// Operation script to execute ("-" or absent reads stdin).
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Keep executing after an operation fails (and exit 0).
    #[arg(long)]
    pub keep_going: bool,
    /// Sim transport: export this directory from an in-process server.
    #[arg(long)]
    pub sim_export: Option<PathBuf>,
    /// Sim transport: partition the network after the mount completes.
    #[arg(long)]
    pub partition: bool,
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Export id; inferred when the cache root holds exactly one export.
    #[arg(long)]
    pub export: Option<String>,
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long)]
    pub phrase_file: Option<PathBuf>,
    /// Sim transport: serve this directory in-process and drain into it.
    #[arg(long)]
    pub sim_export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub scenario: bench::Scenario,
    /// Comma-separated sizes in MiB for the throughput sweeps.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<u64>,
    /// Large-file scenario size in MiB.
    #[arg(long, default_value_t = 1024)]
    pub large_mib: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Working directory for generated data (default: a temp dir).
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    /// TCP mode: server address and credentials.
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long)]
    pub export: Option<String>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long)]
    pub phrase_file: Option<PathBuf>,
}

/// Optional defaults file named by `--config`.
#[derive(Debug, Default, serde::Deserialize)]
pub struct ConfigFile {
    pub server: Option<String>,
    pub export: Option<String>,
    pub cache: Option<PathBuf>,
    pub key: Option<String>,
    pub phrase_file: Option<PathBuf>,
    #[serde(default)]
    pub localized: Vec<String>,
    pub client_id: Option<String>,
}

pub fn run(cli: Cli) -> anyhow::Result<u8> {
    let config = match &cli.config {
        Some(path) => serde_json::from_slice::<ConfigFile>(
            &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Serve(args) => cmd_serve(&cli, &config, args),
        Command::Mount(args) => cmd_mount(&cli, &config, args),
        Command::Sync(args) => cmd_sync(&cli, &config, args),
        Command::Bench(args) => cmd_bench(&cli, &config, args),
    }
}

fn load_credential(
    key: Option<&String>,
    phrase_file: Option<&PathBuf>,
    config: &ConfigFile,
) -> anyhow::Result<AuthCredential> {
    let key = key
        .cloned()
        .or_else(|| config.key.clone())
        .ok_or_else(|| anyhow!("--key required (or `key` in --config)"))?;
    let phrase_path = phrase_file
        .cloned()
        .or_else(|| config.phrase_file.clone())
        .ok_or_else(|| anyhow!("--phrase-file required (or in --config)"))?;
    let mut phrase = fs::read(&phrase_path)
        .with_context(|| format!("reading phrase file {}", phrase_path.display()))?;
    while phrase.last() == Some(&b'\n') || phrase.last() == Some(&b'\r') {
        phrase.pop();
    }
    if phrase.is_empty() {
        bail!("phrase file {} is empty", phrase_path.display());
    }
    Ok(AuthCredential::long_lived(key, phrase))
}

fn load_sim_profile(cli: &Cli) -> anyhow::Result<SimProfileFile> {
    match &cli.sim_profile {
        Some(path) => Ok(serde_json::from_slice(
            &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?),
        None => Ok(SimProfileFile {
            link: LinkProfile::wan(80.0, 200 * 1024 * 1024),
            partitions: vec![],
            seed: 0,
        }),
    }
}

fn wall_runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_current_thread().enable_all().build()?)
}

fn cmd_serve(cli: &Cli, config: &ConfigFile, args: &ServeArgs) -> anyhow::Result<u8> {
    if cli.transport == TransportKind::Sim {
        bail!("serve runs over tcp; the sim transport hosts servers in-process");
    }
    let credential = load_credential(args.key.as_ref(), args.phrase_file.as_ref(), config)?;
    let mut knobs = Knobs::from_env();
    if let Some(secs) = args.poll_interval {
        knobs.poll_interval_ms = secs * 1000;
    }
    if let Some(secs) = args.lease_term {
        knobs.lease_term_ms = secs * 1000;
    }
    let server = Server::new(ServerConfig {
        root: args.root.clone(),
        export_id: args.export.clone(),
        credential,
        knobs,
        seed: rand::random(),
    })?;
    let rt = wall_runtime()?;
    rt.block_on(async {
        let listener = Transport::Tcp.listen(&args.listen).await?;
        eprintln!("serving {} at {}", args.root.display(), listener.local_addr());
        let (tx, rx) = tokio::sync::watch::channel(false);
        let serve = tokio::spawn(server.run(listener, rx));
        shutdown_signal().await;
        eprintln!("shutting down");
        let _ = tx.send(true);
        let _ = serve.await;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(EXIT_OK)
}

async fn shutdown_signal() {
    let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
        .expect("install SIGTERM handler");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
}

struct SimSession {
    net: SimNet,
    server: crate::server::ServerHandle,
}

/// Hosts an in-process server over a fresh simulated network.
async fn start_sim_session(
    profile: &SimProfileFile,
    export_root: &Path,
    credential: AuthCredential,
) -> anyhow::Result<SimSession> {
    fs::create_dir_all(export_root)?;
    let net = SimNet::new(profile.link, profile.seed);
    let listener = Transport::Sim(net.clone()).listen("sim-server").await?;
    let server = Server::new(ServerConfig {
        root: export_root.to_path_buf(),
        export_id: "home".into(),
        credential,
        knobs: Knobs::from_env(),
        seed: profile.seed,
    })?
    .spawn(listener);
    if !profile.partitions.is_empty() {
        net.spawn_partition_schedule(profile.partitions.clone());
    }
    Ok(SimSession { net, server })
}

fn cmd_mount(cli: &Cli, config: &ConfigFile, args: &MountArgs) -> anyhow::Result<u8> {
    let credential = load_credential(args.key.as_ref(), args.phrase_file.as_ref(), config)?;
    let script_text = match &args.script {
        Some(p) if p.as_os_str() != "-" => {
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
        }
        _ => std::io::read_to_string(std::io::stdin())?,
    };
    let cache_root = args
        .cache
        .clone()
        .or_else(|| config.cache.clone())
        .ok_or_else(|| anyhow!("--cache required"))?;
    let export = args
        .export
        .clone()
        .or_else(|| config.export.clone())
        .unwrap_or_else(|| "home".to_string());
    let mut localized = args.localized.clone();
    localized.extend(config.localized.iter().cloned());
    let client_id = args
        .client_id
        .clone()
        .or_else(|| config.client_id.clone())
        .unwrap_or_else(|| format!("cli-{}", std::process::id()));

    let mount_cfg = |server_addr: String| MountConfig {
        server_addr,
        export_id: export.clone(),
        cache_root: cache_root.clone(),
        localized: localized.clone(),
        client_id: client_id.clone(),
        knobs: Knobs::from_env(),
    };

    let outcome = match cli.transport {
        TransportKind::Sim => {
            let profile = load_sim_profile(cli)?;
            let sim_export = args
                .sim_export
                .clone()
                .ok_or_else(|| anyhow!("--sim-export DIR is required with --transport sim"))?;
            let cfg = mount_cfg("sim-server".into());
            let keep_going = args.keep_going;
            let partition = args.partition;
            let script_text = script_text.clone();
            crate::net::run_sim(async move {
                let session = start_sim_session(&profile, &sim_export, credential.clone()).await?;
                let mount =
                    Mount::mount(Transport::Sim(session.net.clone()), cfg, credential).await?;
                if partition {
                    session.net.set_partition(true);
                }
                let out = script::run_script(&mount, &script_text, keep_going).await?;
                mount.shutdown();
                session.server.stop().await;
                Ok::<_, anyhow::Error>(out)
            })?
        }
        TransportKind::Tcp => {
            let server = args
                .server
                .clone()
                .or_else(|| config.server.clone())
                .ok_or_else(|| anyhow!("--server required"))?;
            let cfg = mount_cfg(server);
            let keep_going = args.keep_going;
            wall_runtime()?.block_on(async move {
                let mount = Mount::mount(Transport::Tcp, cfg, credential).await?;
                let out = script::run_script(&mount, &script_text, keep_going).await?;
                mount.shutdown();
                Ok::<_, anyhow::Error>(out)
            })?
        }
    };

    if cli.json {
        println!("{}", serde_json::to_string_pretty(&outcome)?);
    } else {
        for r in &outcome.results {
            let status = if r.ok { "ok" } else { "err" };
            if r.detail.is_empty() {
                println!("{status} {:>3} {}", r.line, r.op);
            } else {
                println!("{status} {:>3} {} => {}", r.line, r.op, r.detail);
            }
        }
    }
    if outcome.failures > 0 && !args.keep_going {
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn cmd_sync(cli: &Cli, config: &ConfigFile, args: &SyncArgs) -> anyhow::Result<u8> {
    let credential = load_credential(args.key.as_ref(), args.phrase_file.as_ref(), config)?;
    let cache_root = args
        .cache
        .clone()
        .or_else(|| config.cache.clone())
        .ok_or_else(|| anyhow!("--cache required"))?;
    let export = match args.export.clone().or_else(|| config.export.clone()) {
        Some(e) => e,
        None => infer_export(&cache_root)?,
    };
    let mount_file: MountFile = serde_json::from_slice(
        &fs::read(cache_root.join(&export).join("meta/mount.json"))
            .context("reading meta/mount.json (was this cache ever mounted?)")?,
    )?;

    let report = match cli.transport {
        TransportKind::Sim => {
            let profile = load_sim_profile(cli)?;
            let sim_export = args
                .sim_export
                .clone()
                .ok_or_else(|| anyhow!("--sim-export DIR is required with --transport sim"))?;
            let cfg = MountConfig {
                server_addr: "sim-server".into(),
                export_id: export.clone(),
                cache_root: cache_root.clone(),
                localized: mount_file.localized.clone(),
                client_id: mount_file.client_id.clone(),
                knobs: mount_file.knobs.clone(),
            };
            crate::net::run_sim(async move {
                let session = start_sim_session(&profile, &sim_export, credential.clone()).await?;
                let mount = Mount::mount_with(
                    Transport::Sim(session.net.clone()),
                    cfg,
                    credential,
                    MountOptions { auto_drain: false },
                )
                .await?;
                let report = mount.sync().await?;
                mount.shutdown();
                session.server.stop().await;
                Ok::<_, anyhow::Error>(report)
            })?
        }
        TransportKind::Tcp => {
            let cfg = MountConfig {
                server_addr: mount_file.server_addr.clone(),
                export_id: export.clone(),
                cache_root: cache_root.clone(),
                localized: mount_file.localized.clone(),
                client_id: mount_file.client_id.clone(),
                knobs: mount_file.knobs.clone(),
            };
            wall_runtime()?.block_on(async move {
                let mount = Mount::mount_with(
                    Transport::Tcp,
                    cfg,
                    credential,
                    MountOptions { auto_drain: false },
                )
                .await?;
                let report = mount.sync().await?;
                mount.shutdown();
                Ok::<_, anyhow::Error>(report)
            })?
        }
    };

    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else if report.drained.is_empty() {
        println!("queue empty; nothing to sync");
    } else {
        for op in &report.drained {
            println!(
                "{:>4} {:<12} {:<30} {:?} v{} (was v{})",
                op.op_id, op.kind, op.target, op.status, op.new_version, op.prev_version
            );
        }
        println!("drained {} op(s)", report.drained.len());
    }
    Ok(EXIT_OK)
}

fn infer_export(cache_root: &Path) -> anyhow::Result<String> {
    let mut exports = Vec::new();
    for entry in fs::read_dir(cache_root)? {
        let entry = entry?;
        if entry.path().join("meta/mount.json").exists() {
            exports.push(entry.file_name().to_string_lossy().to_string());
        }
    }
    match exports.as_slice() {
        [one] => Ok(one.clone()),
        [] => bail!("no mounted export found under {}", cache_root.display()),
        many => bail!("multiple exports under {}: {many:?}; pass --export", cache_root.display()),
    }
}

fn cmd_bench(cli: &Cli, config: &ConfigFile, args: &BenchArgs) -> anyhow::Result<u8> {
    let workdir = match &args.workdir {
        Some(d) => d.clone(),
        None => {
            let dir = std::env::temp_dir().join(format!("xufs-bench-{}", std::process::id()));
            fs::create_dir_all(&dir)?;
            dir
        }
    };
    let mut opts = bench::BenchOpts::new(args.scenario, workdir.clone());
    if !args.sizes.is_empty() {
        opts.sizes_mib = args.sizes.clone();
    }
    opts.large_mib = args.large_mib;
    opts.seed = args.seed;

    let report = match cli.transport {
        TransportKind::Sim => {
            let mut profile = load_sim_profile(cli)?;
            if args.seed != 0 {
                profile.seed = args.seed;
            }
            opts.seed = profile.seed;
            crate::net::run_sim(bench::run_sim_scenario(profile.link, &opts))?
        }
        TransportKind::Tcp => {
            let credential =
                load_credential(args.key.as_ref(), args.phrase_file.as_ref(), config)?;
            let server = args
                .server
                .clone()
                .or_else(|| config.server.clone())
                .ok_or_else(|| anyhow!("--server required for tcp bench"))?;
            let export = args
                .export
                .clone()
                .or_else(|| config.export.clone())
                .unwrap_or_else(|| "home".to_string());
            let cache = args
                .cache
                .clone()
                .or_else(|| config.cache.clone())
                .unwrap_or_else(|| workdir.join("cache"));
            wall_runtime()?.block_on(bench::run_tcp_scenario(
                &server,
                &export,
                &cache,
                credential,
                &opts,
            ))?
        }
    };

    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.render_table());
    }
    if args.workdir.is_none() {
        let _ = fs::remove_dir_all(&workdir);
    }
    Ok(EXIT_OK)
}
