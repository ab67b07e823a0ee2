//! Benchmark scenarios reproducing the paper-shaped access patterns:
//! throughput sweeps, a source-tree walk, and repeated large-file scans.
//!
//! In sim mode every network delay is virtual, so reports carry both
//! `logical_ms` (simulated network time, deterministic for a given profile
//! and seed) and `wall_ms` (local I/O and compute). Loopback TCP mode is
//! wall-clock only and informational.

use std::fmt::Write as _;
use std::fs;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::Knobs;
use crate::error::{Result, XufsError};
use crate::net::{LinkProfile, SimNet, Transport};
use crate::server::{Server, ServerConfig, ServerHandle};
use crate::vfs::{AccessMode, Mount, MountConfig, OpenFlags};
use crate::wire::auth::AuthCredential;

pub const DEFAULT_SIZES_MIB: [u64; 6] = [1, 4, 16, 64, 256, 1024];
const MIB: u64 = 1024 * 1024;
const SCAN_CHUNK: usize = 8 * MIB as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scenario {
    WriteThroughput,
    ReadThroughput,
    TreeWalkBuild,
    LargeFileRepeat,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunStat {
    pub run_index: u32,
    pub label: String,
    pub bytes: u64,
    pub wall_ms: f64,
    /// Simulated network time; absent in wall-clock (tcp) mode.
    pub logical_ms: Option<f64>,
    pub throughput_mib_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub scenario: Scenario,
    pub transport: String,
    pub profile: Option<LinkProfile>,
    pub seed: u64,
    pub runs: Vec<RunStat>,
    pub notes: Vec<String>,
}

impl BenchReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {:?} over {} (seed {})",
            self.scenario, self.transport, self.seed
        );
        if let Some(p) = &self.profile {
            let _ = writeln!(
                out,
                "profile: one-way {:.1} ms, {} MiB/s, per-stream {}",
                p.latency_ms,
                p.bandwidth_bps / MIB,
                p.per_stream
            );
        }
        let _ = writeln!(
            out,
            "{:<4} {:<26} {:>12} {:>12} {:>12} {:>12}",
            "run", "label", "bytes", "wall ms", "logical ms", "MiB/s"
        );
        for r in &self.runs {
            let logical =
                r.logical_ms.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                out,
                "{:<4} {:<26} {:>12} {:>12.1} {:>12} {:>12.1}",
                r.run_index, r.label, r.bytes, r.wall_ms, logical, r.throughput_mib_s
            );
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BenchOpts {
    pub scenario: Scenario,
    pub sizes_mib: Vec<u64>,
    /// Size of the large-file scenario in MiB (1024 reproduces the paper's
    /// shape; smaller values keep smoke tests quick).
    pub large_mib: u64,
    pub seed: u64,
    pub workdir: PathBuf,
}

impl BenchOpts {
    pub fn new(scenario: Scenario, workdir: PathBuf) -> Self {
        BenchOpts {
            scenario,
            sizes_mib: DEFAULT_SIZES_MIB.to_vec(),
            large_mib: 1024,
            seed: 0,
            workdir,
        }
    }
}

/// An in-process server + mount over a simulated WAN, rooted in a workdir.
pub struct SimBenchEnv {
    pub net: SimNet,
    pub server: ServerHandle,
    pub mount: Mount,
    pub export_root: PathBuf,
    pub cache_volume: PathBuf,
}

fn bench_cred() -> AuthCredential {
    AuthCredential::long_lived("bench-key", b"bench-phrase".to_vec())
}

impl SimBenchEnv {
    pub async fn start(profile: LinkProfile, seed: u64, workdir: &Path) -> Result<SimBenchEnv> {
        let export_root = workdir.join("export");
        let cache_volume = workdir.join("cache");
        fs::create_dir_all(&export_root)?;
        fs::create_dir_all(&cache_volume)?;
        let net = SimNet::new(profile, seed);
        let listener = Transport::Sim(net.clone()).listen("bench-server").await?;
        let server = Server::new(ServerConfig {
            root: export_root.clone(),
            export_id: "bench".into(),
            credential: bench_cred(),
            knobs: Knobs::default(),
            seed,
        })?
        .spawn(listener);
        let mount = Mount::mount(
            Transport::Sim(net.clone()),
            MountConfig {
                server_addr: "bench-server".into(),
                export_id: "bench".into(),
                cache_root: cache_volume.clone(),
                localized: vec![],
                client_id: "bench-client".into(),
                knobs: Knobs::default(),
            },
            bench_cred(),
        )
        .await?;
        Ok(SimBenchEnv { net, server, mount, export_root, cache_volume })
    }

    pub async fn stop(self) {
        self.mount.shutdown();
        self.server.stop().await;
    }
}

/// Deterministic content: repeats a seeded 64 KiB block.
pub fn generate_file(path: &Path, len: u64, seed: u64) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let block: Vec<u8> = (0..64 * 1024u64)
        .map(|i| ((i.wrapping_mul(2654435761).wrapping_add(seed * 97)) >> 3) as u8)
        .collect();
    let file = fs::File::create(path)?;
    let mut written = 0u64;
    while written < len {
        let n = (len - written).min(block.len() as u64) as usize;
        file.write_all_at(&block[..n], written)?;
        written += n as u64;
    }
    file.set_len(len)?;
    Ok(())
}

fn disk_avail(path: &Path) -> u64 {
    use std::os::unix::ffi::OsStrExt;
    let c_path = match std::ffi::CString::new(path.as_os_str().as_bytes()) {
        Ok(p) => p,
        Err(_) => return u64::MAX,
    };
    let mut stat: libc::statvfs = unsafe { std::mem::zeroed() };
    if unsafe { libc::statvfs(c_path.as_ptr(), &mut stat) } == 0 {
        stat.f_bavail as u64 * stat.f_frsize as u64
    } else {
        u64::MAX
    }
}

struct Timer {
    wall: Instant,
    logical: Option<tokio::time::Instant>,
}

impl Timer {
    fn start(sim: bool) -> Timer {
        Timer {
            wall: Instant::now(),
            logical: sim.then(tokio::time::Instant::now),
        }
    }

    fn stop(&self) -> (f64, Option<f64>) {
        let wall = self.wall.elapsed().as_secs_f64() * 1e3;
        let logical = self.logical.map(|t| t.elapsed().as_secs_f64() * 1e3);
        (wall, logical)
    }
}

fn throughput(bytes: u64, wall_ms: f64, logical_ms: Option<f64>) -> f64 {
    // Perceived duration: simulated network time plus local time.
    let total_ms = wall_ms + logical_ms.unwrap_or(0.0);
    if total_ms <= 0.0 {
        return f64::INFINITY;
    }
    (bytes as f64 / MIB as f64) / (total_ms / 1e3)
}

/// Runs one scenario over a fresh simulated environment.
pub async fn run_sim_scenario(profile: LinkProfile, opts: &BenchOpts) -> Result<BenchReport> {
    fs::create_dir_all(&opts.workdir)?;
    let mut report = BenchReport {
        scenario: opts.scenario,
        transport: "sim".into(),
        profile: Some(profile),
        seed: opts.seed,
        runs: Vec::new(),
        notes: Vec::new(),
    };
    let env = SimBenchEnv::start(profile, opts.seed, &opts.workdir).await?;
    match opts.scenario {
        Scenario::WriteThroughput => write_throughput(&env, opts, &mut report).await?,
        Scenario::ReadThroughput => read_throughput(&env, opts, &mut report).await?,
        Scenario::TreeWalkBuild => tree_walk_build(&env, opts, &mut report).await?,
        Scenario::LargeFileRepeat => large_file_repeat(&env, opts, &mut report).await?,
    }
    env.stop().await;
    Ok(report)
}

async fn write_throughput(
    env: &SimBenchEnv,
    opts: &BenchOpts,
    report: &mut BenchReport,
) -> Result<()> {
    env.mount.opendir("/").await?;
    let block: Vec<u8> = vec![0xA5; SCAN_CHUNK];
    for (i, &mib) in opts.sizes_mib.iter().enumerate() {
        let bytes = mib * MIB;
        if disk_avail(&opts.workdir) < bytes * 4 + 256 * MIB {
            report.notes.push(format!("write {mib} MiB skipped: insufficient disk"));
            continue;
        }
        let name = format!("/w{mib}m.bin");
        // Timed region covers write plus close: close is where the flush
        // coalesces and commits to the queue.
        let timer = Timer::start(true);
        let mut h = env
            .mount
            .open(&name, AccessMode::Write, OpenFlags { create: true, truncate: true })
            .await?;
        let mut written = 0u64;
        while written < bytes {
            let n = (bytes - written).min(block.len() as u64) as usize;
            h.write(&block[..n])?;
            written += n as u64;
        }
        env.mount.close(h)?;
        let (wall_ms, logical_ms) = timer.stop();
        report.runs.push(RunStat {
            run_index: i as u32,
            label: format!("write-{mib}MiB+close"),
            bytes,
            wall_ms,
            logical_ms,
            throughput_mib_s: throughput(bytes, wall_ms, logical_ms),
        });
        // Drain outside the timed region, then reclaim space.
        env.mount.sync().await?;
        env.mount.unlink(&name)?;
        env.mount.sync().await?;
    }
    Ok(())
}

async fn read_throughput(
    env: &SimBenchEnv,
    opts: &BenchOpts,
    report: &mut BenchReport,
) -> Result<()> {
    for &mib in &opts.sizes_mib {
        if disk_avail(&opts.workdir) < mib * MIB * 3 + 256 * MIB {
            report.notes.push(format!("read {mib} MiB skipped: insufficient disk"));
            continue;
        }
        generate_file(&env.export_root.join(format!("r{mib}m.bin")), mib * MIB, mib)?;
    }
    env.mount.opendir("/").await?;
    let mut idx = 0u32;
    for &mib in &opts.sizes_mib {
        let name = format!("/r{mib}m.bin");
        if !env.export_root.join(format!("r{mib}m.bin")).exists() {
            continue;
        }
        let bytes = mib * MIB;
        // Cold: the open fetches the whole file across the simulated WAN.
        let timer = Timer::start(true);
        let mut h = env.mount.open(&name, AccessMode::Read, OpenFlags::default()).await?;
        let got = h.scan_all(SCAN_CHUNK)?;
        env.mount.close(h)?;
        let (wall_ms, logical_ms) = timer.stop();
        assert_eq!(got, bytes);
        report.runs.push(RunStat {
            run_index: idx,
            label: format!("cold-{mib}MiB"),
            bytes,
            wall_ms,
            logical_ms,
            throughput_mib_s: throughput(bytes, wall_ms, logical_ms),
        });
        // Warm: straight off the local cache volume.
        let timer = Timer::start(true);
        let mut h = env.mount.open(&name, AccessMode::Read, OpenFlags::default()).await?;
        let got = h.scan_all(SCAN_CHUNK)?;
        env.mount.close(h)?;
        let (wall_ms, logical_ms) = timer.stop();
        assert_eq!(got, bytes);
        report.runs.push(RunStat {
            run_index: idx + 1,
            label: format!("warm-{mib}MiB"),
            bytes,
            wall_ms,
            logical_ms,
            throughput_mib_s: throughput(bytes, wall_ms, logical_ms),
        });
        // Baseline: plain file read on the same volume as the cache.
        let baseline_path = env.cache_volume.join(format!("baseline-{mib}.bin"));
        generate_file(&baseline_path, bytes, mib)?;
        let timer = Timer::start(true);
        let got = scan_local(&baseline_path)?;
        let (wall_ms, _) = timer.stop();
        assert_eq!(got, bytes);
        report.runs.push(RunStat {
            run_index: idx + 2,
            label: format!("local-{mib}MiB"),
            bytes,
            wall_ms,
            logical_ms: Some(0.0),
            throughput_mib_s: throughput(bytes, wall_ms, None),
        });
        fs::remove_file(&baseline_path)?;
        idx += 3;
    }
    Ok(())
}

pub fn scan_local(path: &Path) -> Result<u64> {
    let file = fs::File::open(path)?;
    let mut buf = vec![0u8; SCAN_CHUNK];
    let mut offset = 0u64;
    loop {
        let n = file.read_at(&mut buf, offset)?;
        if n == 0 {
            return Ok(offset);
        }
        offset += n as u64;
    }
}

/// Writes the synthetic source tree: 24 files of ~500 lines each across 5
/// subdirectories, most under 64 KiB.
pub fn generate_tree(root: &Path) -> Result<(usize, u64)> {
    let mut files = 0usize;
    let mut bytes = 0u64;
    for d in 0..5 {
        let dir = root.join(format!("mod{d}"));
        fs::create_dir_all(&dir)?;
        let count = if d < 4 { 5 } else { 4 };
        for f in 0..count {
            let mut content = String::with_capacity(24_000);
            for line in 0..500 {
                let _ = writeln!(
                    content,
                    "item {d:02}_{f:02}_{line:04} value {:08x}",
                    (d * 1000 + f * 100 + line) as u64 * 2654435761
                );
            }
            let path = dir.join(format!("unit{f}.src"));
            bytes += content.len() as u64;
            fs::write(path, content)?;
            files += 1;
        }
    }
    Ok((files, bytes))
}

/// One full pass over the tree: enter each directory (pre-fetch fires on
/// first entry), read every file, fold the contents into a digest. The
/// digest makes the pass a deterministic stand-in for a build.
pub async fn tree_walk_pass(mount: &Mount) -> Result<(u64, [u8; 32])> {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    let mut total = 0u64;
    let root = mount.opendir("/").await?;
    for entry in &root.entries {
        if entry.kind != crate::wire::EntryKind::Dir {
            continue;
        }
        let dir = format!("/{}", entry.name);
        mount.chdir_prefetch(&dir).await?;
        let listing = mount.opendir(&dir).await?;
        for file in &listing.entries {
            if file.kind != crate::wire::EntryKind::File {
                continue;
            }
            let path = format!("{dir}/{}", file.name);
            let mut h = mount.open(&path, AccessMode::Read, OpenFlags::default()).await?;
            let data = h.read(file.size as usize + 1)?;
            mount.close(h)?;
            hasher.update(&data);
            total += data.len() as u64;
        }
    }
    Ok((total, hasher.finalize().into()))
}

async fn tree_walk_build(
    env: &SimBenchEnv,
    _opts: &BenchOpts,
    report: &mut BenchReport,
) -> Result<()> {
    let (files, bytes) = generate_tree(&env.export_root)?;
    report.notes.push(format!("tree: {files} files, {bytes} bytes"));

    let timer = Timer::start(true);
    let (cold_bytes, cold_digest) = tree_walk_pass(&env.mount).await?;
    let (wall_ms, logical_ms) = timer.stop();
    report.runs.push(RunStat {
        run_index: 0,
        label: "tree-walk-cold".into(),
        bytes: cold_bytes,
        wall_ms,
        logical_ms,
        throughput_mib_s: throughput(cold_bytes, wall_ms, logical_ms),
    });

    let timer = Timer::start(true);
    let (warm_bytes, warm_digest) = tree_walk_pass(&env.mount).await?;
    let (wall_ms, logical_ms) = timer.stop();
    report.runs.push(RunStat {
        run_index: 1,
        label: "tree-walk-warm".into(),
        bytes: warm_bytes,
        wall_ms,
        logical_ms,
        throughput_mib_s: throughput(warm_bytes, wall_ms, logical_ms),
    });
    if cold_digest != warm_digest {
        return Err(XufsError::ProtocolError(
            "warm tree walk diverged from cold walk".into(),
        ));
    }
    Ok(())
}

async fn large_file_repeat(
    env: &SimBenchEnv,
    opts: &BenchOpts,
    report: &mut BenchReport,
) -> Result<()> {
    let bytes = opts.large_mib * MIB;
    if disk_avail(&opts.workdir) < bytes * 3 + 256 * MIB {
        report.notes.push("large-file scenario skipped: insufficient disk".into());
        return Ok(());
    }
    generate_file(&env.export_root.join("large.bin"), bytes, 42)?;
    env.mount.opendir("/").await?;
    for run in 0..5 {
        let timer = Timer::start(true);
        let mut h = env.mount.open("/large.bin", AccessMode::Read, OpenFlags::default()).await?;
        let got = h.scan_all(SCAN_CHUNK)?;
        env.mount.close(h)?;
        let (wall_ms, logical_ms) = timer.stop();
        assert_eq!(got, bytes);
        report.runs.push(RunStat {
            run_index: run,
            label: if run == 0 { "scan-cold".into() } else { format!("scan-warm-{run}") },
            bytes,
            wall_ms,
            logical_ms,
            throughput_mib_s: throughput(bytes, wall_ms, logical_ms),
        });
    }
    // Local baseline scan on the cache volume for comparison.
    let baseline = env.cache_volume.join("baseline-large.bin");
    generate_file(&baseline, bytes, 42)?;
    let timer = Timer::start(true);
    let got = scan_local(&baseline)?;
    let (wall_ms, _) = timer.stop();
    assert_eq!(got, bytes);
    report.runs.push(RunStat {
        run_index: 5,
        label: "scan-local-baseline".into(),
        bytes,
        wall_ms,
        logical_ms: Some(0.0),
        throughput_mib_s: throughput(bytes, wall_ms, None),
    });
    fs::remove_file(&baseline)?;
    Ok(())
}

/// Wall-clock benchmark against a live server over TCP (informational).
pub async fn run_tcp_scenario(
    server_addr: &str,
    export_id: &str,
    cache_root: &Path,
    credential: AuthCredential,
    opts: &BenchOpts,
) -> Result<BenchReport> {
    let mut report = BenchReport {
        scenario: opts.scenario,
        transport: format!("tcp:{server_addr}"),
        profile: None,
        seed: opts.seed,
        runs: Vec::new(),
        notes: Vec::new(),
    };
    let mount = Mount::mount(
        Transport::Tcp,
        MountConfig {
            server_addr: server_addr.to_string(),
            export_id: export_id.to_string(),
            cache_root: cache_root.to_path_buf(),
            localized: vec![],
            client_id: format!("bench-{}", std::process::id()),
            knobs: Knobs::from_env(),
        },
        credential,
    )
    .await?;
    mount.opendir("/").await?;
    match opts.scenario {
        Scenario::WriteThroughput => {
            let block: Vec<u8> = vec![0xA5; SCAN_CHUNK];
            for (i, &mib) in opts.sizes_mib.iter().enumerate() {
                let bytes = mib * MIB;
                let name = format!("/bench-w{mib}m.bin");
                let timer = Timer::start(false);
                let mut h = mount
                    .open(&name, AccessMode::Write, OpenFlags { create: true, truncate: true })
                    .await?;
                let mut written = 0u64;
                while written < bytes {
                    let n = (bytes - written).min(block.len() as u64) as usize;
                    h.write(&block[..n])?;
                    written += n as u64;
                }
                mount.close(h)?;
                let (wall_ms, _) = timer.stop();
                report.runs.push(RunStat {
                    run_index: i as u32,
                    label: format!("write-{mib}MiB+close"),
                    bytes,
                    wall_ms,
                    logical_ms: None,
                    throughput_mib_s: throughput(bytes, wall_ms, None),
                });
                mount.sync().await?;
                mount.unlink(&name)?;
                mount.sync().await?;
            }
        }
        Scenario::ReadThroughput | Scenario::LargeFileRepeat | Scenario::TreeWalkBuild => {
            // Read-side scenarios need server-side fixtures; generate them
            // through the mount, drain, then drop the cache to read cold.
            report.notes.push(
                "tcp read scenarios measure a freshly mounted cache against the live server"
                    .into(),
            );
            let sizes: Vec<u64> = match opts.scenario {
                Scenario::LargeFileRepeat => vec![opts.large_mib],
                _ => opts.sizes_mib.clone(),
            };
            let block: Vec<u8> = vec![0x3C; SCAN_CHUNK];
            for (i, &mib) in sizes.iter().enumerate() {
                let bytes = mib * MIB;
                let name = format!("/bench-r{mib}m.bin");
                let mut h = mount
                    .open(&name, AccessMode::Write, OpenFlags { create: true, truncate: true })
                    .await?;
                let mut written = 0u64;
                while written < bytes {
                    let n = (bytes - written).min(block.len() as u64) as usize;
                    h.write(&block[..n])?;
                    written += n as u64;
                }
                mount.close(h)?;
                mount.sync().await?;
                let runs = if opts.scenario == Scenario::LargeFileRepeat { 5 } else { 2 };
                for run in 0..runs {
                    let timer = Timer::start(false);
                    let mut h =
                        mount.open(&name, AccessMode::Read, OpenFlags::default()).await?;
                    let got = h.scan_all(SCAN_CHUNK)?;
                    mount.close(h)?;
                    let (wall_ms, _) = timer.stop();
                    assert_eq!(got, bytes);
                    report.runs.push(RunStat {
                        run_index: (i * runs + run) as u32,
                        label: format!("scan-{mib}MiB-run{run}"),
                        bytes,
                        wall_ms,
                        logical_ms: None,
                        throughput_mib_s: throughput(bytes, wall_ms, None),
                    });
                }
                mount.unlink(&name)?;
                mount.sync().await?;
            }
        }
    }
    mount.shutdown();
    Ok(report)
}
