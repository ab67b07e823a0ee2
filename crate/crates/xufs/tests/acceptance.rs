//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers. Simulated-WAN timing uses the virtual clock, so
//! latency-scaled runs cost no wall time; wall-clock budgets still guard
//! each criterion's own runtime.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use common::*;
use sha2::{Digest, Sha256};

use xufs::cache::queue::CrashPoint;
use xufs::cache::ContentState;
use xufs::cli::bench::{generate_file, scan_local};
use xufs::config::Knobs;
use xufs::net::{run_sim, EventKind, LinkProfile, SimNet, Transport};
use xufs::server::{tree_digest, LeaseTable, Server, ServerConfig};
use xufs::vfs::{AccessMode, Mount, MountConfig, MountOptions, OpenFlags};
use xufs::wire::{plan_stripes_default, LockMode, MessageKind, OpStatus};
use xufs::XufsError;

const MIB: u64 = 1024 * 1024;
const GIB: u64 = 1024 * MIB;

/// Heavy/timing-sensitive criteria serialize through this.
fn big_lock() -> std::sync::MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    match LOCK.get_or_init(|| Mutex::new(())).lock() {
        Ok(g) => g,
        Err(poisoned) => poisoned.into_inner(),
    }
}

fn budget(name: &str, started: Instant, limit: Duration) {
    let took = started.elapsed();
    assert!(
        took <= limit,
        "{name}: runtime {took:?} exceeded the {limit:?} budget"
    );
}

fn sha(path: &Path) -> [u8; 32] {
    use std::io::Read;
    let mut hasher = Sha256::new();
    let mut file = std::fs::File::open(path).unwrap();
    let mut buf = vec![0u8; 4 * MIB as usize];
    loop {
        let n = file.read(&mut buf).unwrap();
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    hasher.finalize().into()
}

/// Criterion 1: fetch-once caching of a 1 GiB file at RTT 80 ms and
/// 200 MiB/s. Run 1 is transfer-dominated (within 25% of
/// latency + size/bandwidth); runs 2-5 are each at least 10x faster with
/// exactly zero FETCH traffic.
#[test]
fn acceptance_1_fetch_once_caching() {
    let _guard = big_lock();
    let started = Instant::now();
    let bandwidth = 200 * MIB;
    let profile = LinkProfile::wan(80.0, bandwidth);
    let (run_logical_s, run_total_s, fetch_after_first): (Vec<f64>, Vec<f64>, usize) =
        run_sim(async move {
            let mut knobs = Knobs::default();
            knobs.fetch_chunk = 4 * MIB; // fewer, larger frames: same math
            let env = SimEnv::start_with_knobs(profile, 1001, knobs).await;
            generate_file(&env.export_root().join("large.bin"), GIB, 7).unwrap();
            let mount = env.mount("c1").await;
            mount.opendir("/").await.unwrap();

            let mut logical = Vec::new();
            let mut total = Vec::new();
            let mut fetch_reqs_after_first = 0usize;
            for run in 0..5 {
                let wall = Instant::now();
                let virt = tokio::time::Instant::now();
                let mut h = mount
                    .open("/large.bin", AccessMode::Read, OpenFlags::default())
                    .await
                    .unwrap();
                let got = h.scan_all(8 * MIB as usize).unwrap();
                mount.close(h).unwrap();
                assert_eq!(got, GIB);
                let l = virt.elapsed().as_secs_f64();
                logical.push(l);
                total.push(l + wall.elapsed().as_secs_f64());
                if run == 0 {
                    fetch_reqs_after_first = env.net.transcript().count(|e| {
                        e.event == EventKind::Sent
                            && matches!(e.kind, MessageKind::FetchReq | MessageKind::FetchSegment)
                    });
                }
            }
            let fetch_total = env.net.transcript().count(|e| {
                e.event == EventKind::Sent
                    && matches!(e.kind, MessageKind::FetchReq | MessageKind::FetchSegment)
            });
            mount.shutdown();
            (logical, total, fetch_total - fetch_reqs_after_first)
        });

    let predicted_s = 0.080 + (GIB as f64 / bandwidth as f64);
    let run1 = run_logical_s[0];
    assert!(
        (run1 - predicted_s).abs() <= 0.25 * predicted_s,
        "run 1 took {run1:.2}s simulated; prediction {predicted_s:.2}s +/- 25%"
    );
    for (i, &t) in run_total_s.iter().enumerate().skip(1) {
        assert!(
            t <= run1 / 10.0,
            "run {} took {t:.3}s (logical+wall) vs run 1 {run1:.2}s: less than 10x faster",
            i + 1
        );
    }
    assert_eq!(fetch_after_first, 0, "cached runs must issue zero FETCH messages");
    budget("criterion 1", started, Duration::from_secs(120));
    println!(
        "ACCEPTANCE 1 PASS: run1 {run1:.2}s (predicted {predicted_s:.2}s), warm runs {:?}s, 0 fetches after run 1",
        &run_total_s[1..]
    );
}

/// Criterion 2: striping bounds for 64 KiB, 64 KiB + 1, 1 MiB, and 1 GiB
/// transfers: stream counts {1, 1, 12, 12}, every stripe of a striped
/// transfer carries at least 64 KiB, and the reassembled bytes equal the
/// source (checksum).
#[test]
fn acceptance_2_striping_bounds() {
    let _guard = big_lock();
    let started = Instant::now();
    let cases: Vec<(&str, u64, usize)> = vec![
        ("s64k.bin", 64 * 1024, 1),
        ("s64k1.bin", 64 * 1024 + 1, 1),
        ("s1m.bin", MIB, 12),
        ("s1g.bin", GIB, 12),
    ];
    let observed = run_sim(async {
        let mut knobs = Knobs::default();
        knobs.fetch_chunk = 4 * MIB;
        let env = SimEnv::start_with_knobs(LinkProfile::wan(2.0, 0), 1002, knobs).await;
        for (name, len, _) in &cases {
            generate_file(&env.export_root().join(name), *len, 11).unwrap();
        }
        let mount = env.mount("c1").await;
        mount.opendir("/").await.unwrap();
        let mut results = Vec::new();
        for (name, len, _) in &cases {
            let path = format!("/{name}");
            let mut h = mount.open(&path, AccessMode::Read, OpenFlags::default()).await.unwrap();
            assert_eq!(h.scan_all(8 * MIB as usize).unwrap(), *len);
            mount.close(h).unwrap();
            // Per-stream byte totals observed on the wire for this file.
            let mut per_stream: BTreeMap<u32, u64> = BTreeMap::new();
            for e in env.net.transcript().query(|e| {
                e.event == EventKind::Sent
                    && e.kind == MessageKind::FetchSegment
                    && e.path.as_deref() == Some(name)
            }) {
                // Frame bytes include header and payload fields; segment
                // payload length is what the plan constrains, so recompute
                // from the plan below and use the transcript for counts.
                *per_stream.entry(e.stream_index.unwrap()).or_default() += e.bytes;
            }
            let cache_file = mount.cache().data_path(name);
            results.push((name.to_string(), *len, per_stream, sha(&cache_file)));
        }
        mount.shutdown();
        results
    });

    for ((name, len, per_stream, cache_sha), (_, _, want_streams)) in
        observed.iter().zip(&cases)
    {
        assert_eq!(
            per_stream.len(),
            *want_streams,
            "{name}: observed {} streams, expected {want_streams}",
            per_stream.len()
        );
        // The plan's segments are the authority on per-stripe sizes.
        let plan = plan_stripes_default(*len);
        assert_eq!(plan.segments.len(), *want_streams);
        if *len > 64 * 1024 && *want_streams > 1 {
            for seg in &plan.segments {
                assert!(seg.length >= 64 * 1024, "{name}: stripe below 64 KiB");
            }
            // And the wire agrees: each stream carried at least its segment.
            for seg in &plan.segments {
                let sent = per_stream.get(&seg.stream_index).copied().unwrap_or(0);
                assert!(
                    sent >= seg.length,
                    "{name}: stream {} carried {sent} < segment {}",
                    seg.stream_index,
                    seg.length
                );
            }
        }
        // Reassembled content is byte-identical to the source.
        let mut hasher = Sha256::new();
        let block: Vec<u8> = {
            // Source lives in the sim env's tempdir which is gone; the
            // generator is deterministic, so regenerate to compare.
            let tmp = tempfile::NamedTempFile::new().unwrap();
            generate_file(tmp.path(), *len, 11).unwrap();
            std::fs::read(tmp.path()).unwrap()
        };
        hasher.update(&block);
        let source_sha: [u8; 32] = hasher.finalize().into();
        assert_eq!(*cache_sha, source_sha, "{name}: checksum mismatch after reassembly");
    }
    budget("criterion 2", started, Duration::from_secs(120));
    println!("ACCEPTANCE 2 PASS: stream counts {{1,1,12,12}}, stripes >= 64 KiB, checksums equal");
}

/// Criterion 3: pre-fetch policy. A directory of 50 files of 4 KiB and one
/// of 2 MiB: the first chdir caches all 50 small files (concurrency peak in
/// [2, 12]) and leaves the large file EMPTY; the second chdir issues zero
/// fetches.
#[test]
fn acceptance_3_prefetch_policy() {
    let started = Instant::now();
    run_sim(async {
        let env = SimEnv::start(LinkProfile::wan(20.0, 100 * MIB), 1003).await;
        for i in 0..50 {
            put_file(&env.export_root(), &format!("src/f{i:02}.dat"), &patterned(4096, i as u8));
        }
        put_file(&env.export_root(), "src/big.bin", &patterned(2 * MIB as usize, 99));
        let mount = env.mount("c1").await;

        let report = mount.chdir_prefetch("/src").await.unwrap();
        assert_eq!(report.fetched.len(), 50, "all 50 small files prefetched");
        assert!(report.failed.is_empty());
        assert_eq!(report.skipped_large, 1);
        for i in 0..50 {
            let entry = mount.cache().read_entry(&format!("src/f{i:02}.dat")).unwrap().unwrap();
            assert_eq!(entry.state, ContentState::Cached);
        }
        let big = mount.cache().read_entry("src/big.bin").unwrap().unwrap();
        assert_eq!(big.state, ContentState::Empty, "2 MiB file must not prefetch");

        let peak = env.net.transcript().peak_fetch_concurrency();
        assert!(peak <= 12, "peak concurrency {peak} > 12");
        assert!(peak >= 2, "peak concurrency {peak} < 2");

        let before = env.net.transcript().sent_count(MessageKind::FetchReq);
        mount.chdir_prefetch("/src").await.unwrap();
        let after = env.net.transcript().sent_count(MessageKind::FetchReq);
        assert_eq!(before, after, "second chdir must issue zero fetches");
        mount.shutdown();
        println!("ACCEPTANCE 3 PASS: 50 cached, big file EMPTY, peak concurrency {peak} in [2,12], second chdir 0 fetches");
    });
    budget("criterion 3", started, Duration::from_secs(30));
}

/// Criterion 4: non-blocking mutation. Simulated network time spent in
/// write+close is zero at every RTT (so the variation bound holds at 1x),
/// wall time stays under the 50 ms interactivity bound, and cold open time
/// scales with RTT.
#[test]
fn acceptance_4_nonblocking_mutation() {
    let _guard = big_lock();
    let started = Instant::now();
    let mut mutation_wall_ms = Vec::new();
    let mut mutation_virtual_ms = Vec::new();
    let mut open_virtual_ms = Vec::new();
    for rtt_ms in [1.0, 100.0, 500.0] {
        let (wall_ms, virt_ms, open_ms) = run_sim(async move {
            let env = SimEnv::start(LinkProfile::wan(rtt_ms, 0), 1004).await;
            put_file(&env.export_root(), "cold.bin", &patterned(256 * 1024, 5));
            let mount = env.mount("c1").await;
            mount.opendir("/").await.unwrap();

            // Cold open: fetches across the WAN, so it must scale with RTT.
            let virt = tokio::time::Instant::now();
            let h = mount.open("/cold.bin", AccessMode::Read, OpenFlags::default()).await.unwrap();
            let open_ms = virt.elapsed().as_secs_f64() * 1e3;
            mount.close(h).unwrap();

            // Mutation: write 4 KiB and close. No network wait allowed.
            // One warm-up plus best-of-3 removes first-touch costs that
            // have nothing to do with the network.
            let mut wall_ms = f64::MAX;
            let mut virt_ms = f64::MAX;
            for rep in 0..4 {
                let name = format!("/new{rep}.bin");
                let wall = Instant::now();
                let virt = tokio::time::Instant::now();
                let mut h = mount
                    .open(&name, AccessMode::Write, OpenFlags { create: true, truncate: false })
                    .await
                    .unwrap();
                h.write(&patterned(4096, 1)).unwrap();
                mount.close(h).unwrap();
                if rep > 0 {
                    virt_ms = virt_ms.min(virt.elapsed().as_secs_f64() * 1e3);
                    wall_ms = wall_ms.min(wall.elapsed().as_secs_f64() * 1e3);
                }
            }
            mount.shutdown();
            (wall_ms, virt_ms, open_ms)
        });
        mutation_wall_ms.push(wall_ms);
        mutation_virtual_ms.push(virt_ms);
        open_virtual_ms.push(open_ms);
    }
    // Mutation latency is independent of RTT: zero simulated network time,
    // so the <2x variation bound holds exactly.
    for (&v, &rtt) in mutation_virtual_ms.iter().zip(&[1.0, 100.0, 500.0]) {
        assert!(
            v < 1.0,
            "write+close waited {v:.1} ms of simulated time at RTT {rtt} ms"
        );
    }
    let wall_spread = {
        let max = mutation_wall_ms.iter().cloned().fold(0.0f64, f64::max);
        let min = mutation_wall_ms.iter().cloned().fold(f64::MAX, f64::min);
        max / min.max(0.5) // floor avoids a noise-dominated ratio near zero
    };
    assert!(
        wall_spread < 2.0,
        "write+close wall time varied {wall_spread:.2}x across RTTs: {mutation_wall_ms:?}"
    );
    for &w in &mutation_wall_ms {
        assert!(w < 50.0, "write+close took {w:.1} ms wall; bound is 50 ms");
    }
    // Cold open scales with RTT.
    assert!(open_virtual_ms[1] > open_virtual_ms[0] && open_virtual_ms[2] > open_virtual_ms[1]);
    assert!(
        open_virtual_ms[2] >= 400.0,
        "cold open at RTT 500 ms took {:.1} ms simulated",
        open_virtual_ms[2]
    );
    budget("criterion 4", started, Duration::from_secs(60));
    println!(
        "ACCEPTANCE 4 PASS: write+close wall {mutation_wall_ms:?} ms (spread {wall_spread:.2}x, 0 network wait); cold open {open_virtual_ms:?} ms scales with RTT"
    );
}

// ---------------------------------------------------------------------
// Criterion 5: crash recovery
// ---------------------------------------------------------------------

/// The 20-op script applied by the client, mirrored by the oracle.
#[derive(Debug, Clone)]
enum ScriptOp {
    Mkdir(&'static str),
    Create(&'static str),
    Write(&'static str, &'static [u8]),
    Rename(&'static str, &'static str),
    Unlink(&'static str),
}

fn recovery_script() -> Vec<ScriptOp> {
    use ScriptOp::*;
    vec![
        Mkdir("d1"),
        Create("d1/a"),
        Write("d1/a", b"alpha"),
        Mkdir("d2"),
        Create("d2/b"),
        Write("d2/b", b"bravo-content"),
        Create("top"),
        Write("top", b"t"),
        Rename("d1/a", "d1/a2"),
        Write("d1/a2", b"ALPHA2"),
        Mkdir("d1/deep"),
        Create("d1/deep/c"),
        Write("d1/deep/c", b"charlie"),
        Unlink("d2/b"),
        Create("d2/b"),
        Write("d2/b", b"rewritten"),
        Rename("top", "d2/top"),
        Write("d2/top", b"moved"),
        Create("last"),
        Write("last", b"final op"),
    ]
}

/// Independent oracle: applies the first `n` script ops with plain std::fs.
fn oracle_apply(root: &Path, n: usize) {
    for op in recovery_script().iter().take(n) {
        match op {
            ScriptOp::Mkdir(p) => std::fs::create_dir(root.join(p)).unwrap(),
            ScriptOp::Create(p) => {
                std::fs::write(root.join(p), b"").unwrap();
            }
            ScriptOp::Write(p, data) => std::fs::write(root.join(p), data).unwrap(),
            ScriptOp::Rename(a, b) => std::fs::rename(root.join(a), root.join(b)).unwrap(),
            ScriptOp::Unlink(p) => std::fs::remove_file(root.join(p)).unwrap(),
        }
    }
}

async fn apply_script_op(mount: &Mount, op: &ScriptOp) {
    match op {
        ScriptOp::Mkdir(p) => mount.mkdir(p).unwrap(),
        ScriptOp::Create(p) => {
            let h = mount
                .open(p, AccessMode::Write, OpenFlags { create: true, truncate: false })
                .await
                .unwrap();
            mount.close(h).unwrap();
        }
        ScriptOp::Write(p, data) => {
            let mut h = mount
                .open(p, AccessMode::Write, OpenFlags { create: false, truncate: true })
                .await
                .unwrap();
            h.write(data).unwrap();
            mount.close(h).unwrap();
        }
        ScriptOp::Rename(a, b) => mount.rename(a, b).unwrap(),
        ScriptOp::Unlink(p) => mount.unlink(p).unwrap(),
    }
}

/// Runs the script on a disconnected mount, snapshotting the queue
/// directory at every sync boundary. Returns (snapshot dir, ops returned
/// before the snapshot, whether the snapshot includes the in-flight op).
fn collect_crash_snapshots(
    snapshot_root: &Path,
) -> Vec<(std::path::PathBuf, usize, bool)> {
    let snapshot_root = snapshot_root.to_path_buf();
    run_sim(async move {
        let env = SimEnv::start(LinkProfile::wan(1.0, 0), 1005).await;
        let mount = env.mount("c1").await;
        mount.opendir("/").await.unwrap();
        env.net.set_partition(true); // every op stays queued
        tokio::time::sleep(Duration::from_millis(20)).await;

        let queue_dir = mount.cache().root().join("queue");
        let snapshots: Arc<Mutex<Vec<(std::path::PathBuf, usize, bool)>>> =
            Arc::new(Mutex::new(Vec::new()));
        let ops_returned = Arc::new(AtomicUsize::new(0));
        let counter = Arc::new(AtomicUsize::new(0));
        {
            let snapshots = snapshots.clone();
            let ops_returned = ops_returned.clone();
            let counter = counter.clone();
            let snapshot_root = snapshot_root.clone();
            mount.set_queue_crash_hook(Arc::new(move |point: CrashPoint| {
                let (label, includes_inflight) = match point {
                    CrashPoint::BeforeAppend { .. } => ("before-append", false),
                    // The record bytes are in the file at both sync-boundary
                    // sides; fsync loss is modeled by the torn-tail variant.
                    CrashPoint::BeforeSync { .. } => ("before-sync", true),
                    CrashPoint::AfterSync { .. } => ("after-sync", true),
                };
                let idx = counter.fetch_add(1, Ordering::SeqCst);
                let dest = snapshot_root.join(format!("snap-{idx:03}-{label}"));
                copy_dir(&queue_dir, &dest);
                snapshots.lock().unwrap().push((
                    dest,
                    ops_returned.load(Ordering::SeqCst),
                    includes_inflight,
                ));
            }));
        }
        // Each vfs-level script op may enqueue several meta-ops (truncate
        // flush pieces); ops_returned counts vfs ops fully returned.
        for (i, op) in recovery_script().iter().enumerate() {
            apply_script_op(&mount, op).await;
            ops_returned.store(i + 1, Ordering::SeqCst);
        }
        mount.shutdown();
        let got = snapshots.lock().unwrap().clone();
        got
    })
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

/// Recovers one snapshot into a fresh cache space, syncs against a fresh
/// server, and returns the server tree digest plus the sync report.
fn recover_and_sync(snapshot: &Path, scratch: &Path) -> ([u8; 32], Vec<OpStatus>) {
    let scratch = scratch.to_path_buf();
    let snapshot = snapshot.to_path_buf();
    run_sim(async move {
        std::fs::create_dir_all(scratch.join("export")).unwrap();
        let net = SimNet::new(LinkProfile::wan(1.0, 0), 9);
        let listener = Transport::Sim(net.clone()).listen(SERVER_ADDR).await.unwrap();
        let server = Server::new(ServerConfig {
            root: scratch.join("export"),
            export_id: "home".into(),
            credential: cred(),
            knobs: Knobs::default(),
            seed: 9,
        })
        .unwrap()
        .spawn(listener);

        // Rebuild a cache space around the snapshotted queue, exactly what
        // a post-crash recovery does.
        let cache_root = scratch.join("cache");
        let queue_dest = cache_root.join("home").join("queue");
        copy_dir(&snapshot, &queue_dest);
        let mount = Mount::mount_with(
            Transport::Sim(net.clone()),
            MountConfig {
                server_addr: SERVER_ADDR.into(),
                export_id: "home".into(),
                cache_root,
                localized: vec![],
                client_id: "c1".into(),
                knobs: Knobs::default(),
            },
            cred(),
            MountOptions { auto_drain: false },
        )
        .await
        .unwrap();
        let report = mount.sync().await.unwrap();
        assert_eq!(mount.queue_len(), 0, "sync must fully drain");
        // Second sync drains nothing.
        let again = mount.sync().await.unwrap();
        assert!(again.drained.is_empty(), "second sync must be empty");
        mount.shutdown();
        server.stop().await;
        let digest = tree_digest(&scratch.join("export")).unwrap();
        let statuses = report.drained.iter().map(|r| r.status).collect();
        (digest, statuses)
    })
}

/// Criterion 5: crash-point injection at every sync boundary during a
/// 20-op script, then `sync`. The recovered server tree digest equals the
/// oracle digest at 100% of injection points; no acknowledged op is lost
/// and none applies twice.
#[test]
fn acceptance_5_crash_recovery() {
    let started = Instant::now();
    let work = tempfile::tempdir().unwrap();
    let snapshots = collect_crash_snapshots(work.path());
    assert_eq!(snapshots.len(), recovery_script().len() * 3, "3 points per op");

    // Precompute oracle digests for every prefix length.
    let mut oracle_digests = Vec::new();
    for n in 0..=recovery_script().len() {
        let dir = work.path().join(format!("oracle-{n}"));
        std::fs::create_dir_all(&dir).unwrap();
        oracle_apply(&dir, n);
        oracle_digests.push(tree_digest(&dir).unwrap());
    }

    let mut points_checked = 0usize;
    for (i, (snapshot, ops_returned, includes_inflight)) in snapshots.iter().enumerate() {
        // The in-flight op is present at/after the sync boundary; before the
        // append it is absent. Either way the recovered state is exact.
        let expect_ops = if *includes_inflight { ops_returned + 1 } else { *ops_returned };
        let scratch = work.path().join(format!("run-{i:03}"));
        let (digest, statuses) = recover_and_sync(snapshot, &scratch);
        assert_eq!(
            digest, oracle_digests[expect_ops],
            "snapshot {i} ({snapshot:?}): tree diverged from oracle at {expect_ops} ops"
        );
        assert!(
            statuses.iter().all(|s| *s == OpStatus::Ok),
            "snapshot {i}: replay produced non-OK statuses {statuses:?}"
        );
        points_checked += 1;
        // Torn-tail variant: crash mid-append loses the unsynced record and
        // recovery lands exactly one op earlier.
        if matches!(i % 3, 1) && *includes_inflight {
            let torn = work.path().join(format!("torn-{i:03}"));
            copy_dir(snapshot, &torn);
            let log = torn.join("log");
            let len = std::fs::metadata(&log).unwrap().len();
            let f = std::fs::OpenOptions::new().write(true).open(&log).unwrap();
            f.set_len(len.saturating_sub(3)).unwrap();
            drop(f);
            let scratch = work.path().join(format!("torn-run-{i:03}"));
            let (digest, _) = recover_and_sync(&torn, &scratch);
            assert_eq!(
                digest, oracle_digests[*ops_returned],
                "torn snapshot {i}: must recover the intact prefix only"
            );
            points_checked += 1;
        }
    }
    budget("criterion 5", started, Duration::from_secs(120));
    println!(
        "ACCEPTANCE 5 PASS: {points_checked} crash points recovered to oracle digests, no lost or duplicated ops"
    );
}

/// Criterion 5 addendum: ops acknowledged before the crash are not
/// re-applied after recovery (idempotency across a real drain).
#[test]
fn acceptance_5b_no_double_apply_after_partial_drain() {
    let started = Instant::now();
    run_sim(async {
        let env = SimEnv::start(LinkProfile::wan(1.0, 0), 1015).await;
        let mount = env.mount("c1").await;
        mount.opendir("/").await.unwrap();

        // First half drains normally.
        for op in recovery_script().iter().take(10) {
            apply_script_op(&mount, op).await;
        }
        wait_queue_empty(&mount).await;

        // Second half stays queued behind a partition.
        env.net.set_partition(true);
        tokio::time::sleep(Duration::from_millis(20)).await;
        for op in recovery_script().iter().skip(10) {
            apply_script_op(&mount, op).await;
        }

        // Heal and sync; replay must cover only the queued suffix.
        env.net.set_partition(false);
        let report = mount.sync().await.unwrap();
        assert!(report.drained.iter().all(|r| r.status == OpStatus::Ok), "{report:?}");

        let oracle = tempfile::tempdir().unwrap();
        oracle_apply(oracle.path(), recovery_script().len());
        assert_eq!(
            tree_digest(&env.export_root()).unwrap(),
            tree_digest(oracle.path()).unwrap(),
            "partial-drain recovery diverged"
        );
        // Re-sending the already-acked batch is acknowledged as duplicate,
        // not re-executed: replay the full queue log through a fresh sync.
        let second = mount.sync().await.unwrap();
        assert!(second.drained.is_empty());
        mount.shutdown();
    });
    budget("criterion 5b", started, Duration::from_secs(60));
    println!("ACCEPTANCE 5b PASS: partial drain + recovery applied each op exactly once");
}

/// Criterion 6: coherency. All causal orderings of {A's flush ack,
/// B's INVALIDATE delivery, B's open}: an open after the invalidation
/// returns A's content; handles opened before it keep their snapshot.
#[test]
fn acceptance_6_coherency_interleavings() {
    let started = Instant::now();
    // One-way latency 250 ms gives a wide window between the ack (RPC
    // round-trip) and B's invalidation delivery, so the open can be placed
    // on either side deterministically.
    for ordering in ["open-before-flush", "open-before-invalidate", "open-after-invalidate"] {
        run_sim(async move {
            let env = SimEnv::start(LinkProfile::wan(500.0, 0), 1006).await;
            put_file(&env.export_root(), "f", b"old!");
            let a = env.mount("alice").await;
            let b = env.mount("bob").await;
            for m in [&a, &b] {
                m.opendir("/").await.unwrap();
                let mut h = m.open("/f", AccessMode::Read, OpenFlags::default()).await.unwrap();
                h.read(8).unwrap();
                m.close(h).unwrap();
            }

            let mut held = if ordering == "open-before-flush" {
                Some(b.open("/f", AccessMode::Read, OpenFlags::default()).await.unwrap())
            } else {
                None
            };

            // A flushes new content (same size: no renegotiation). The
            // drainer ships it immediately: the server applies it one
            // one-way latency later (t+250 ms), and both A's ack and B's
            // INVALIDATE are delivered one RTT after the close (t+500 ms).
            let mut h = a
                .open("/f", AccessMode::Write, OpenFlags { truncate: true, create: false })
                .await
                .unwrap();
            h.write(b"new!").unwrap();
            a.close(h).unwrap();

            if ordering == "open-before-invalidate" {
                // Inside the (apply, delivery) window: the server already
                // holds A's bytes but B has not heard yet.
                tokio::time::sleep(Duration::from_millis(300)).await;
                let inv_delivered = env.net.transcript().count(|e| {
                    e.event == EventKind::Delivered && e.kind == MessageKind::Invalidate
                });
                assert_eq!(inv_delivered, 0, "invalidation must still be in flight");
                let mut h =
                    b.open("/f", AccessMode::Read, OpenFlags::default()).await.unwrap();
                assert_eq!(
                    h.read(8).unwrap(),
                    b"old!",
                    "an open before the invalidation serves the cached copy"
                );
                held = Some(h);
            }

            // Let the flush ack and the invalidation land.
            wait_queue_empty(&a).await;
            tokio::time::sleep(Duration::from_millis(700)).await;
            let inv_delivered = env
                .net
                .transcript()
                .count(|e| e.event == EventKind::Delivered && e.kind == MessageKind::Invalidate);
            assert!(inv_delivered >= 1, "invalidation must have been delivered");

            if let Some(mut h) = held {
                // Opened before the invalidation: open-to-close snapshot.
                h.seek(0);
                assert_eq!(h.read(8).unwrap(), b"old!", "{ordering}: snapshot violated");
                b.close(h).unwrap();
            }
            // Any open after the invalidation returns A's content.
            let mut h = b.open("/f", AccessMode::Read, OpenFlags::default()).await.unwrap();
            assert_eq!(h.read(8).unwrap(), b"new!", "{ordering}: must see A's bytes");
            b.close(h).unwrap();
            a.shutdown();
            b.shutdown();
        });
    }
    budget("criterion 6", started, Duration::from_secs(60));
    println!("ACCEPTANCE 6 PASS: all 3 causal orderings of (ack, invalidate, open) behave");
}

/// Criterion 7: last-close-wins under 1000 randomized two-handle write and
/// close schedules; the server content equals a byte-array oracle applying
/// the coalesced flushes in close order.
#[test]
fn acceptance_7_last_close_wins() {
    use rand::{Rng, SeedableRng};
    let started = Instant::now();
    run_sim(async {
        let env = SimEnv::start(LinkProfile::wan(1.0, 0), 1007).await;
        let mount = env.mount("c1").await;
        mount.opendir("/").await.unwrap();

        let mut oracles: Vec<(String, Vec<u8>)> = Vec::new();
        for seed in 0..1000u64 {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let name = format!("f{seed:04}");
            let mut h1 = mount
                .open(&name, AccessMode::Write, OpenFlags { create: true, truncate: false })
                .await
                .unwrap();
            let mut h2 = mount
                .open(&name, AccessMode::Write, OpenFlags { create: false, truncate: false })
                .await
                .unwrap();
            let mut recs1: Vec<(u64, Vec<u8>)> = Vec::new();
            let mut recs2: Vec<(u64, Vec<u8>)> = Vec::new();
            for _ in 0..rng.random_range(1..8) {
                let offset = rng.random_range(0..48u64);
                let len = rng.random_range(1..24usize);
                let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                if rng.random_bool(0.5) {
                    h1.write_at(offset, &data).unwrap();
                    recs1.push((offset, data));
                } else {
                    h2.write_at(offset, &data).unwrap();
                    recs2.push((offset, data));
                }
            }
            // Random close order decides the winner.
            let close_order: Vec<(xufs::vfs::OpenHandle, Vec<(u64, Vec<u8>)>)> =
                if rng.random_bool(0.5) {
                    vec![(h1, recs1), (h2, recs2)]
                } else {
                    vec![(h2, recs2), (h1, recs1)]
                };
            // Oracle: apply each handle's coalesced writes to the pre-image
            // in close order. Coalescing preserves replay order, so the
            // oracle can replay raw records handle by handle.
            let mut image: Vec<u8> = Vec::new();
            for (handle, recs) in close_order {
                for (offset, data) in &recs {
                    let end = (*offset as usize) + data.len();
                    if image.len() < end {
                        image.resize(end, 0);
                    }
                    image[*offset as usize..end].copy_from_slice(data);
                }
                mount.close(handle).unwrap();
            }
            oracles.push((name, image));
        }
        wait_queue_empty(&mount).await;
        for (name, expected) in &oracles {
            let got = std::fs::read(env.export_root().join(name)).unwrap();
            assert_eq!(&got, expected, "{name}: server bytes diverged from close-order oracle");
        }
        mount.shutdown();
    });
    budget("criterion 7", started, Duration::from_secs(60));
    println!("ACCEPTANCE 7 PASS: 1000 randomized two-handle schedules match the close-order oracle");
}

/// Criterion 8: localized directories. A session creating, writing,
/// locking, and reading under a localized prefix leaves zero content or
/// lock traffic for those paths in the transcript.
#[test]
fn acceptance_8_localized_directories() {
    let started = Instant::now();
    run_sim(async {
        let env = SimEnv::start(LinkProfile::wan(10.0, 0), 1008).await;
        put_file(&env.export_root(), "normal.txt", b"remote");
        let mount = env.mount_localized("c1", vec!["scratch".into()]).await;
        mount.opendir("/").await.unwrap();

        let script = r#"
mkdir /scratch/work
open h /scratch/work/data.bin w,create
write h "local-only payload"
close h
lock t /scratch/work/data.bin ex
open r /scratch/work/data.bin r
read r 18
close r
unlock t
stat /scratch/work/data.bin
"#;
        let outcome = xufs::cli::script::run_script(&mount, script, false).await.unwrap();
        assert_eq!(outcome.failures, 0, "{outcome:?}");

        let localized_events = env.net.transcript().count(|e| {
            e.path.as_deref().map(|p| p.starts_with("scratch")).unwrap_or(false)
        });
        assert_eq!(localized_events, 0, "no wire event may name a localized path");
        let lock_msgs = env.net.transcript().count(|e| {
            matches!(
                e.kind,
                MessageKind::LockReq
                    | MessageKind::LockResp
                    | MessageKind::LeaseRenew
                    | MessageKind::LeaseAck
                    | MessageKind::Unlock
            )
        });
        assert_eq!(lock_msgs, 0, "no lock traffic for localized paths");
        let content_msgs = env.net.transcript().count(|e| {
            matches!(
                e.kind,
                MessageKind::FetchReq
                    | MessageKind::FetchSegment
                    | MessageKind::MetaOpBatch
            ) && e.event == EventKind::Sent
        });
        assert_eq!(content_msgs, 0, "no content traffic during the localized session");
        assert_eq!(mount.queue_len(), 0);
        mount.shutdown();
    });
    budget("criterion 8", started, Duration::from_secs(30));
    println!("ACCEPTANCE 8 PASS: localized session produced zero content/lock wire traffic");
}

/// Criterion 9: lease safety. Randomized grant/renew/expire schedules never
/// yield two live exclusive leases on one path; a lock held across a
/// partition shorter than the term survives; an unrenewed lock becomes
/// reclaimable after expiry.
#[test]
fn acceptance_9_lease_safety() {
    use rand::{Rng, SeedableRng};
    let started = Instant::now();

    // (a) 500 randomized schedules against a brute-force holder check.
    // Renewal gaps model partitions: a partitioned holder stops renewing.
    for seed in 0..500u64 {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed ^ 0x9e37);
        let mut table = LeaseTable::new(1_000);
        let mut now = 0u64;
        let mut held: Vec<(u64, &'static str)> = Vec::new();
        let holders = ["a", "b", "c"];
        for _ in 0..80 {
            now += rng.random_range(0..600);
            let holder = holders[rng.random_range(0..holders.len())];
            match rng.random_range(0..4) {
                0 => {
                    if let Ok(lease) = table.grant("p", LockMode::Exclusive, holder, now) {
                        held.push((lease.lock_id, holder));
                    }
                }
                1 => {
                    if let Some(&(id, owner)) = held.last() {
                        if table.renew(id, owner, now).is_err() {
                            held.pop();
                        }
                    }
                }
                2 => {
                    if let Some((id, owner)) = held.pop() {
                        let _ = table.release(id, owner);
                    }
                }
                _ => {} // time passes; leases silently expire
            }
            let mut exclusive_holders: Vec<&str> = table
                .live(now)
                .filter(|l| l.path == "p" && l.mode == LockMode::Exclusive)
                .map(|l| l.holder.as_str())
                .collect();
            exclusive_holders.sort();
            exclusive_holders.dedup();
            assert!(
                exclusive_holders.len() <= 1,
                "seed {seed}: two exclusive holders {exclusive_holders:?}"
            );
        }
    }

    // (b) a lock held across a partition shorter than the term survives,
    // and (c) an unrenewed lock is reclaimable after expiry.
    run_sim(async {
        let env = SimEnv::start(LinkProfile::wan(10.0, 0), 1009).await;
        put_file(&env.export_root(), "f", b"x");
        let a = env.mount("alice").await;
        let b = env.mount("bob").await;
        for m in [&a, &b] {
            m.opendir("/").await.unwrap();
        }
        let term_ms = a.knobs().lease_term_ms;
        let _token = a.lock("/f", LockMode::Exclusive).await.unwrap();

        // Partition for 20 s (< 30 s term), then heal.
        env.net.partition_host("alice", true);
        tokio::time::sleep(Duration::from_secs(20)).await;
        env.net.partition_host("alice", false);
        a.wait_connected().await;
        // Give the renewal retry loop a beat to land.
        tokio::time::sleep(Duration::from_millis(1500)).await;

        match b.lock("/f", LockMode::Exclusive).await {
            Err(XufsError::Conflict(_)) => {}
            other => panic!("lease must survive a {}s partition: {other:?}", 20),
        }
        let renews = env.net.transcript().sent_count(MessageKind::LeaseRenew);
        assert!(renews >= 1, "renewals must resume after the partition heals");

        // (c) stop renewing entirely: kill A's mount. After expiry B gets it.
        a.shutdown();
        tokio::time::sleep(Duration::from_millis(term_ms + 2_000)).await;
        let token_b = b
            .lock("/f", LockMode::Exclusive)
            .await
            .expect("unrenewed lease must be reclaimable after expiry");
        b.unlock(token_b).await.unwrap();
        b.shutdown();
    });
    budget("criterion 9", started, Duration::from_secs(60));
    println!("ACCEPTANCE 9 PASS: 500 seeds safe; lease survived 20s partition; expiry reclaimed");
}

/// Criterion 10: warm reads of >= 4 MiB files reach at least 0.9x a direct
/// local-volume read baseline measured by the same harness.
#[test]
fn acceptance_10_warm_read_throughput() {
    let _guard = big_lock();
    let started = Instant::now();
    let (ratio4, ratio16) = run_sim(async {
        let env = SimEnv::start(LinkProfile::wan(40.0, 100 * MIB), 1010).await;
        generate_file(&env.export_root().join("m4.bin"), 4 * MIB, 4).unwrap();
        generate_file(&env.export_root().join("m16.bin"), 16 * MIB, 16).unwrap();
        let mount = env.mount("c1").await;
        mount.opendir("/").await.unwrap();

        let mut ratios = Vec::new();
        for (name, len) in [("m4.bin", 4 * MIB), ("m16.bin", 16 * MIB)] {
            let path = format!("/{name}");
            // Populate the cache (cold fetch) and warm the page cache.
            let mut h = mount.open(&path, AccessMode::Read, OpenFlags::default()).await.unwrap();
            h.scan_all(MIB as usize).unwrap();
            mount.close(h).unwrap();

            // Local baseline on the same volume as the cache space.
            let baseline_path = mount.cache().root().join("baseline.bin");
            generate_file(&baseline_path, len, 77).unwrap();
            let _ = scan_local(&baseline_path).unwrap();

            let mut warm_best = f64::MAX;
            let mut local_best = f64::MAX;
            for _ in 0..5 {
                let t = Instant::now();
                let mut h =
                    mount.open(&path, AccessMode::Read, OpenFlags::default()).await.unwrap();
                assert_eq!(h.scan_all(MIB as usize).unwrap(), len);
                mount.close(h).unwrap();
                warm_best = warm_best.min(t.elapsed().as_secs_f64());

                let t = Instant::now();
                assert_eq!(scan_local(&baseline_path).unwrap(), len);
                local_best = local_best.min(t.elapsed().as_secs_f64());
            }
            std::fs::remove_file(&baseline_path).unwrap();
            let warm_throughput = len as f64 / warm_best;
            let local_throughput = len as f64 / local_best;
            ratios.push(warm_throughput / local_throughput);
        }
        mount.shutdown();
        (ratios[0], ratios[1])
    });
    for (label, ratio) in [("4 MiB", ratio4), ("16 MiB", ratio16)] {
        assert!(
            ratio >= 0.9,
            "warm {label} read reached only {ratio:.2}x of the local baseline"
        );
    }
    budget("criterion 10", started, Duration::from_secs(60));
    println!(
        "ACCEPTANCE 10 PASS: warm read throughput {ratio4:.2}x (4 MiB) and {ratio16:.2}x (16 MiB) of local baseline"
    );
}
