//! The client operation surface: mount a remote name space against a local
//! cache space and operate on it with transparent fetch-on-first-use,
//! write-back on close, parallel pre-fetch, lock forwarding, callback-driven
//! invalidation, reconnection with backoff, and recovery sync.
//!
//! No mutating operation blocks on a network call: mutations apply to the
//! cache, enqueue onto the persisted meta-operation queue, and return; a
//! background drainer ships batches and processes acks.

pub mod conn;
pub mod handle;

pub use handle::{AccessMode, OpenFlags, OpenHandle};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Notify, Semaphore};

use crate::cache::{shadow, CacheSpace, ContentState, MetaQueue, ShadowFile, StoredEntry};
use crate::config::Knobs;
use crate::error::{Result, XufsError};
use crate::net::{Conn, Transport};
use crate::paths;
use crate::wire::auth::AuthCredential;
use crate::wire::stripe::Coverage;
use crate::wire::{
    EntryAttributes, EntryKind, LockMode, LockResult, MetaOpArgs, OpOutcome, OpStatus, Payload,
};

use conn::RpcClient;

/// Flush pieces are capped below the frame limit so one piece plus batch
/// framing always fits.
const FLUSH_PIECE_BYTES: usize = 8 * 1024 * 1024;
const BATCH_MAX_OPS: usize = 64;
const BATCH_MAX_BYTES: usize = 12 * 1024 * 1024;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MountConfig {
    pub server_addr: String,
    pub export_id: String,
    pub cache_root: PathBuf,
    pub localized: Vec<String>,
    pub client_id: String,
    #[serde(default)]
    pub knobs: Knobs,
}

/// The persisted mount configuration, `meta/mount.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MountFile {
    pub server_addr: String,
    pub export_id: String,
    pub localized: Vec<String>,
    pub client_id: String,
    pub knobs: Knobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionState {
    Connected,
    Disconnected,
}

/// Result of draining one queued op, for sync reports.
#[derive(Debug, Clone, Serialize)]
pub struct OpReport {
    pub op_id: u64,
    pub kind: &'static str,
    pub target: String,
    pub status: OpStatus,
    pub new_version: u64,
    /// For flushes: the server version the flush overwrote.
    pub prev_version: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SyncReport {
    pub drained: Vec<OpReport>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PrefetchReport {
    pub fetched: Vec<String>,
    pub failed: Vec<(String, String)>,
    /// Files skipped because they meet or exceed the size threshold.
    pub skipped_large: usize,
}

/// Directory handle: a listing snapshot taken at opendir time.
#[derive(Debug, Clone)]
pub struct DirList {
    pub path: String,
    pub entries: Vec<EntryAttributes>,
}

#[derive(Debug)]
pub struct LockToken {
    pub rel_path: String,
    pub mode: LockMode,
    local_id: u64,
    remote_lock_id: Option<u64>,
}

struct LockRuntime {
    next_local_id: u64,
    /// Local lock table for localized paths: path -> (local_id, mode).
    local: BTreeMap<String, Vec<(u64, LockMode)>>,
    /// Renewal tasks for remote leases, keyed by local id.
    renewals: BTreeMap<u64, tokio::task::JoinHandle<()>>,
}

struct MountInner {
    cfg: MountConfig,
    credential: AuthCredential,
    transport: Transport,
    cache: CacheSpace,
    queue: Mutex<MetaQueue>,
    rpc: Mutex<Option<Arc<RpcClient>>>,
    conn_state: watch::Sender<bool>,
    /// Fresh callback connection parked here for the session loop to adopt.
    pending_callback: Mutex<Option<Conn>>,
    fetch_guards: Mutex<BTreeMap<String, Arc<tokio::sync::Mutex<()>>>>,
    drain_lock: tokio::sync::Mutex<()>,
    connect_lock: tokio::sync::Mutex<()>,
    drain_notify: Notify,
    kick_reconnect: Notify,
    disconnect_notify: Notify,
    next_handle_id: AtomicU64,
    locks: Mutex<LockRuntime>,
    shutdown: watch::Sender<bool>,
    tasks: Mutex<Vec<tokio::task::JoinHandle<()>>>,
}

#[derive(Clone)]
pub struct Mount {
    inner: Arc<MountInner>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MountOptions {
    /// Drain the pending queue as part of mounting (before returning).
    pub auto_drain: bool,
}

impl Default for MountOptions {
    fn default() -> Self {
        MountOptions { auto_drain: true }
    }
}

fn wall_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn wall_ns() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0)
}

impl Mount {
    pub async fn mount(
        transport: Transport,
        cfg: MountConfig,
        credential: AuthCredential,
    ) -> Result<Mount> {
        Mount::mount_with(transport, cfg, credential, MountOptions::default()).await
    }

    pub async fn mount_with(
        transport: Transport,
        mut cfg: MountConfig,
        credential: AuthCredential,
        options: MountOptions,
    ) -> Result<Mount> {
        cfg.localized = cfg
            .localized
            .iter()
            .map(|p| paths::normalize(p))
            .collect::<Result<Vec<_>>>()?;
        let existed = CacheSpace::exists(&cfg.cache_root, &cfg.export_id);
        let cache = CacheSpace::init(&cfg.cache_root, &cfg.export_id, cfg.localized.clone())?;
        let queue = cache.open_queue()?;
        std::fs::write(
            cache.meta_dir().join("mount.json"),
            serde_json::to_vec_pretty(&MountFile {
                server_addr: cfg.server_addr.clone(),
                export_id: cfg.export_id.clone(),
                localized: cfg.localized.clone(),
                client_id: cfg.client_id.clone(),
                knobs: cfg.knobs.clone(),
            })
            .expect("mount config serializes"),
        )?;

        let (conn_state, _) = watch::channel(false);
        let (shutdown, _) = watch::channel(false);
        let inner = Arc::new(MountInner {
            cfg,
            credential,
            transport,
            cache,
            queue: Mutex::new(queue),
            rpc: Mutex::new(None),
            conn_state,
            pending_callback: Mutex::new(None),
            fetch_guards: Mutex::new(BTreeMap::new()),
            drain_lock: tokio::sync::Mutex::new(()),
            connect_lock: tokio::sync::Mutex::new(()),
            drain_notify: Notify::new(),
            kick_reconnect: Notify::new(),
            disconnect_notify: Notify::new(),
            next_handle_id: AtomicU64::new(1),
            locks: Mutex::new(LockRuntime {
                next_local_id: 1,
                local: BTreeMap::new(),
                renewals: BTreeMap::new(),
            }),
            shutdown,
            tasks: Mutex::new(Vec::new()),
        });
        let mount = Mount { inner };
        mount.restore_dirty_marks()?;

        match mount.inner.connect_once(&mount).await {
            Ok(()) => {
                if options.auto_drain {
                    // Recovery ops ship before any new operation is sent.
                    let _ = mount.drain_once().await;
                }
            }
            Err(e @ XufsError::AuthFailed(_)) => return Err(e),
            Err(e @ XufsError::CredentialExpired) => return Err(e),
            Err(e) => {
                if !existed {
                    return Err(XufsError::Unreachable(format!(
                        "{} and no prior cache space: {e}",
                        mount.inner.cfg.server_addr
                    )));
                }
                // Disconnected mount over the surviving cache space.
            }
        }

        let drainer = tokio::spawn(drainer_loop(mount.clone()));
        let supervisor = tokio::spawn(session_loop(mount.clone()));
        mount.inner.tasks.lock().unwrap().extend([drainer, supervisor]);
        Ok(mount)
    }

    /// Marks entries with pending queued ops as DIRTY after a restart, so
    /// re-materialization never discards content awaiting write-back.
    fn restore_dirty_marks(&self) -> Result<()> {
        let targets: Vec<String> = {
            let queue = self.inner.queue.lock().unwrap();
            queue.pending_ops().map(|op| op.target.clone()).collect()
        };
        for target in targets {
            let _ = self.inner.cache.update_entry(&target, |e| {
                e.state = ContentState::Dirty;
            });
        }
        Ok(())
    }

    pub fn connection_state(&self) -> ConnectionState {
        if *self.inner.conn_state.borrow() {
            ConnectionState::Connected
        } else {
            ConnectionState::Disconnected
        }
    }

    pub fn connected(&self) -> bool {
        self.connection_state() == ConnectionState::Connected
    }

    /// Waits until the mount reports connected (virtual time in sim runs).
    pub async fn wait_connected(&self) {
        let mut rx = self.inner.conn_state.subscribe();
        while !*rx.borrow() {
            if rx.changed().await.is_err() {
                return;
            }
        }
    }

    pub fn queue_len(&self) -> usize {
        self.inner.queue.lock().unwrap().pending_len()
    }

    pub fn cache(&self) -> &CacheSpace {
        &self.inner.cache
    }

    /// Installs a crash-point callback on the queue (harness seam for
    /// durability testing: the callback snapshots on-disk state at the
    /// enqueue sync boundaries).
    pub fn set_queue_crash_hook(&self, hook: crate::cache::queue::CrashHook) {
        self.inner.queue.lock().unwrap().set_crash_hook(hook);
    }

    pub fn client_id(&self) -> &str {
        &self.inner.cfg.client_id
    }

    pub fn knobs(&self) -> &Knobs {
        &self.inner.cfg.knobs
    }

    /// Stops background activity. Pending queue state stays on disk.
    pub fn shutdown(&self) {
        let _ = self.inner.shutdown.send(true);
        let renewals = std::mem::take(&mut self.inner.locks.lock().unwrap().renewals);
        for (_, task) in renewals {
            task.abort();
        }
        for task in std::mem::take(&mut *self.inner.tasks.lock().unwrap()) {
            task.abort();
        }
        *self.inner.rpc.lock().unwrap() = None;
        *self.inner.pending_callback.lock().unwrap() = None;
    }

    // ------------------------------------------------------------------
    // Directory operations
    // ------------------------------------------------------------------

    /// First invocation per directory performs one READDIR round-trip and
    /// materializes the listing; later invocations are cache-only.
    pub async fn opendir(&self, path: &str) -> Result<DirList> {
        let rel = paths::normalize(path)?;
        if self.inner.cache.is_localized(&rel) {
            self.ensure_localized_dir(&rel)?;
        } else if self.inner.cache.read_dir_meta(&rel)?.is_none() {
            if !self.connected() {
                return Err(XufsError::DisconnectedMiss(format!("/{rel}")));
            }
            self.fetch_listing(&rel).await?;
        }
        let entries = self
            .inner
            .cache
            .list_entries(&rel)?
            .into_iter()
            .map(|e| e.attrs)
            .collect();
        Ok(DirList { path: rel, entries })
    }

    async fn fetch_listing(&self, rel: &str) -> Result<()> {
        let rpc = self.inner.rpc()?;
        let resp = self
            .inner
            .rpc_call(&rpc, Payload::ReaddirReq { path: rel.to_string() })
            .await?;
        let entries = match resp.payload {
            Payload::ReaddirResp { entries } => entries,
            other => {
                return Err(XufsError::ProtocolError(format!(
                    "expected READDIR_RESP, got {:?}",
                    other.kind()
                )))
            }
        };
        let dir_version = self
            .inner
            .cache
            .read_entry(rel)?
            .map(|e| e.attrs.version)
            .unwrap_or(0);
        self.inner.cache.materialize_dir(rel, dir_version, &entries)?;
        Ok(())
    }

    fn ensure_localized_dir(&self, rel: &str) -> Result<()> {
        // Localized directories are implicitly materialized: they exist
        // purely client-side.
        self.ensure_local_parents(rel)?;
        if !rel.is_empty() && self.inner.cache.read_entry(rel)?.is_none() {
            self.inner.cache.create_local_entry(
                rel,
                EntryKind::Dir,
                0o755,
                wall_ns(),
                ContentState::Cached,
            )?;
        }
        if self.inner.cache.read_dir_meta(rel)?.is_none() {
            self.inner
                .cache
                .write_dir_meta(rel, crate::cache::DirMeta { version: 0, prefetched: true })?;
        }
        Ok(())
    }

    fn ensure_local_parents(&self, rel: &str) -> Result<()> {
        let Some((parent, _)) = paths::split(rel) else {
            return Ok(());
        };
        if parent.is_empty() {
            return Ok(());
        }
        let mut acc = String::new();
        for comp in parent.split('/') {
            acc = paths::join(&acc, comp);
            if self.inner.cache.read_entry(&acc)?.is_none() {
                if !self.inner.cache.is_localized(&acc) {
                    return Err(XufsError::NotFound(format!("/{acc}")));
                }
                self.inner.cache.create_local_entry(
                    &acc,
                    EntryKind::Dir,
                    0o755,
                    wall_ns(),
                    ContentState::Cached,
                )?;
                self.inner
                    .cache
                    .write_dir_meta(&acc, crate::cache::DirMeta { version: 0, prefetched: true })?;
            }
        }
        Ok(())
    }

    /// Cached attribute snapshot; never touches the network.
    pub fn stat(&self, path: &str) -> Result<EntryAttributes> {
        let rel = paths::normalize(path)?;
        self.inner.cache.read_cached_attrs(&rel)
    }

    // ------------------------------------------------------------------
    // File open / fetch
    // ------------------------------------------------------------------

    pub async fn open(&self, path: &str, mode: AccessMode, flags: OpenFlags) -> Result<OpenHandle> {
        let rel = paths::normalize(path)?;
        if rel.is_empty() {
            return Err(XufsError::NotFound("/".into()));
        }
        let localized = self.inner.cache.is_localized(&rel);
        let mut entry = self.inner.cache.read_entry(&rel)?;
        if entry.is_none() {
            if !(flags.create && mode.writable()) {
                return Err(XufsError::NotFound(format!("/{rel}")));
            }
            entry = Some(self.create_file_entry(&rel, localized)?);
        }
        let entry = entry.unwrap();
        if entry.attrs.kind == EntryKind::Dir {
            return Err(XufsError::NotADirectory(format!("/{rel} is a directory")));
        }
        let needs_fetch = matches!(entry.state, ContentState::Empty | ContentState::Invalid)
            && !localized
            && !(flags.truncate && mode.writable());
        if needs_fetch {
            self.ensure_cached(&rel).await?;
        }

        let data_path = self.inner.cache.data_path(&rel);
        let file = std::fs::OpenOptions::new()
            .read(true)
            .write(mode.writable())
            .open(&data_path)?;
        let entry = self.inner.cache.read_entry(&rel)?.unwrap();
        let base_version = entry.cached_version;
        let handle_id = self.inner.next_handle_id.fetch_add(1, Ordering::SeqCst);
        let shadow = if mode.writable() {
            if flags.truncate {
                file.set_len(0)?;
            }
            Some(ShadowFile::create(
                self.inner.cache.shadow_dir(),
                handle_id,
                &rel,
                base_version,
                flags.truncate,
            )?)
        } else {
            None
        };
        Ok(OpenHandle { handle_id, rel_path: rel, mode, position: 0, file, shadow, localized })
    }

    fn create_file_entry(&self, rel: &str, localized: bool) -> Result<StoredEntry> {
        self.ensure_local_parents(rel)?;
        let state = if localized { ContentState::Cached } else { ContentState::Dirty };
        let entry =
            self.inner.cache.create_local_entry(rel, EntryKind::File, 0o644, wall_ns(), state)?;
        if !localized {
            self.enqueue(rel, MetaOpArgs::Create { mode: 0o644 })?;
        }
        Ok(entry)
    }

    /// Fetches content for an EMPTY or INVALID entry, once, even under
    /// concurrent openers. Retries once through a listing refresh when the
    /// server reports a size mismatch.
    async fn ensure_cached(&self, rel: &str) -> Result<()> {
        let guard = {
            let mut guards = self.inner.fetch_guards.lock().unwrap();
            guards
                .entry(rel.to_string())
                .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(())))
                .clone()
        };
        let _locked = guard.lock().await;
        let entry = self
            .inner
            .cache
            .read_entry(rel)?
            .ok_or_else(|| XufsError::NotFound(format!("/{rel}")))?;
        if matches!(entry.state, ContentState::Cached | ContentState::Dirty) {
            return Ok(());
        }
        if !self.connected() {
            return Err(XufsError::DisconnectedMiss(format!("/{rel}")));
        }
        match self.fetch_content(rel, entry.attrs.size).await {
            Ok(()) => Ok(()),
            Err(XufsError::SizeChanged(_)) => {
                // Stale attributes: refresh the parent listing, retry once.
                let parent = paths::parent(rel).unwrap_or("").to_string();
                self.fetch_listing(&parent).await?;
                let entry = self
                    .inner
                    .cache
                    .read_entry(rel)?
                    .ok_or_else(|| XufsError::NotFound(format!("/{rel}")))?;
                self.fetch_content(rel, entry.attrs.size).await
            }
            Err(e) => Err(e),
        }
    }

    async fn fetch_content(&self, rel: &str, expected_size: u64) -> Result<()> {
        use std::os::unix::fs::FileExt;
        let rpc = self.inner.rpc()?;
        let mut stream = match rpc
            .start(Payload::FetchReq { path: rel.to_string(), total_length: expected_size })
            .await
        {
            Ok(s) => s,
            Err(e) => {
                self.inner.mark_disconnected();
                return Err(e);
            }
        };
        let (parent, name) = paths::split(rel).unwrap();
        let tmp_path = paths::under(self.inner.cache.data_root(), parent)
            .join(format!("{}{}.fetch", paths::HIDDEN_PREFIX, name));
        let tmp = std::fs::OpenOptions::new()
            .create(true)
            .truncate(true)
            .write(true)
            .open(&tmp_path)?;
        let mut coverage = Coverage::new();
        // Stripes are independent streams: FETCH_DONE can overtake data
        // still in flight on other stripes, so completion is reached only
        // when DONE has arrived AND the coverage is exact.
        let mut done: Option<(u64, u64)> = None;
        let result = loop {
            if let Some((version, total_length)) = done {
                if coverage.complete(total_length) {
                    tmp.set_len(total_length)?;
                    drop(tmp);
                    // Swap the new content in atomically; handles opened
                    // against the old file keep their snapshot.
                    std::fs::rename(&tmp_path, self.inner.cache.data_path(rel))?;
                    self.inner.cache.update_entry(rel, |e| {
                        e.state = ContentState::Cached;
                        e.cached_version = version;
                        e.attrs.size = total_length;
                        e.attrs.version = e.attrs.version.max(version);
                    })?;
                    return Ok(());
                }
            }
            let msg = match stream.recv().await {
                Ok(m) => m,
                Err(e) => {
                    self.inner.mark_disconnected();
                    break Err(e);
                }
            };
            match msg.payload {
                Payload::FetchSegment { offset, data, .. } => {
                    coverage.add(offset, data.len() as u64)?;
                    tmp.write_all_at(&data, offset)?;
                }
                Payload::FetchDone { version, total_length, .. } => {
                    done = Some((version, total_length));
                }
                Payload::Error { code, detail } => {
                    break Err(XufsError::from_wire(code, detail));
                }
                other => {
                    break Err(XufsError::ProtocolError(format!(
                        "unexpected {:?} in fetch stream",
                        other.kind()
                    )))
                }
            }
        };
        let _ = std::fs::remove_file(&tmp_path);
        result
    }

    // ------------------------------------------------------------------
    // Close / write-back
    // ------------------------------------------------------------------

    /// Closes a handle. Write handles coalesce their shadow into flush ops
    /// appended to the queue (localized targets never enqueue); the call
    /// returns without waiting for any server acknowledgment.
    pub fn close(&self, mut handle: OpenHandle) -> Result<()> {
        let Some(shadow) = handle.shadow.take() else {
            return Ok(()); // read-only: nothing beyond handle release
        };
        let rel = handle.rel_path.clone();
        let extents = shadow.coalesce();
        let truncate = shadow.truncate_base;
        let base_version = shadow.base_version;
        let had_writes = !extents.is_empty() || truncate;
        shadow.remove()?;
        if !had_writes {
            return Ok(());
        }
        let final_len = handle.len()?;
        let pieces =
            shadow::build_flush_ops(extents, truncate, final_len, base_version, FLUSH_PIECE_BYTES);
        // Re-apply in close order so concurrent handles on this path settle
        // to last-close-wins locally, matching what the server will hold.
        let data_path = self.inner.cache.data_path(&rel);
        for piece in &pieces {
            shadow::apply_flush(&data_path, piece)?;
        }
        let localized = handle.localized;
        if !localized {
            for piece in pieces {
                self.enqueue(&rel, MetaOpArgs::FlushShadow(piece))?;
            }
        }
        self.inner.cache.update_entry(&rel, |e| {
            e.attrs.size = final_len;
            e.attrs.mtime_ns = wall_ns();
            if !localized {
                e.state = ContentState::Dirty;
            }
        })?;
        Ok(())
    }

    fn enqueue(&self, rel: &str, args: MetaOpArgs) -> Result<u64> {
        let id = {
            let mut queue = self.inner.queue.lock().unwrap();
            queue.enqueue(rel.to_string(), args, wall_ms())?
        };
        self.inner.drain_notify.notify_one();
        Ok(id)
    }

    // ------------------------------------------------------------------
    // Namespace mutations (local-first, queued)
    // ------------------------------------------------------------------

    pub fn mkdir(&self, path: &str) -> Result<()> {
        let rel = paths::normalize(path)?;
        if self.inner.cache.read_entry(&rel)?.is_some() {
            return Err(XufsError::Exists(format!("/{rel}")));
        }
        self.ensure_local_parents(&rel)?;
        let localized = self.inner.cache.is_localized(&rel);
        let state = if localized { ContentState::Cached } else { ContentState::Dirty };
        self.inner.cache.create_local_entry(&rel, EntryKind::Dir, 0o755, wall_ns(), state)?;
        self.inner
            .cache
            .write_dir_meta(&rel, crate::cache::DirMeta { version: 0, prefetched: true })?;
        if !localized {
            self.enqueue(&rel, MetaOpArgs::Mkdir { mode: 0o755 })?;
        }
        Ok(())
    }

    pub fn unlink(&self, path: &str) -> Result<()> {
        let rel = paths::normalize(path)?;
        let entry = self
            .inner
            .cache
            .read_entry(&rel)?
            .ok_or_else(|| XufsError::NotFound(format!("/{rel}")))?;
        if entry.attrs.kind == EntryKind::Dir {
            return Err(XufsError::NotADirectory(format!("/{rel} is a directory")));
        }
        self.inner.cache.remove_entry(&rel)?;
        if !self.inner.cache.is_localized(&rel) {
            self.enqueue(&rel, MetaOpArgs::Unlink)?;
        }
        Ok(())
    }

    pub fn rmdir(&self, path: &str) -> Result<()> {
        let rel = paths::normalize(path)?;
        let entry = self
            .inner
            .cache
            .read_entry(&rel)?
            .ok_or_else(|| XufsError::NotFound(format!("/{rel}")))?;
        if entry.attrs.kind != EntryKind::Dir {
            return Err(XufsError::NotADirectory(format!("/{rel}")));
        }
        if !self.inner.cache.list_names(&rel)?.is_empty() {
            return Err(XufsError::NotEmpty(format!("/{rel}")));
        }
        self.inner.cache.remove_entry(&rel)?;
        if !self.inner.cache.is_localized(&rel) {
            self.enqueue(&rel, MetaOpArgs::Rmdir)?;
        }
        Ok(())
    }

    pub fn rename(&self, from: &str, to: &str) -> Result<()> {
        let old = paths::normalize(from)?;
        let new = paths::normalize(to)?;
        let entry = self
            .inner
            .cache
            .read_entry(&old)?
            .ok_or_else(|| XufsError::NotFound(format!("/{old}")))?;
        self.ensure_local_parents(&new)?;
        std::fs::rename(self.inner.cache.data_path(&old), self.inner.cache.data_path(&new))?;
        let mut moved = entry.clone();
        moved.attrs.name = paths::file_name(&new).unwrap_or_default().to_string();
        self.inner.cache.write_entry(&new, &moved)?;
        self.inner.cache.remove_entry(&old)?;
        let localized = self.inner.cache.is_localized(&old) && self.inner.cache.is_localized(&new);
        if !localized {
            self.enqueue(&old, MetaOpArgs::Rename { new_target: new.clone() })?;
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Pre-fetch
    // ------------------------------------------------------------------

    /// First entry into a directory pre-fetches every small EMPTY file with
    /// bounded parallelism. Later entries (same listing version) are no-ops.
    pub async fn chdir_prefetch(&self, path: &str) -> Result<PrefetchReport> {
        let rel = paths::normalize(path)?;
        self.opendir(&rel).await?;
        let meta = self
            .inner
            .cache
            .read_dir_meta(&rel)?
            .ok_or_else(|| XufsError::NotMaterialized(format!("/{rel}")))?;
        if meta.prefetched {
            return Ok(PrefetchReport::default());
        }
        let mut report = PrefetchReport::default();
        let mut candidates = Vec::new();
        for entry in self.inner.cache.list_entries(&rel)? {
            let child = paths::join(&rel, &entry.attrs.name);
            if entry.attrs.kind != EntryKind::File || entry.localized {
                continue;
            }
            if entry.attrs.size >= self.inner.cfg.knobs.prefetch_max_size {
                report.skipped_large += 1;
                continue;
            }
            if entry.state == ContentState::Empty {
                candidates.push(child);
            }
        }
        let limit = Arc::new(Semaphore::new(self.inner.cfg.knobs.prefetch_parallel.max(1)));
        let mut joins = Vec::with_capacity(candidates.len());
        for child in candidates {
            let mount = self.clone();
            let limit = limit.clone();
            let task_child = child.clone();
            joins.push((
                child,
                tokio::spawn(async move {
                    let _permit = limit.acquire().await;
                    mount.ensure_cached(&task_child).await
                }),
            ));
        }
        for (child, join) in joins {
            match join.await {
                Ok(Ok(())) => report.fetched.push(child),
                Ok(Err(e)) => report.failed.push((child, e.to_string())),
                Err(e) => report.failed.push((child, e.to_string())),
            }
        }
        let _ = self.inner.cache.write_dir_meta(
            &rel,
            crate::cache::DirMeta { version: meta.version, prefetched: true },
        );
        Ok(report)
    }

    // ------------------------------------------------------------------
    // Locking
    // ------------------------------------------------------------------

    /// Locks a path. Localized paths use the client-local lock table with
    /// zero wire traffic; everything else is forwarded to the server's
    /// lease manager with background renewal at half the term.
    pub async fn lock(&self, path: &str, mode: LockMode) -> Result<LockToken> {
        let rel = paths::normalize(path)?;
        if self.inner.cache.is_localized(&rel) {
            let mut locks = self.inner.locks.lock().unwrap();
            let holders = locks.local.entry(rel.clone()).or_default();
            let conflict = holders
                .iter()
                .any(|(_, held)| *held == LockMode::Exclusive || mode == LockMode::Exclusive);
            if conflict {
                return Err(XufsError::Conflict(format!("/{rel}")));
            }
            let local_id = locks.next_local_id;
            locks.next_local_id += 1;
            locks.local.get_mut(&rel).unwrap().push((local_id, mode));
            return Ok(LockToken { rel_path: rel, mode, local_id, remote_lock_id: None });
        }
        if !self.connected() {
            return Err(XufsError::DisconnectedMiss(format!("lock /{rel} while partitioned")));
        }
        let rpc = self.inner.rpc()?;
        let resp = self
            .inner
            .rpc_call(&rpc, Payload::LockReq { path: rel.clone(), mode })
            .await?;
        let (lock_id, term_ms) = match resp.payload {
            Payload::LockResp { result: LockResult::Granted { lock_id, term_ms } } => {
                (lock_id, term_ms)
            }
            Payload::LockResp { result: LockResult::Conflict } => {
                return Err(XufsError::Conflict(format!("/{rel}")))
            }
            other => {
                return Err(XufsError::ProtocolError(format!(
                    "expected LOCK_RESP, got {:?}",
                    other.kind()
                )))
            }
        };
        let local_id = {
            let mut locks = self.inner.locks.lock().unwrap();
            let id = locks.next_local_id;
            locks.next_local_id += 1;
            let task = tokio::spawn(renewal_loop(self.clone(), lock_id, term_ms));
            locks.renewals.insert(id, task);
            id
        };
        Ok(LockToken { rel_path: rel, mode, local_id, remote_lock_id: Some(lock_id) })
    }

    pub async fn unlock(&self, token: LockToken) -> Result<()> {
        match token.remote_lock_id {
            None => {
                let mut locks = self.inner.locks.lock().unwrap();
                if let Some(holders) = locks.local.get_mut(&token.rel_path) {
                    holders.retain(|(id, _)| *id != token.local_id);
                    if holders.is_empty() {
                        locks.local.remove(&token.rel_path);
                    }
                }
                Ok(())
            }
            Some(lock_id) => {
                let task = self.inner.locks.lock().unwrap().renewals.remove(&token.local_id);
                if let Some(task) = task {
                    task.abort();
                }
                if let Ok(rpc) = self.inner.rpc() {
                    // Best effort: if unreachable the lease expires on its own.
                    let _ = self.inner.rpc_call(&rpc, Payload::Unlock { lock_id }).await;
                }
                Ok(())
            }
        }
    }

    // ------------------------------------------------------------------
    // Invalidation, drain, reconnect, sync
    // ------------------------------------------------------------------

    /// Applies one INVALIDATE from the callback channel.
    pub fn handle_invalidate(&self, path: &str, new_version: u64) {
        let rel = match paths::normalize(path) {
            Ok(r) => r,
            Err(_) => return,
        };
        // Directory-level invalidation: force a listing re-fetch and re-arm
        // the pre-fetch on next entry.
        let is_dir = rel.is_empty()
            || self
                .inner
                .cache
                .read_entry(&rel)
                .ok()
                .flatten()
                .map(|e| e.attrs.kind == EntryKind::Dir)
                .unwrap_or(false);
        if is_dir {
            let _ = self.inner.cache.clear_dir_meta(&rel);
        }
        if rel.is_empty() {
            return;
        }
        let _ = self.inner.cache.update_entry(&rel, |e| {
            if new_version <= e.cached_version {
                return; // stale or duplicate notification
            }
            e.attrs.version = e.attrs.version.max(new_version);
            if e.state == ContentState::Cached {
                e.state = ContentState::Invalid;
            }
            // DIRTY entries keep their pending flush; it still applies.
        });
    }

    /// Ships queued batches until the queue is empty or the connection
    /// drops, processing acks as they return.
    pub async fn drain_once(&self) -> Result<Vec<OpReport>> {
        let _guard = self.inner.drain_lock.lock().await;
        let mut drained = Vec::new();
        loop {
            let batch = {
                let queue = self.inner.queue.lock().unwrap();
                queue.peek_batch(BATCH_MAX_OPS, BATCH_MAX_BYTES)
            };
            if batch.is_empty() {
                return Ok(drained);
            }
            let rpc = match self.inner.rpc() {
                Ok(r) => r,
                Err(e) => {
                    if drained.is_empty() {
                        return Err(e);
                    }
                    return Ok(drained);
                }
            };
            let resp = match self
                .inner
                .rpc_call(
                    &rpc,
                    Payload::MetaOpBatch {
                        client_id: self.inner.cfg.client_id.clone(),
                        ops: batch.clone(),
                    },
                )
                .await
            {
                Ok(r) => r,
                Err(XufsError::ConnectionLost) | Err(XufsError::Unreachable(_)) => {
                    return Ok(drained)
                }
                Err(e) => return Err(e),
            };
            let results = match resp.payload {
                Payload::MetaOpAck { results } => results,
                other => {
                    return Err(XufsError::ProtocolError(format!(
                        "expected METAOP_ACK, got {:?}",
                        other.kind()
                    )))
                }
            };
            let max_acked = results.iter().map(|r| r.op_id).max().unwrap_or(0);
            {
                let mut queue = self.inner.queue.lock().unwrap();
                queue.ack_through(max_acked)?;
            }
            for op in &batch {
                if let Some(out) = results.iter().find(|r| r.op_id == op.op_id) {
                    self.settle_op(&op.target, out);
                    drained.push(OpReport {
                        op_id: op.op_id,
                        kind: op.args.kind_name(),
                        target: op.target.clone(),
                        status: out.status,
                        new_version: out.new_version,
                        prev_version: out.prev_version,
                    });
                }
            }
        }
    }

    /// Post-ack bookkeeping: once no ops remain queued for a path, a DIRTY
    /// entry becomes CACHED at the acknowledged version.
    fn settle_op(&self, target: &str, outcome: &OpOutcome) {
        if !outcome.status.is_applied() {
            return;
        }
        let still_pending = {
            let queue = self.inner.queue.lock().unwrap();
            let pending = queue.pending_ops().any(|op| op.target == target);
            pending
        };
        if still_pending {
            return;
        }
        let _ = self.inner.cache.update_entry(target, |e| {
            if e.state == ContentState::Dirty {
                e.state = ContentState::Cached;
            }
            if outcome.new_version > 0 {
                e.cached_version = outcome.new_version;
                e.attrs.version = e.attrs.version.max(outcome.new_version);
            }
        });
    }

    /// Explicit recovery sync: connect if needed, drain the queue, report
    /// per-op results. A second run drains nothing.
    pub async fn sync(&self) -> Result<SyncReport> {
        if self.queue_len() == 0 {
            return Ok(SyncReport::default());
        }
        if !self.connected() {
            self.inner.connect_once(self).await.map_err(|e| match e {
                XufsError::AuthFailed(_) | XufsError::CredentialExpired => e,
                other => XufsError::Unreachable(other.to_string()),
            })?;
        }
        let drained = self.drain_once().await?;
        if self.queue_len() > 0 {
            return Err(XufsError::Unreachable("connection lost mid-sync".into()));
        }
        Ok(SyncReport { drained })
    }

    /// Re-checks every materialized directory listing against the server,
    /// invalidating entries that changed while disconnected.
    pub async fn revalidate(&self) -> Result<()> {
        for dir in self.inner.cache.materialized_dirs()? {
            if self.inner.cache.is_localized(&dir) {
                continue;
            }
            self.fetch_listing(&dir).await?;
        }
        Ok(())
    }
}

impl MountInner {
    fn rpc(&self) -> Result<Arc<RpcClient>> {
        self.rpc
            .lock()
            .unwrap()
            .clone()
            .ok_or_else(|| XufsError::Unreachable("disconnected".into()))
    }

    /// Issues one RPC, converting connection loss into a disconnect event.
    async fn rpc_call(&self, rpc: &RpcClient, payload: Payload) -> Result<crate::wire::Message> {
        match rpc.call(payload).await {
            Ok(m) => Ok(m),
            Err(XufsError::ConnectionLost) => {
                self.mark_disconnected();
                Err(XufsError::ConnectionLost)
            }
            Err(e) => Err(e),
        }
    }

    fn mark_disconnected(&self) {
        let was = self.conn_state.send_replace(false);
        if was {
            *self.rpc.lock().unwrap() = None;
            self.disconnect_notify.notify_waiters();
        }
    }

    /// Dials, authenticates, and registers the callback channel. On success
    /// the mount is CONNECTED and the fresh callback connection is parked
    /// for the session loop.
    async fn connect_once(&self, mount: &Mount) -> Result<()> {
        let _guard = self.connect_lock.lock().await;
        if *self.conn_state.borrow() {
            return Ok(());
        }
        let rpc = RpcClient::establish(
            &self.transport,
            &self.cfg.client_id,
            &self.cfg.server_addr,
            &self.credential,
            &self.cfg.client_id,
        )
        .await?;
        // Callback channel: own authenticated connection, registered for
        // the whole export.
        let mut cb_conn =
            self.transport.connect(&self.cfg.client_id, &self.cfg.server_addr).await?;
        conn::authenticate_conn(&mut cb_conn, &self.credential, &self.cfg.client_id).await?;
        cb_conn
            .tx
            .send(crate::wire::Message::new(
                3,
                Payload::CallbackRegister {
                    client_id: self.cfg.client_id.clone(),
                    watched: vec![],
                },
            ))
            .await?;
        match cb_conn.recv().await {
            Some(m) => match m.payload {
                Payload::AuthResult { ok: true, .. } => {}
                Payload::Error { code, detail } => return Err(XufsError::from_wire(code, detail)),
                other => {
                    return Err(XufsError::ProtocolError(format!(
                        "expected registration ack, got {:?}",
                        other.kind()
                    )))
                }
            },
            None => return Err(XufsError::ConnectionLost),
        }
        *self.rpc.lock().unwrap() = Some(Arc::new(rpc));
        *self.pending_callback.lock().unwrap() = Some(cb_conn);
        self.conn_state.send_replace(true);
        mount.inner.drain_notify.notify_one();
        Ok(())
    }
}

/// Queue drainer: wakes on enqueue or reconnect and ships batches while
/// connected.
async fn drainer_loop(mount: Mount) {
    let mut shutdown = mount.inner.shutdown.subscribe();
    loop {
        tokio::select! {
            biased;
            _ = shutdown.changed() => return,
            _ = mount.inner.drain_notify.notified() => {}
        }
        if mount.connected() && mount.queue_len() > 0 {
            let _ = mount.drain_once().await;
        }
    }
}

/// Callback listener plus reconnect loop: listens for invalidations while
/// connected; on loss, retries with doubling backoff (kickable), then
/// re-authenticates, drains, and revalidates.
async fn session_loop(mount: Mount) {
    let mut shutdown = mount.inner.shutdown.subscribe();
    loop {
        let cb = mount.inner.pending_callback.lock().unwrap().take();
        if let Some(mut conn) = cb {
            loop {
                tokio::select! {
                    biased;
                    _ = shutdown.changed() => return,
                    _ = mount.inner.disconnect_notify.notified() => break,
                    msg = conn.recv() => match msg {
                        Some(m) => {
                            if let Payload::Invalidate { path, new_version } = m.payload {
                                mount.handle_invalidate(&path, new_version);
                            }
                        }
                        None => break,
                    },
                }
            }
            mount.inner.mark_disconnected();
            continue; // a concurrent reconnect may already have parked a channel
        }
        // Disconnected: backoff dial loop.
        let mut delay = mount.inner.cfg.knobs.reconnect_initial();
        let cap = mount.inner.cfg.knobs.reconnect_cap();
        loop {
            tokio::select! {
                biased;
                _ = shutdown.changed() => return,
                _ = mount.inner.kick_reconnect.notified() => {}
                _ = tokio::time::sleep(delay) => {}
            }
            if *shutdown.borrow() {
                return;
            }
            match mount.inner.connect_once(&mount).await {
                Ok(()) => {
                    let _ = mount.drain_once().await;
                    let _ = mount.revalidate().await;
                    break;
                }
                Err(_) => {
                    delay = (delay * 2).min(cap);
                }
            }
        }
    }
}

/// Keeps one remote lease alive: renew at half term, retry every
/// `renew_retry` on failure (kicking the reconnect loop), stop once the
/// lease is reported gone.
async fn renewal_loop(mount: Mount, lock_id: u64, term_ms: u64) {
    let retry = mount.inner.cfg.knobs.renew_retry();
    loop {
        tokio::time::sleep(std::time::Duration::from_millis((term_ms / 2).max(1))).await;
        loop {
            match mount.inner.rpc() {
                Ok(rpc) => match mount.inner.rpc_call(&rpc, Payload::LeaseRenew { lock_id }).await
                {
                    Ok(_) => break,
                    Err(XufsError::Expired) | Err(XufsError::NotOwner) => return,
                    Err(_) => {}
                },
                Err(_) => {
                    mount.inner.kick_reconnect.notify_one();
                }
            }
            tokio::time::sleep(retry).await;
        }
    }
}

impl Drop for MountInner {
    fn drop(&mut self) {
        for task in std::mem::take(&mut *self.tasks.lock().unwrap()) {
            task.abort();
        }
        for (_, task) in std::mem::take(&mut self.locks.lock().unwrap().renewals) {
            task.abort();
        }
    }
}
