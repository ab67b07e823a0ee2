//! Client-side cache space: the on-disk mirror of the remote name space.
//!
//! Layout under `<cache_root>/<export_id>/`:
//!
//! ```text
//! data/    mirrored tree; each entry NAME has a sidecar record .xufs.NAME,
//!          each materialized directory a .xufs-dirmeta marker
//! shadow/  per-open-handle write logs (transient)
//! queue/   persisted meta-operation queue (log + ack cursor)
//! meta/    mount.json and other mount-scoped configuration
//! ```
//!
//! Placeholder data files are zero-length; the authoritative size lives in
//! the hidden attribute record until the content is fetched.

pub mod queue;
pub mod shadow;

pub use queue::{CrashPoint, MetaQueue};
pub use shadow::ShadowFile;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, XufsError};
use crate::paths::{self, HIDDEN_PREFIX};
use crate::wire::codec::{Reader, Writer};
use crate::wire::{EntryAttributes, EntryKind};

const ENTRY_MAGIC: u8 = 0xA7;
const ENTRY_FORMAT: u8 = 1;
const DIRMETA_MAGIC: u8 = 0xD7;
const DIRMETA_FORMAT: u8 = 1;
const DIRMETA_NAME: &str = ".xufs-dirmeta";

/// Content state of a cached entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[repr(u8)]
pub enum ContentState {
    /// Placeholder only; content must be fetched before reading.
    Empty = 0,
    /// Content bytes match `cached_version`.
    Cached = 1,
    /// Local mutations are queued and not yet acknowledged.
    Dirty = 2,
    /// A newer version exists remotely; re-fetch before the next open.
    Invalid = 3,
}

impl ContentState {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => ContentState::Empty,
            1 => ContentState::Cached,
            2 => ContentState::Dirty,
            3 => ContentState::Invalid,
            _ => return None,
        })
    }
}

/// One persisted cache entry: the hidden attribute record plus cache state.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEntry {
    pub attrs: EntryAttributes,
    pub state: ContentState,
    /// Version of the bytes in the data file (0 = no content yet).
    pub cached_version: u64,
    pub localized: bool,
}

impl StoredEntry {
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(64);
        w.u8(ENTRY_MAGIC);
        w.u8(ENTRY_FORMAT);
        w.u8(self.attrs.kind as u8);
        w.u8(self.state as u8);
        w.boolean(self.localized);
        w.u32(self.attrs.mode);
        w.u64(self.attrs.size);
        w.u64(self.attrs.mtime_ns);
        w.u64(self.attrs.version);
        w.u64(self.cached_version);
        w.into_inner()
    }

    fn decode(name: &str, raw: &[u8]) -> Result<Self> {
        let mut r = Reader::new(raw);
        let magic = r.u8()?;
        let format = r.u8()?;
        if magic != ENTRY_MAGIC || format != ENTRY_FORMAT {
            return Err(XufsError::Malformed(format!("bad attribute record for {name}")));
        }
        let kind = EntryKind::from_u8(r.u8()?)
            .ok_or_else(|| XufsError::Malformed("bad entry kind".into()))?;
        let state = ContentState::from_u8(r.u8()?)
            .ok_or_else(|| XufsError::Malformed("bad content state".into()))?;
        let localized = r.boolean()?;
        let mode = r.u32()?;
        let size = r.u64()?;
        let mtime_ns = r.u64()?;
        let version = r.u64()?;
        let cached_version = r.u64()?;
        r.finish()?;
        Ok(StoredEntry {
            attrs: EntryAttributes { name: name.to_string(), kind, size, mode, mtime_ns, version },
            state,
            cached_version,
            localized,
        })
    }
}

/// Per-directory materialization marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirMeta {
    /// Directory version the current listing corresponds to.
    pub version: u64,
    /// Whether the first-entry pre-fetch has already run for this listing.
    pub prefetched: bool,
}

/// Handle to one export's cache space. Owns layout and attribute records;
/// the queue and shadow files are opened through it.
pub struct CacheSpace {
    root: PathBuf,
    data: PathBuf,
    shadow_dir: PathBuf,
    queue_dir: PathBuf,
    meta: PathBuf,
    localized: Vec<String>,
}

impl CacheSpace {
    /// Creates or reopens the cache space skeleton. Idempotent: existing
    /// state (queue, attribute records, data files) is preserved. Orphaned
    /// shadow files from a previous process are removed; their uncommitted
    /// writes died with the handles that owned them.
    pub fn init(cache_root: &Path, export_id: &str, localized: Vec<String>) -> Result<Self> {
        let root = cache_root.join(export_id);
        let space = CacheSpace {
            data: root.join("data"),
            shadow_dir: root.join("shadow"),
            queue_dir: root.join("queue"),
            meta: root.join("meta"),
            root,
            localized,
        };
        for dir in [&space.data, &space.shadow_dir, &space.queue_dir, &space.meta] {
            fs::create_dir_all(dir)?;
        }
        for entry in fs::read_dir(&space.shadow_dir)? {
            let entry = entry?;
            let _ = fs::remove_file(entry.path());
        }
        Ok(space)
    }

    /// True if a cache space for this export already exists on disk.
    pub fn exists(cache_root: &Path, export_id: &str) -> bool {
        cache_root.join(export_id).join("data").is_dir()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_root(&self) -> &Path {
        &self.data
    }

    pub fn shadow_dir(&self) -> &Path {
        &self.shadow_dir
    }

    pub fn meta_dir(&self) -> &Path {
        &self.meta
    }

    pub fn localized(&self) -> &[String] {
        &self.localized
    }

    pub fn is_localized(&self, rel: &str) -> bool {
        paths::matches_any_prefix(rel, &self.localized)
    }

    pub fn open_queue(&self) -> Result<MetaQueue> {
        MetaQueue::open(&self.queue_dir)
    }

    /// Absolute path of an entry's data file (or directory).
    pub fn data_path(&self, rel: &str) -> PathBuf {
        paths::under(&self.data, rel)
    }

    fn attr_path(&self, rel: &str) -> Option<PathBuf> {
        let (parent, name) = paths::split(rel)?;
        Some(paths::under(&self.data, parent).join(format!("{HIDDEN_PREFIX}{name}")))
    }

    fn dirmeta_path(&self, dir: &str) -> PathBuf {
        paths::under(&self.data, dir).join(DIRMETA_NAME)
    }

    pub fn read_entry(&self, rel: &str) -> Result<Option<StoredEntry>> {
        let Some(path) = self.attr_path(rel) else {
            return Ok(None); // the root has no sidecar record
        };
        match fs::read(&path) {
            Ok(raw) => Ok(Some(StoredEntry::decode(
                paths::file_name(rel).unwrap_or_default(),
                &raw,
            )?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_entry(&self, rel: &str, entry: &StoredEntry) -> Result<()> {
        let path = self
            .attr_path(rel)
            .ok_or_else(|| XufsError::ProtocolError("root has no attribute record".into()))?;
        write_atomic(&path, &entry.encode())
    }

    /// Read-modify-write of one entry's record.
    pub fn update_entry(
        &self,
        rel: &str,
        f: impl FnOnce(&mut StoredEntry),
    ) -> Result<StoredEntry> {
        let mut entry = self
            .read_entry(rel)?
            .ok_or_else(|| XufsError::NotMaterialized(rel.to_string()))?;
        f(&mut entry);
        self.write_entry(rel, &entry)?;
        Ok(entry)
    }

    /// Removes an entry's record, data, and (for directories) subtree.
    pub fn remove_entry(&self, rel: &str) -> Result<()> {
        if let Some(path) = self.attr_path(rel) {
            let _ = fs::remove_file(path);
        }
        let data = self.data_path(rel);
        if data.is_dir() {
            let _ = fs::remove_dir_all(&data);
        } else {
            let _ = fs::remove_file(&data);
        }
        Ok(())
    }

    pub fn read_dir_meta(&self, dir: &str) -> Result<Option<DirMeta>> {
        match fs::read(self.dirmeta_path(dir)) {
            Ok(raw) => {
                let mut r = Reader::new(&raw);
                if r.u8()? != DIRMETA_MAGIC || r.u8()? != DIRMETA_FORMAT {
                    return Err(XufsError::Malformed(format!("bad dir marker in {dir:?}")));
                }
                let version = r.u64()?;
                let prefetched = r.boolean()?;
                r.finish()?;
                Ok(Some(DirMeta { version, prefetched }))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_dir_meta(&self, dir: &str, meta: DirMeta) -> Result<()> {
        let mut w = Writer::with_capacity(16);
        w.u8(DIRMETA_MAGIC);
        w.u8(DIRMETA_FORMAT);
        w.u64(meta.version);
        w.boolean(meta.prefetched);
        write_atomic(&self.dirmeta_path(dir), &w.into_inner())
    }

    pub fn clear_dir_meta(&self, dir: &str) -> Result<()> {
        match fs::remove_file(self.dirmeta_path(dir)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    /// Recreates one directory level from a READDIR response: a zero-length
    /// placeholder plus a hidden attribute record per entry. Entries whose
    /// cached content is still current are left untouched; entries with a
    /// newer remote version are invalidated; records for names the server
    /// no longer lists are removed unless they have local state to protect.
    pub fn materialize_dir(
        &self,
        dir: &str,
        dir_version: u64,
        entries: &[EntryAttributes],
    ) -> Result<()> {
        let dir_path = paths::under(&self.data, dir);
        fs::create_dir_all(&dir_path)?;
        for attrs in entries {
            let rel = paths::join(dir, &attrs.name);
            let existing = self.read_entry(&rel)?;
            let localized = self.is_localized(&rel);
            match existing {
                None => {
                    match attrs.kind {
                        EntryKind::Dir => {
                            fs::create_dir_all(self.data_path(&rel))?;
                        }
                        _ => {
                            // Zero-length placeholder; true size lives in the record.
                            if !self.data_path(&rel).exists() {
                                fs::File::create(self.data_path(&rel))?;
                            }
                        }
                    }
                    self.write_entry(
                        &rel,
                        &StoredEntry {
                            attrs: attrs.clone(),
                            state: ContentState::Empty,
                            cached_version: 0,
                            localized,
                        },
                    )?;
                }
                Some(mut cur) => {
                    match cur.state {
                        ContentState::Cached if attrs.version > cur.cached_version => {
                            cur.state = ContentState::Invalid;
                            cur.attrs = attrs.clone();
                        }
                        ContentState::Cached | ContentState::Dirty => {
                            // Content (or pending flush) is still authoritative
                            // locally; just track the newest remote version.
                            cur.attrs.version = cur.attrs.version.max(attrs.version);
                        }
                        ContentState::Empty | ContentState::Invalid => {
                            cur.attrs = attrs.clone();
                        }
                    }
                    self.write_entry(&rel, &cur)?;
                }
            }
        }
        // Drop records for entries the server no longer has, unless local
        // state still needs them (pending flushes, localized files).
        let listed: std::collections::BTreeSet<&str> =
            entries.iter().map(|e| e.name.as_str()).collect();
        for name in self.list_names(dir)? {
            if listed.contains(name.as_str()) {
                continue;
            }
            let rel = paths::join(dir, &name);
            if self.is_localized(&rel) || self.subtree_has_dirty(&rel)? {
                continue;
            }
            self.remove_entry(&rel)?;
        }
        let prefetched = match self.read_dir_meta(dir)? {
            Some(old) if old.version == dir_version => old.prefetched,
            _ => false, // new listing: pre-fetch re-arms
        };
        self.write_dir_meta(dir, DirMeta { version: dir_version, prefetched })?;
        Ok(())
    }

    fn subtree_has_dirty(&self, rel: &str) -> Result<bool> {
        match self.read_entry(rel)? {
            Some(e) if e.state == ContentState::Dirty => return Ok(true),
            Some(e) if e.attrs.kind == EntryKind::Dir => {
                for name in self.list_names(rel)? {
                    if self.subtree_has_dirty(&paths::join(rel, &name))? {
                        return Ok(true);
                    }
                }
            }
            _ => {}
        }
        Ok(false)
    }

    /// Attribute snapshot for one entry, served with zero network traffic.
    pub fn read_cached_attrs(&self, rel: &str) -> Result<EntryAttributes> {
        if rel.is_empty() {
            // The export root: synthesized from its marker.
            let meta = self
                .read_dir_meta("")?
                .ok_or_else(|| XufsError::NotMaterialized("/".into()))?;
            return Ok(EntryAttributes {
                name: String::new(),
                kind: EntryKind::Dir,
                size: 0,
                mode: 0o755,
                mtime_ns: 0,
                version: meta.version,
            });
        }
        self.read_entry(rel)?
            .map(|e| e.attrs)
            .ok_or_else(|| XufsError::NotMaterialized(rel.to_string()))
    }

    /// Names in a materialized directory, bytewise-sorted. Hidden records
    /// are never reported.
    pub fn list_names(&self, dir: &str) -> Result<Vec<String>> {
        let dir_path = paths::under(&self.data, dir);
        let mut names = Vec::new();
        let read = match fs::read_dir(&dir_path) {
            Ok(r) => r,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(names),
            Err(e) => return Err(e.into()),
        };
        for entry in read {
            let entry = entry?;
            let file_name = entry.file_name();
            let Some(name) = file_name.to_str() else { continue };
            if let Some(real) = name.strip_prefix(HIDDEN_PREFIX) {
                if !real.is_empty() && !real.ends_with(".tmp") {
                    names.push(real.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    /// Stored entries of a materialized directory, bytewise-sorted by name.
    pub fn list_entries(&self, dir: &str) -> Result<Vec<StoredEntry>> {
        let mut out = Vec::new();
        for name in self.list_names(dir)? {
            if let Some(e) = self.read_entry(&paths::join(dir, &name))? {
                out.push(e);
            }
        }
        Ok(out)
    }

    /// Creates the record and placeholder for a locally created entry.
    pub fn create_local_entry(
        &self,
        rel: &str,
        kind: EntryKind,
        mode: u32,
        mtime_ns: u64,
        state: ContentState,
    ) -> Result<StoredEntry> {
        let localized = self.is_localized(rel);
        match kind {
            EntryKind::Dir => fs::create_dir_all(self.data_path(rel))?,
            _ => {
                if let Some(parent) = self.data_path(rel).parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::File::create(self.data_path(rel))?;
            }
        }
        let entry = StoredEntry {
            attrs: EntryAttributes {
                name: paths::file_name(rel).unwrap_or_default().to_string(),
                kind,
                size: 0,
                mode,
                mtime_ns,
                version: 0,
            },
            state,
            cached_version: 0,
            localized,
        };
        self.write_entry(rel, &entry)?;
        Ok(entry)
    }

    /// Walks every materialized directory (those carrying a marker),
    /// top-down, starting at the root.
    pub fn materialized_dirs(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut stack = vec![String::new()];
        while let Some(dir) = stack.pop() {
            if self.read_dir_meta(&dir)?.is_some() {
                out.push(dir.clone());
            }
            for entry in self.list_entries(&dir)? {
                if entry.attrs.kind == EntryKind::Dir {
                    stack.push(paths::join(&dir, &entry.attrs.name));
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
