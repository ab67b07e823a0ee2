//! Shadow files: per-open-handle logs of (offset, bytes) writes.
//!
//! Writes append here in order; nothing is merged until the handle closes,
//! at which point the records coalesce into minimal disjoint extents and
//! become FLUSH_SHADOW meta-ops. Only the aggregated change travels to the
//! server.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::ops::Bound::{Excluded, Included};
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::wire::{Extent, FlushArgs};

#[derive(Debug)]
pub struct ShadowFile {
    pub target: String,
    pub handle_id: u64,
    /// Version of the cached copy the writes are based on.
    pub base_version: u64,
    /// Handle was opened with truncation: the flush discards the server
    /// copy's bytes before applying extents.
    pub truncate_base: bool,
    path: PathBuf,
    file: File,
    records: Vec<Extent>,
}

impl ShadowFile {
    pub fn create(
        shadow_dir: &Path,
        handle_id: u64,
        target: &str,
        base_version: u64,
        truncate_base: bool,
    ) -> Result<Self> {
        let path = shadow_dir.join(handle_id.to_string());
        let mut file = OpenOptions::new().create(true).truncate(true).write(true).open(&path)?;
        // Small header so an orphaned shadow identifies its target.
        let mut header = Vec::new();
        header.extend_from_slice(b"XSHD\x01");
        header.push(truncate_base as u8);
        header.extend_from_slice(&base_version.to_be_bytes());
        header.extend_from_slice(&(target.len() as u16).to_be_bytes());
        header.extend_from_slice(target.as_bytes());
        file.write_all(&header)?;
        Ok(ShadowFile {
            target: target.to_string(),
            handle_id,
            base_version,
            truncate_base,
            path,
            file,
            records: Vec::new(),
        })
    }

    /// Appends one write record. Zero-length writes are elided.
    pub fn append(&mut self, offset: u64, data: &[u8]) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        let mut rec = Vec::with_capacity(12 + data.len());
        rec.extend_from_slice(&offset.to_be_bytes());
        rec.extend_from_slice(&(data.len() as u32).to_be_bytes());
        rec.extend_from_slice(data);
        self.file.write_all(&rec)?;
        self.records.push(Extent::new(offset, data.to_vec()));
        Ok(())
    }

    pub fn records(&self) -> &[Extent] {
        &self.records
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    /// Minimal disjoint extents equivalent to replaying the records in
    /// order (later records win on overlap).
    pub fn coalesce(&self) -> Vec<Extent> {
        coalesce_records(&self.records)
    }

    /// Deletes the on-disk shadow; the handle is closed and its extents have
    /// been captured in the queue (or discarded).
    pub fn remove(self) -> Result<()> {
        drop(self.file);
        match std::fs::remove_file(&self.path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }
}

/// Coalesces in-order write records into minimal disjoint extents. Later
/// records overwrite earlier bytes; touching extents merge.
pub fn coalesce_records(records: &[Extent]) -> Vec<Extent> {
    let mut map: BTreeMap<u64, Vec<u8>> = BTreeMap::new();
    for rec in records {
        if rec.data.is_empty() {
            continue;
        }
        let start = rec.offset;
        let end = rec.end();
        let mut affected: Vec<(u64, Vec<u8>)> = Vec::new();
        if let Some((&s, v)) = map.range(..=start).next_back() {
            if s + v.len() as u64 >= start {
                let v = map.remove(&s).unwrap();
                affected.push((s, v));
            }
        }
        let later: Vec<u64> =
            map.range((Excluded(start), Included(end))).map(|(&k, _)| k).collect();
        for k in later {
            let v = map.remove(&k).unwrap();
            affected.push((k, v));
        }
        let new_start = affected.iter().map(|(s, _)| *s).min().unwrap_or(start).min(start);
        let new_end = affected
            .iter()
            .map(|(s, v)| s + v.len() as u64)
            .max()
            .unwrap_or(end)
            .max(end);
        let mut buf = vec![0u8; (new_end - new_start) as usize];
        for (s, v) in &affected {
            let at = (s - new_start) as usize;
            buf[at..at + v.len()].copy_from_slice(v);
        }
        let at = (start - new_start) as usize;
        buf[at..at + rec.data.len()].copy_from_slice(&rec.data);
        map.insert(new_start, buf);
    }
    map.into_iter().map(|(offset, data)| Extent { offset, data }).collect()
}

/// Packs coalesced extents into one or more FLUSH_SHADOW argument records,
/// each small enough to frame. The first piece carries the truncate flag,
/// the last pins the final file length.
pub fn build_flush_ops(
    extents: Vec<Extent>,
    truncate: bool,
    final_len: u64,
    base_version: u64,
    max_piece_bytes: usize,
) -> Vec<FlushArgs> {
    assert!(max_piece_bytes > 0);
    let mut pieces: Vec<Vec<Extent>> = vec![Vec::new()];
    let mut budget = max_piece_bytes;
    for ext in extents {
        let mut offset = ext.offset;
        let mut data = ext.data;
        loop {
            if budget == 0 {
                pieces.push(Vec::new());
                budget = max_piece_bytes;
            }
            if data.len() <= budget {
                budget -= data.len();
                pieces.last_mut().unwrap().push(Extent { offset, data });
                break;
            }
            let rest = data.split_off(budget);
            pieces.last_mut().unwrap().push(Extent { offset, data });
            offset += budget as u64;
            data = rest;
            budget = 0;
        }
    }
    let n = pieces.len();
    pieces
        .into_iter()
        .enumerate()
        .map(|(i, extents)| FlushArgs {
            truncate: truncate && i == 0,
            set_len: (i == n - 1).then_some(final_len),
            base_version,
            extents,
        })
        .collect()
}

/// Applies one flush to a file, creating it if absent. The same routine
/// runs on the server (draining the queue) and on the client at close, so
/// both sides converge on identical bytes.
pub fn apply_flush(path: &Path, args: &FlushArgs) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    let file = OpenOptions::new().create(true).write(true).read(true).open(path)?;
    if args.truncate {
        file.set_len(0)?;
    }
    for ext in &args.extents {
        file.write_all_at(&ext.data, ext.offset)?;
    }
    if let Some(n) = args.set_len {
        file.set_len(n)?;
    }
    Ok(())
}
