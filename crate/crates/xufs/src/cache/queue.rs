//! The persisted meta-operation queue: a checksummed append-only record log
//! plus an ack cursor file.
//!
//! Every mutation the client performs is appended here and fsynced before
//! the operation returns, so the queue survives process termination at any
//! instant. Draining sends ops to the server in order; `ack_through`
//! advances the cursor and the log compacts once more than half its bytes
//! are acked. A torn tail (truncated or corrupt record) is detected by
//! length/checksum and discarded on open, which can only lose an op whose
//! enqueue never returned.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Result, XufsError};
use crate::wire::{MetaOp, MetaOpArgs};

const LOG_FILE: &str = "log";
const ACK_FILE: &str = "ack";
const ACK_MAGIC: u32 = 0x58_41_43_4b; // "XACK"
/// Records larger than this are treated as corruption on replay. Flushes
/// are split well below it before they are enqueued.
const MAX_RECORD: u32 = 32 * 1024 * 1024;
/// Compaction floor: don't bother rewriting tiny logs.
const COMPACT_MIN_BYTES: u64 = 4096;

/// Instrumentation points around the enqueue sync boundary, for
/// crash-injection tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    BeforeAppend { op_id: u64 },
    BeforeSync { op_id: u64 },
    AfterSync { op_id: u64 },
}

pub type CrashHook = Arc<dyn Fn(CrashPoint) + Send + Sync>;

pub struct MetaQueue {
    dir: PathBuf,
    log: File,
    pending: VecDeque<MetaOp>,
    last_acked: u64,
    next_op_id: u64,
    log_bytes: u64,
    acked_bytes: u64,
    hook: Option<CrashHook>,
}

impl MetaQueue {
    /// Opens (or creates) the queue in `dir`, replaying the log and
    /// truncating any torn tail.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let last_acked = read_ack(&dir.join(ACK_FILE))?;
        let log_path = dir.join(LOG_FILE);
        let mut raw = Vec::new();
        if log_path.exists() {
            File::open(&log_path)?.read_to_end(&mut raw)?;
        }
        let mut pending = VecDeque::new();
        let mut acked_bytes = 0u64;
        let mut max_op_id = last_acked;
        let mut good = 0usize;
        let mut pos = 0usize;
        loop {
            if raw.len() - pos < 8 {
                break;
            }
            let len = u32::from_be_bytes(raw[pos..pos + 4].try_into().unwrap());
            let crc = u32::from_be_bytes(raw[pos + 4..pos + 8].try_into().unwrap());
            if len > MAX_RECORD || raw.len() - pos - 8 < len as usize {
                break;
            }
            let payload = &raw[pos + 8..pos + 8 + len as usize];
            if crc32fast::hash(payload) != crc {
                break;
            }
            let Ok(op) = MetaOp::decode(payload) else { break };
            let record_bytes = 8 + len as u64;
            if op.op_id <= last_acked {
                acked_bytes += record_bytes;
            } else {
                max_op_id = max_op_id.max(op.op_id);
                pending.push_back(op);
            }
            pos += 8 + len as usize;
            good = pos;
        }
        if good < raw.len() {
            // Torn tail: cut it off so the next append lands on a clean edge.
            let f = OpenOptions::new().write(true).open(&log_path)?;
            f.set_len(good as u64)?;
            f.sync_data()?;
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(MetaQueue {
            dir: dir.to_path_buf(),
            log,
            pending,
            last_acked,
            next_op_id: max_op_id + 1,
            log_bytes: good as u64,
            acked_bytes,
            hook: None,
        })
    }

    pub fn set_crash_hook(&mut self, hook: CrashHook) {
        self.hook = Some(hook);
    }

    fn fire(&self, point: CrashPoint) {
        if let Some(h) = &self.hook {
            h(point);
        }
    }

    /// Durably appends one op and returns its id. The record is synced
    /// before this returns.
    pub fn enqueue(&mut self, target: String, args: MetaOpArgs, now_ms: u64) -> Result<u64> {
        let op = MetaOp { op_id: self.next_op_id, target, args, enqueue_time_ms: now_ms };
        let payload = op.encode();
        let mut record = Vec::with_capacity(8 + payload.len());
        record.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        record.extend_from_slice(&crc32fast::hash(&payload).to_be_bytes());
        record.extend_from_slice(&payload);
        self.fire(CrashPoint::BeforeAppend { op_id: op.op_id });
        self.log.write_all(&record)?;
        self.fire(CrashPoint::BeforeSync { op_id: op.op_id });
        self.log.sync_data()?;
        self.fire(CrashPoint::AfterSync { op_id: op.op_id });
        self.log_bytes += record.len() as u64;
        self.next_op_id += 1;
        self.pending.push_back(op);
        Ok(self.next_op_id - 1)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn last_acked(&self) -> u64 {
        self.last_acked
    }

    pub fn next_op_id(&self) -> u64 {
        self.next_op_id
    }

    pub fn pending_ops(&self) -> impl Iterator<Item = &MetaOp> {
        self.pending.iter()
    }

    /// Front of the queue limited by op count and total encoded bytes, for
    /// assembling one METAOP_BATCH frame.
    pub fn peek_batch(&self, max_ops: usize, max_bytes: usize) -> Vec<MetaOp> {
        let mut out = Vec::new();
        let mut bytes = 0usize;
        for op in &self.pending {
            let len = op.encoded_len();
            if !out.is_empty() && (out.len() >= max_ops || bytes + len > max_bytes) {
                break;
            }
            bytes += len;
            out.push(op.clone());
            if out.len() >= max_ops || bytes >= max_bytes {
                break;
            }
        }
        out
    }

    /// Acknowledges every op up to and including `op_id`.
    pub fn ack_through(&mut self, op_id: u64) -> Result<()> {
        if op_id < self.last_acked {
            return Err(XufsError::ProtocolError(format!(
                "ack regression: {op_id} < {}",
                self.last_acked
            )));
        }
        if op_id == self.last_acked {
            return Ok(());
        }
        if op_id >= self.next_op_id {
            return Err(XufsError::ProtocolError(format!(
                "ack of unknown op {op_id} (next is {})",
                self.next_op_id
            )));
        }
        while let Some(front) = self.pending.front() {
            if front.op_id > op_id {
                break;
            }
            let op = self.pending.pop_front().unwrap();
            self.acked_bytes += 8 + op.encoded_len() as u64;
        }
        self.last_acked = op_id;
        write_ack(&self.dir.join(ACK_FILE), op_id)?;
        if self.acked_bytes > COMPACT_MIN_BYTES && self.acked_bytes * 2 > self.log_bytes {
            self.compact()?;
        }
        Ok(())
    }

    /// Rewrites the log with only pending records.
    fn compact(&mut self) -> Result<()> {
        let tmp_path = self.dir.join("log.tmp");
        let mut tmp = File::create(&tmp_path)?;
        let mut bytes = 0u64;
        for op in &self.pending {
            let payload = op.encode();
            tmp.write_all(&(payload.len() as u32).to_be_bytes())?;
            tmp.write_all(&crc32fast::hash(&payload).to_be_bytes())?;
            tmp.write_all(&payload)?;
            bytes += 8 + payload.len() as u64;
        }
        tmp.sync_data()?;
        drop(tmp);
        std::fs::rename(&tmp_path, self.dir.join(LOG_FILE))?;
        self.log = OpenOptions::new().append(true).open(self.dir.join(LOG_FILE))?;
        self.log_bytes = bytes;
        self.acked_bytes = 0;
        Ok(())
    }

    /// Bytes currently in the log file (pending plus not-yet-compacted acked
    /// records).
    pub fn log_bytes(&self) -> u64 {
        self.log_bytes
    }
}

fn read_ack(path: &Path) -> Result<u64> {
    let raw = match std::fs::read(path) {
        Ok(r) => r,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e.into()),
    };
    if raw.len() != 16 {
        return Ok(0); // torn ack write: fall back to replaying from zero
    }
    let magic = u32::from_be_bytes(raw[0..4].try_into().unwrap());
    let id = u64::from_be_bytes(raw[4..12].try_into().unwrap());
    let crc = u32::from_be_bytes(raw[12..16].try_into().unwrap());
    if magic != ACK_MAGIC || crc32fast::hash(&raw[..12]) != crc {
        return Ok(0);
    }
    Ok(id)
}

fn write_ack(path: &Path, id: u64) -> Result<()> {
    let mut buf = Vec::with_capacity(16);
    buf.extend_from_slice(&ACK_MAGIC.to_be_bytes());
    buf.extend_from_slice(&id.to_be_bytes());
    buf.extend_from_slice(&crc32fast::hash(&buf).to_be_bytes());
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_data()?;
    drop(f);
    std::fs::rename(&tmp, path)?;
    Ok(())
}
