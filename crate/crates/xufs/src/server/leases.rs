//! Lease-based lock table.
//!
//! Grants are time-limited: a lease not renewed within its term becomes
//! reclaimable, so a crashed client can never orphan a lock. Expired leases
//! are reaped lazily at the next conflicting request. Time is passed in as
//! milliseconds on a caller-supplied monotonic clock, which keeps the table
//! pure and directly checkable against a brute-force oracle.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Result, XufsError};
use crate::wire::codec::{Reader, Writer};
use crate::wire::LockMode;

const LEASE_MAGIC: &[u8; 8] = b"XUFSLSE\x01";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lease {
    pub lock_id: u64,
    pub path: String,
    pub holder: String,
    pub mode: LockMode,
    pub expires_at_ms: u64,
}

pub struct LeaseTable {
    term_ms: u64,
    next_id: u64,
    leases: BTreeMap<u64, Lease>,
}

impl LeaseTable {
    pub fn new(term_ms: u64) -> Self {
        LeaseTable { term_ms, next_id: 1, leases: BTreeMap::new() }
    }

    pub fn term_ms(&self) -> u64 {
        self.term_ms
    }

    fn reap_path(&mut self, path: &str, now_ms: u64) {
        let dead: Vec<u64> = self
            .leases
            .values()
            .filter(|l| l.path == path && l.expires_at_ms <= now_ms)
            .map(|l| l.lock_id)
            .collect();
        for id in dead {
            self.leases.remove(&id);
        }
    }

    /// Grants a lease or reports a conflict. Two live leases on one path
    /// must both be shared or belong to the same holder.
    pub fn grant(
        &mut self,
        path: &str,
        mode: LockMode,
        holder: &str,
        now_ms: u64,
    ) -> Result<Lease> {
        self.reap_path(path, now_ms);
        let conflicting = self.leases.values().any(|l| {
            l.path == path
                && l.holder != holder
                && (l.mode == LockMode::Exclusive || mode == LockMode::Exclusive)
        });
        if conflicting {
            return Err(XufsError::Conflict(format!("/{path}")));
        }
        let lease = Lease {
            lock_id: self.next_id,
            path: path.to_string(),
            holder: holder.to_string(),
            mode,
            expires_at_ms: now_ms + self.term_ms,
        };
        self.next_id += 1;
        self.leases.insert(lease.lock_id, lease.clone());
        Ok(lease)
    }

    /// Extends a live, owned lease to `now + term`.
    pub fn renew(&mut self, lock_id: u64, holder: &str, now_ms: u64) -> Result<Lease> {
        let Some(lease) = self.leases.get_mut(&lock_id) else {
            return Err(XufsError::Expired);
        };
        if lease.holder != holder {
            return Err(XufsError::NotOwner);
        }
        if lease.expires_at_ms <= now_ms {
            self.leases.remove(&lock_id);
            return Err(XufsError::Expired);
        }
        lease.expires_at_ms = now_ms + self.term_ms;
        Ok(lease.clone())
    }

    /// Releases a lease. Unknown ids are fine (already expired and reaped).
    pub fn release(&mut self, lock_id: u64, holder: &str) -> Result<()> {
        match self.leases.get(&lock_id) {
            None => Ok(()),
            Some(l) if l.holder != holder => Err(XufsError::NotOwner),
            Some(_) => {
                self.leases.remove(&lock_id);
                Ok(())
            }
        }
    }

    pub fn live(&self, now_ms: u64) -> impl Iterator<Item = &Lease> {
        self.leases.values().filter(move |l| l.expires_at_ms > now_ms)
    }

    pub fn len(&self) -> usize {
        self.leases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leases.is_empty()
    }

    /// Persists remaining terms relative to `now`, so a restarted server
    /// restores leases with at most their saved remaining lifetime.
    pub fn save(&self, path: &Path, now_ms: u64) -> Result<()> {
        let mut w = Writer::with_capacity(64);
        for b in LEASE_MAGIC {
            w.u8(*b);
        }
        w.u64(self.term_ms);
        w.u64(self.next_id);
        let live: Vec<&Lease> = self.leases.values().filter(|l| l.expires_at_ms > now_ms).collect();
        w.u32(live.len() as u32);
        for l in live {
            w.u64(l.lock_id);
            w.str(&l.path);
            w.str(&l.holder);
            w.u8(l.mode as u8);
            w.u64(l.expires_at_ms - now_ms);
        }
        let mut bytes = w.into_inner();
        bytes.extend_from_slice(&crc32fast::hash(&bytes).to_be_bytes());
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, term_ms: u64, now_ms: u64) -> Result<Self> {
        let raw = match fs::read(path) {
            Ok(r) => r,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Ok(LeaseTable::new(term_ms))
            }
            Err(e) => return Err(e.into()),
        };
        if raw.len() < 12 {
            return Ok(LeaseTable::new(term_ms));
        }
        let (body, crc_bytes) = raw.split_at(raw.len() - 4);
        if crc32fast::hash(body) != u32::from_be_bytes(crc_bytes.try_into().unwrap())
            || &body[..8] != LEASE_MAGIC
        {
            return Ok(LeaseTable::new(term_ms));
        }
        let mut r = Reader::new(&body[8..]);
        let _saved_term = r.u64()?;
        let next_id = r.u64()?;
        let mut table = LeaseTable { term_ms, next_id, leases: BTreeMap::new() };
        for _ in 0..r.u32()? {
            let lock_id = r.u64()?;
            let path = r.str()?;
            let holder = r.str()?;
            let mode = LockMode::from_u8(r.u8()?)
                .ok_or_else(|| XufsError::Malformed("bad lock mode".into()))?;
            let remaining = r.u64()?;
            table.leases.insert(
                lock_id,
                Lease { lock_id, path, holder, mode, expires_at_ms: now_ms + remaining },
            );
        }
        Ok(table)
    }
}
