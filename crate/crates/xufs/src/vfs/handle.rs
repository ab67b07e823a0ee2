//! Open file handles.
//!
//! A handle pins the cache data file it was opened against (open-to-close
//! snapshot: an invalidation swaps the path to a new file, but this fd keeps
//! reading its bytes). Writes update the local file eagerly for
//! read-your-writes and append to the handle's shadow file; nothing touches
//! the network until close.

use std::fs::File;
use std::os::unix::fs::FileExt;

use crate::cache::ShadowFile;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    Read,
    Write,
    ReadWrite,
}

impl AccessMode {
    pub fn writable(self) -> bool {
        !matches!(self, AccessMode::Read)
    }
}

/// Open flags beyond the access mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpenFlags {
    /// Discard existing content at open (records a full truncate in the
    /// shadow so the flush carries it to the server).
    pub truncate: bool,
    /// Create the entry if it does not exist (write modes only).
    pub create: bool,
}

#[derive(Debug)]
pub struct OpenHandle {
    pub handle_id: u64,
    pub rel_path: String,
    pub mode: AccessMode,
    pub position: u64,
    pub(crate) file: File,
    pub(crate) shadow: Option<ShadowFile>,
    pub(crate) localized: bool,
}

impl OpenHandle {
    /// Reads up to `len` bytes at the current position, advancing it.
    /// Reads at or past EOF return an empty buffer.
    pub fn read(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        let mut filled = 0usize;
        while filled < len {
            let n = self.file.read_at(&mut buf[filled..], self.position + filled as u64)?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        buf.truncate(filled);
        self.position += filled as u64;
        Ok(buf)
    }

    /// Reads the handle's entire content from offset 0 in `chunk`-sized
    /// steps, returning the byte count (used by scans and benches).
    pub fn scan_all(&mut self, chunk: usize) -> Result<u64> {
        self.position = 0;
        let mut total = 0u64;
        loop {
            let got = self.read(chunk)?;
            if got.is_empty() {
                break;
            }
            total += got.len() as u64;
        }
        Ok(total)
    }

    /// Writes at the current position, advancing it. Returns immediately
    /// with the full count; the content travels to the server only after
    /// close, via the queue.
    pub fn write(&mut self, data: &[u8]) -> Result<usize> {
        self.write_at(self.position, data)?;
        self.position += data.len() as u64;
        Ok(data.len())
    }

    /// Positional write that leaves the cursor alone.
    pub fn write_at(&mut self, offset: u64, data: &[u8]) -> Result<()> {
        let shadow = self
            .shadow
            .as_mut()
            .ok_or_else(|| crate::error::XufsError::AccessDenied("read-only handle".into()))?;
        if data.is_empty() {
            return Ok(());
        }
        shadow.append(offset, data)?;
        // Eager local update so same-client reads see the write.
        self.file.write_all_at(data, offset)?;
        Ok(())
    }

    pub fn seek(&mut self, position: u64) {
        self.position = position;
    }

    /// Current length of the handle's data file.
    pub fn len(&self) -> Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }
}
