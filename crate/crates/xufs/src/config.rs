//! Timing and sizing knobs, overridable via environment variables.
//!
//! Every knob has a documented `XUFS_*` variable; CLI flags take precedence
//! over the environment, which takes precedence over these defaults.

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const MAX_STREAMS: u32 = 12;
pub const MIN_BLOCK: u64 = 64 * 1024;
pub const MAX_FRAME: usize = 16 * 1024 * 1024;
pub const FETCH_CHUNK: u64 = 1024 * 1024;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Knobs {
    /// Lease term granted by the server; clients renew at half this.
    /// `XUFS_LEASE_TERM` (seconds).
    pub lease_term_ms: u64,
    /// Server backing-store poll interval for out-of-band changes.
    /// `XUFS_POLL_INTERVAL` (seconds).
    pub poll_interval_ms: u64,
    /// Reconnect backoff start. `XUFS_RECONNECT_INITIAL` (milliseconds).
    pub reconnect_initial_ms: u64,
    /// Reconnect backoff cap. `XUFS_RECONNECT_CAP` (milliseconds).
    pub reconnect_cap_ms: u64,
    /// Retry cadence for a failed lease renewal. `XUFS_RENEW_RETRY` (milliseconds).
    pub renew_retry_ms: u64,
    /// Parallel pre-fetch fan-out on first entry into a directory.
    /// `XUFS_PREFETCH_PARALLEL`.
    pub prefetch_parallel: usize,
    /// Only files strictly smaller than this are pre-fetched.
    /// `XUFS_PREFETCH_MAX_SIZE` (bytes).
    pub prefetch_max_size: u64,
    /// Maximum stripe count for one transfer. `XUFS_MAX_STREAMS`.
    pub max_streams: u32,
    /// Minimum bytes per stripe; transfers at or below this use one stream.
    /// `XUFS_MIN_BLOCK` (bytes).
    pub min_block: u64,
    /// Hard cap on one wire frame's payload. `XUFS_MAX_FRAME` (bytes).
    pub max_frame: usize,
    /// Chunk size for streaming segment data and for splitting flush extents.
    /// `XUFS_FETCH_CHUNK` (bytes).
    pub fetch_chunk: u64,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            lease_term_ms: 30_000,
            poll_interval_ms: 2_000,
            reconnect_initial_ms: 1_000,
            reconnect_cap_ms: 30_000,
            renew_retry_ms: 1_000,
            prefetch_parallel: 12,
            prefetch_max_size: MIN_BLOCK,
            max_streams: MAX_STREAMS,
            min_block: MIN_BLOCK,
            max_frame: MAX_FRAME,
            fetch_chunk: FETCH_CHUNK,
        }
    }
}

impl Knobs {
    /// Defaults overlaid with any `XUFS_*` environment overrides.
    pub fn from_env() -> Self {
        let mut k = Knobs::default();
        if let Some(v) = env_u64("XUFS_LEASE_TERM") {
            k.lease_term_ms = v * 1000;
        }
        if let Some(v) = env_u64("XUFS_POLL_INTERVAL") {
            k.poll_interval_ms = v * 1000;
        }
        if let Some(v) = env_u64("XUFS_RECONNECT_INITIAL") {
            k.reconnect_initial_ms = v;
        }
        if let Some(v) = env_u64("XUFS_RECONNECT_CAP") {
            k.reconnect_cap_ms = v;
        }
        if let Some(v) = env_u64("XUFS_RENEW_RETRY") {
            k.renew_retry_ms = v;
        }
        if let Some(v) = env_u64("XUFS_PREFETCH_PARALLEL") {
            k.prefetch_parallel = v as usize;
        }
        if let Some(v) = env_u64("XUFS_PREFETCH_MAX_SIZE") {
            k.prefetch_max_size = v;
        }
        if let Some(v) = env_u64("XUFS_MAX_STREAMS") {
            k.max_streams = v as u32;
        }
        if let Some(v) = env_u64("XUFS_MIN_BLOCK") {
            k.min_block = v;
        }
        if let Some(v) = env_u64("XUFS_MAX_FRAME") {
            k.max_frame = v as usize;
        }
        if let Some(v) = env_u64("XUFS_FETCH_CHUNK") {
            k.fetch_chunk = v;
        }
        k
    }

    pub fn lease_term(&self) -> Duration {
        Duration::from_millis(self.lease_term_ms)
    }

    pub fn poll_interval(&self) -> Duration {
        Duration::from_millis(self.poll_interval_ms)
    }

    pub fn reconnect_initial(&self) -> Duration {
        Duration::from_millis(self.reconnect_initial_ms)
    }

    pub fn reconnect_cap(&self) -> Duration {
        Duration::from_millis(self.reconnect_cap_ms)
    }

    pub fn renew_retry(&self) -> Duration {
        Duration::from_millis(self.renew_retry_ms)
    }
}

fn env_u64(name: &str) -> Option<u64> {
    std::env::var(name).ok()?.trim().parse().ok()
}
