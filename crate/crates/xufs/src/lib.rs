//! XUFS: a user-space wide-area caching file system.
//!
//! A personal file server exports a home name space; the client library
//! mounts it against a local whole-file cache with write-back through a
//! persisted meta-operation queue, callback-based invalidation, lease
//! locking, and striped transfers. Everything runs over a pluggable
//! transport, so the full protocol is testable in-process over a
//! deterministic simulated WAN as well as over real TCP.

pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod net;
pub mod paths;
pub mod server;
pub mod vfs;
pub mod wire;

pub use error::{ErrorCode, Result, XufsError};
