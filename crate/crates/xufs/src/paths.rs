//! Relative-path normalization shared by client and server.
//!
//! A normalized path is `""` for the export root or slash-joined components
//! like `"src/a.txt"`. Absolute paths are treated as rooted at the export;
//! `..` and reserved `.xufs.` names are rejected before anything touches a
//! backing store.

use std::path::{Path, PathBuf};

use crate::error::{Result, XufsError};

/// Prefix of client-side hidden attribute files; reserved everywhere.
pub const HIDDEN_PREFIX: &str = ".xufs.";
/// All names starting with this are reserved for cache/server internals
/// (hidden attribute files, directory markers, the server state dir).
pub const RESERVED_PREFIX: &str = ".xufs";
/// Server-private state directory name, never served.
pub const SERVER_STATE_DIR: &str = ".xufs-server";

/// Normalizes a path into its canonical relative form.
pub fn normalize(path: &str) -> Result<String> {
    let mut parts: Vec<&str> = Vec::new();
    for comp in path.split('/') {
        match comp {
            "" | "." => continue,
            ".." => {
                return Err(XufsError::AccessDenied(format!(
                    "path {path:?} escapes the export root"
                )))
            }
            c if c.starts_with(RESERVED_PREFIX) => {
                return Err(XufsError::AccessDenied(format!("reserved name in {path:?}")))
            }
            c => parts.push(c),
        }
    }
    Ok(parts.join("/"))
}

/// Splits a normalized path into (parent, name). The root has neither.
pub fn split(rel: &str) -> Option<(&str, &str)> {
    if rel.is_empty() {
        return None;
    }
    match rel.rfind('/') {
        Some(i) => Some((&rel[..i], &rel[i + 1..])),
        None => Some(("", rel)),
    }
}

pub fn parent(rel: &str) -> Option<&str> {
    split(rel).map(|(p, _)| p)
}

pub fn file_name(rel: &str) -> Option<&str> {
    split(rel).map(|(_, n)| n)
}

/// Joins a normalized directory and a child name.
pub fn join(dir: &str, name: &str) -> String {
    if dir.is_empty() {
        name.to_string()
    } else {
        format!("{dir}/{name}")
    }
}

/// Resolves a normalized path under a filesystem root.
pub fn under(root: &Path, rel: &str) -> PathBuf {
    if rel.is_empty() {
        root.to_path_buf()
    } else {
        root.join(rel)
    }
}

/// True if `rel` equals `prefix` or lies underneath it. An empty prefix
/// matches everything.
pub fn has_prefix(rel: &str, prefix: &str) -> bool {
    if prefix.is_empty() {
        return true;
    }
    rel == prefix || (rel.len() > prefix.len() && rel.starts_with(prefix) && rel.as_bytes()[prefix.len()] == b'/')
}

/// True if `rel` falls under any of the given prefixes.
pub fn matches_any_prefix(rel: &str, prefixes: &[String]) -> bool {
    prefixes.iter().any(|p| has_prefix(rel, p))
}
