//! Line-oriented operation scripts for the `mount` session command.
//!
//! One operation per line, `#` comments. Handles and lock tokens are named
//! variables bound by `open` and `lock`:
//!
//! ```text
//! opendir /
//! open h1 /src/main.c r
//! read h1 64
//! open h2 /out.log w,create,trunc
//! write h2 "hello\n"
//! close h2
//! lock t1 /out.log ex
//! unlock t1
//! sync
//! ```

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Result, XufsError};
use crate::vfs::{AccessMode, LockToken, Mount, OpenFlags, OpenHandle};
use crate::wire::LockMode;

#[derive(Debug, Clone, Serialize)]
pub struct OpResult {
    pub line: usize,
    pub op: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScriptOutcome {
    pub results: Vec<OpResult>,
    pub failures: usize,
}

/// Parses and runs a script against a mount. Parse errors abort immediately
/// (usage error); operation failures are recorded and, without
/// `keep_going`, stop execution.
pub async fn run_script(mount: &Mount, script: &str, keep_going: bool) -> Result<ScriptOutcome> {
    let mut handles: BTreeMap<String, OpenHandle> = BTreeMap::new();
    let mut tokens: BTreeMap<String, LockToken> = BTreeMap::new();
    let mut outcome = ScriptOutcome::default();

    for (idx, raw) in script.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let words = tokenize(line)
            .map_err(|e| XufsError::ProtocolError(format!("line {line_no}: {e}")))?;
        let op = words[0].clone();
        let result = exec_one(mount, &words, &mut handles, &mut tokens).await;
        match result {
            Ok(detail) => {
                outcome.results.push(OpResult { line: line_no, op, ok: true, detail });
            }
            Err(ScriptError::Usage(msg)) => {
                return Err(XufsError::ProtocolError(format!("line {line_no}: {msg}")));
            }
            Err(ScriptError::Op(e)) => {
                outcome.failures += 1;
                outcome.results.push(OpResult {
                    line: line_no,
                    op,
                    ok: false,
                    detail: format!("{}: {e}", e.code()),
                });
                if !keep_going {
                    break;
                }
            }
        }
    }
    Ok(outcome)
}

enum ScriptError {
    /// Malformed script line: a usage error, exit code 2.
    Usage(String),
    /// The operation itself failed.
    Op(XufsError),
}

impl From<XufsError> for ScriptError {
    fn from(e: XufsError) -> Self {
        ScriptError::Op(e)
    }
}

fn usage(msg: impl Into<String>) -> ScriptError {
    ScriptError::Usage(msg.into())
}

async fn exec_one(
    mount: &Mount,
    words: &[String],
    handles: &mut BTreeMap<String, OpenHandle>,
    tokens: &mut BTreeMap<String, LockToken>,
) -> std::result::Result<String, ScriptError> {
    let arg = |i: usize| -> std::result::Result<&str, ScriptError> {
        words.get(i).map(String::as_str).ok_or_else(|| usage("missing argument"))
    };
    match words[0].as_str() {
        "opendir" => {
            let listing = mount.opendir(arg(1)?).await?;
            let names: Vec<&str> = listing.entries.iter().map(|e| e.name.as_str()).collect();
            Ok(names.join(" "))
        }
        "chdir" => {
            let report = mount.chdir_prefetch(arg(1)?).await?;
            Ok(format!("prefetched {} file(s)", report.fetched.len()))
        }
        "stat" => {
            let attrs = mount.stat(arg(1)?)?;
            Ok(format!("kind={:?} size={} version={}", attrs.kind, attrs.size, attrs.version))
        }
        "open" => {
            let name = arg(1)?.to_string();
            let path = arg(2)?;
            let (mode, flags) = parse_mode(arg(3)?).map_err(usage)?;
            let handle = mount.open(path, mode, flags).await?;
            handles.insert(name, handle);
            Ok(String::new())
        }
        "read" => {
            let name = arg(1)?;
            let len: usize = arg(2)?.parse().map_err(|_| usage("read length"))?;
            let handle = handles.get_mut(name).ok_or_else(|| usage("unknown handle"))?;
            let data = handle.read(len)?;
            Ok(escape(&data))
        }
        "write" => {
            let name = arg(1)?;
            let data = unescape(arg(2)?).map_err(usage)?;
            let handle = handles.get_mut(name).ok_or_else(|| usage("unknown handle"))?;
            let n = handle.write(&data)?;
            Ok(format!("{n} bytes"))
        }
        "pwrite" => {
            let name = arg(1)?;
            let offset: u64 = arg(2)?.parse().map_err(|_| usage("pwrite offset"))?;
            let data = unescape(arg(3)?).map_err(usage)?;
            let handle = handles.get_mut(name).ok_or_else(|| usage("unknown handle"))?;
            handle.write_at(offset, &data)?;
            Ok(format!("{} bytes @ {offset}", data.len()))
        }
        "seek" => {
            let name = arg(1)?;
            let pos: u64 = arg(2)?.parse().map_err(|_| usage("seek position"))?;
            handles.get_mut(name).ok_or_else(|| usage("unknown handle"))?.seek(pos);
            Ok(String::new())
        }
        "close" => {
            let handle = handles.remove(arg(1)?).ok_or_else(|| usage("unknown handle"))?;
            mount.close(handle)?;
            Ok(String::new())
        }
        "mkdir" => {
            mount.mkdir(arg(1)?)?;
            Ok(String::new())
        }
        "unlink" => {
            mount.unlink(arg(1)?)?;
            Ok(String::new())
        }
        "rmdir" => {
            mount.rmdir(arg(1)?)?;
            Ok(String::new())
        }
        "rename" => {
            mount.rename(arg(1)?, arg(2)?)?;
            Ok(String::new())
        }
        "lock" => {
            let name = arg(1)?.to_string();
            let path = arg(2)?;
            let mode = match arg(3)? {
                "shared" | "sh" => LockMode::Shared,
                "ex" | "exclusive" => LockMode::Exclusive,
                other => return Err(usage(format!("unknown lock mode {other:?}"))),
            };
            let token = mount.lock(path, mode).await?;
            tokens.insert(name, token);
            Ok(String::new())
        }
        "unlock" => {
            let token = tokens.remove(arg(1)?).ok_or_else(|| usage("unknown lock token"))?;
            mount.unlock(token).await?;
            Ok(String::new())
        }
        "sync" => {
            let report = mount.sync().await?;
            Ok(format!("drained {} op(s)", report.drained.len()))
        }
        "sleep" => {
            let ms: u64 = arg(1)?.parse().map_err(|_| usage("sleep millis"))?;
            tokio::time::sleep(std::time::Duration::from_millis(ms)).await;
            Ok(String::new())
        }
        "queue-len" => Ok(mount.queue_len().to_string()),
        other => Err(usage(format!("unknown operation {other:?}"))),
    }
}

fn parse_mode(spec: &str) -> std::result::Result<(AccessMode, OpenFlags), String> {
    let mut parts = spec.split(',');
    let mode = match parts.next().unwrap_or("") {
        "r" => AccessMode::Read,
        "w" => AccessMode::Write,
        "rw" => AccessMode::ReadWrite,
        other => return Err(format!("unknown open mode {other:?}")),
    };
    let mut flags = OpenFlags::default();
    for part in parts {
        match part {
            "create" => flags.create = true,
            "trunc" => flags.truncate = true,
            other => return Err(format!("unknown open flag {other:?}")),
        }
    }
    Ok((mode, flags))
}

/// Splits a line into words; double-quoted strings keep their escapes for
/// `unescape` to process.
fn tokenize(line: &str) -> std::result::Result<Vec<String>, String> {
    let mut words = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let mut word = String::new();
        if c == '"' {
            word.push(chars.next().unwrap());
            let mut closed = false;
            while let Some(c) = chars.next() {
                word.push(c);
                if c == '\\' {
                    if let Some(escaped) = chars.next() {
                        word.push(escaped);
                    }
                } else if c == '"' {
                    closed = true;
                    break;
                }
            }
            if !closed {
                return Err("unterminated string".into());
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                word.push(chars.next().unwrap());
            }
        }
        words.push(word);
    }
    if words.is_empty() {
        return Err("empty line".into());
    }
    Ok(words)
}

fn unescape(word: &str) -> std::result::Result<Vec<u8>, String> {
    let inner = if word.starts_with('"') && word.ends_with('"') && word.len() >= 2 {
        &word[1..word.len() - 1]
    } else {
        word
    };
    let mut out = Vec::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('n') => out.push(b'\n'),
            Some('t') => out.push(b'\t'),
            Some('r') => out.push(b'\r'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('"') => out.push(b'"'),
            Some('x') => {
                let hi = chars.next().ok_or("truncated \\x escape")?;
                let lo = chars.next().ok_or("truncated \\x escape")?;
                let byte = u8::from_str_radix(&format!("{hi}{lo}"), 16)
                    .map_err(|_| "bad \\x escape")?;
                out.push(byte);
            }
            other => return Err(format!("unknown escape {other:?}")),
        }
    }
    Ok(out)
}

fn escape(data: &[u8]) -> String {
    let mut out = String::with_capacity(data.len() + 2);
    out.push('"');
    for &b in data {
        match b {
            b'\n' => out.push_str("\\n"),
            b'\t' => out.push_str("\\t"),
            b'\r' => out.push_str("\\r"),
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out.push('"');
    out
}
