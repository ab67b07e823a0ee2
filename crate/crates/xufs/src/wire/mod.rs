//! Wire protocol: message types, bit-exact framing, stripe planning, and
//! challenge-response authentication.
//!
//! Frame layout (see docs/PROTOCOL.md):
//!
//! ```text
//! version(1) | kind(1) | request_id(8, BE) | payload_len(4, BE) | payload
//! ```
//!
//! All operations here are pure functions over values.

pub mod auth;
pub(crate) mod codec;
pub mod stripe;

pub use stripe::{plan_stripes, plan_stripes_default, reassemble, Coverage, Segment, StripePlan};

use crate::config::MAX_FRAME;
use crate::error::{ErrorCode, Result, XufsError};
use codec::{bytes_len, str_len, Reader, Writer};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    Challenge = 2,
    ChallengeResponse = 3,
    AuthResult = 4,
    ReaddirReq = 5,
    ReaddirResp = 6,
    FetchReq = 7,
    FetchSegment = 8,
    FetchDone = 9,
    MetaOpBatch = 10,
    MetaOpAck = 11,
    CallbackRegister = 12,
    Invalidate = 13,
    LockReq = 14,
    LockResp = 15,
    LeaseRenew = 16,
    LeaseAck = 17,
    Unlock = 18,
    Error = 19,
}

impl MessageKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        use MessageKind::*;
        Some(match v {
            1 => Hello,
            2 => Challenge,
            3 => ChallengeResponse,
            4 => AuthResult,
            5 => ReaddirReq,
            6 => ReaddirResp,
            7 => FetchReq,
            8 => FetchSegment,
            9 => FetchDone,
            10 => MetaOpBatch,
            11 => MetaOpAck,
            12 => CallbackRegister,
            13 => Invalidate,
            14 => LockReq,
            15 => LockResp,
            16 => LeaseRenew,
            17 => LeaseAck,
            18 => Unlock,
            19 => Error,
            _ => return None,
        })
    }

    /// The single success-response kind for a request kind, or None for
    /// responses, streamed parts, and one-way notifications. `ERROR` is the
    /// universal failure response and `FETCH_SEGMENT` the streamed body of a
    /// `FETCH_REQ`; neither appears here.
    pub fn response_kind(self) -> Option<MessageKind> {
        use MessageKind::*;
        match self {
            Hello => Some(Challenge),
            ChallengeResponse => Some(AuthResult),
            ReaddirReq => Some(ReaddirResp),
            FetchReq => Some(FetchDone),
            MetaOpBatch => Some(MetaOpAck),
            CallbackRegister => Some(AuthResult),
            LockReq => Some(LockResp),
            LeaseRenew => Some(LeaseAck),
            Unlock => Some(LeaseAck),
            _ => None,
        }
    }

    pub fn is_request(self) -> bool {
        self.response_kind().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[repr(u8)]
pub enum EntryKind {
    File = 0,
    Dir = 1,
    Symlink = 2,
}

impl EntryKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(EntryKind::File),
            1 => Some(EntryKind::Dir),
            2 => Some(EntryKind::Symlink),
            _ => None,
        }
    }
}

/// Attribute snapshot for one directory entry, served by the file server
/// and stored client-side in hidden attribute files.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EntryAttributes {
    pub name: String,
    pub kind: EntryKind,
    pub size: u64,
    pub mode: u32,
    pub mtime_ns: u64,
    pub version: u64,
}

impl EntryAttributes {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.name);
        w.u8(self.kind as u8);
        w.u64(self.size);
        w.u32(self.mode);
        w.u64(self.mtime_ns);
        w.u64(self.version);
    }

    fn decode(r: &mut Reader) -> Result<Self> {
        Ok(EntryAttributes {
            name: r.str()?,
            kind: EntryKind::from_u8(r.u8()?)
                .ok_or_else(|| XufsError::Malformed("bad entry kind".into()))?,
            size: r.u64()?,
            mode: r.u32()?,
            mtime_ns: r.u64()?,
            version: r.u64()?,
        })
    }

    fn encoded_len(&self) -> usize {
        str_len(&self.name) + 1 + 8 + 4 + 8 + 8
    }
}

/// One contiguous byte range, used for shadow records and flush extents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extent {
    pub offset: u64,
    pub data: Vec<u8>,
}

impl Extent {
    pub fn new(offset: u64, data: impl Into<Vec<u8>>) -> Self {
        Extent {
            offset,
            data: data.into(),
        }
    }

    pub fn end(&self) -> u64 {
        self.offset + self.data.len() as u64
    }
}

/// One queued, persisted mutation destined for the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaOp {
    pub op_id: u64,
    pub target: String,
    pub args: MetaOpArgs,
    pub enqueue_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetaOpArgs {
    Create { mode: u32 },
    Unlink,
    Mkdir { mode: u32 },
    Rmdir,
    Rename { new_target: String },
    SetAttr { mode: Option<u32>, mtime_ns: Option<u64>, size: Option<u64> },
    FlushShadow(FlushArgs),
}

/// Coalesced content flush for one closed handle (or one piece of it when
/// the extents exceed a frame).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlushArgs {
    /// Discard the server copy's bytes before applying extents.
    pub truncate: bool,
    pub extents: Vec<Extent>,
    /// When set, the file length is forced to exactly this after the
    /// extents apply. Carried by the final piece of a split flush.
    pub set_len: Option<u64>,
    /// Version the client's cached copy was based on, for conflict reporting.
    pub base_version: u64,
}

impl MetaOpArgs {
    pub fn kind_name(&self) -> &'static str {
        match self {
            MetaOpArgs::Create { .. } => "create",
            MetaOpArgs::Unlink => "unlink",
            MetaOpArgs::Mkdir { .. } => "mkdir",
            MetaOpArgs::Rmdir => "rmdir",
            MetaOpArgs::Rename { .. } => "rename",
            MetaOpArgs::SetAttr { .. } => "setattr",
            MetaOpArgs::FlushShadow(_) => "flush_shadow",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            MetaOpArgs::Create { .. } => 0,
            MetaOpArgs::Unlink => 1,
            MetaOpArgs::Mkdir { .. } => 2,
            MetaOpArgs::Rmdir => 3,
            MetaOpArgs::Rename { .. } => 4,
            MetaOpArgs::SetAttr { .. } => 5,
            MetaOpArgs::FlushShadow(_) => 6,
        }
    }
}

impl MetaOp {
    pub fn encode_to(&self, w: &mut Writer) {
        w.u64(self.op_id);
        w.str(&self.target);
        w.u64(self.enqueue_time_ms);
        w.u8(self.args.tag());
        match &self.args {
            MetaOpArgs::Create { mode } => w.u32(*mode),
            MetaOpArgs::Unlink | MetaOpArgs::Rmdir => {}
            MetaOpArgs::Mkdir { mode } => w.u32(*mode),
            MetaOpArgs::Rename { new_target } => w.str(new_target),
            MetaOpArgs::SetAttr { mode, mtime_ns, size } => {
                w.opt_u32(*mode);
                w.opt_u64(*mtime_ns);
                w.opt_u64(*size);
            }
            MetaOpArgs::FlushShadow(f) => {
                w.boolean(f.truncate);
                w.opt_u64(f.set_len);
                w.u64(f.base_version);
                w.u32(f.extents.len() as u32);
                for e in &f.extents {
                    w.u64(e.offset);
                    w.bytes(&e.data);
                }
            }
        }
    }

    pub fn decode_from(r: &mut Reader) -> Result<Self> {
        let op_id = r.u64()?;
        let target = r.str()?;
        let enqueue_time_ms = r.u64()?;
        let args = match r.u8()? {
            0 => MetaOpArgs::Create { mode: r.u32()? },
            1 => MetaOpArgs::Unlink,
            2 => MetaOpArgs::Mkdir { mode: r.u32()? },
            3 => MetaOpArgs::Rmdir,
            4 => MetaOpArgs::Rename { new_target: r.str()? },
            5 => MetaOpArgs::SetAttr {
                mode: r.opt_u32()?,
                mtime_ns: r.opt_u64()?,
                size: r.opt_u64()?,
            },
            6 => {
                let truncate = r.boolean()?;
                let set_len = r.opt_u64()?;
                let base_version = r.u64()?;
                let n = r.u32()? as usize;
                let mut extents = Vec::with_capacity(n.min(4096));
                for _ in 0..n {
                    let offset = r.u64()?;
                    let data = r.bytes()?;
                    extents.push(Extent { offset, data });
                }
                MetaOpArgs::FlushShadow(FlushArgs { truncate, set_len, base_version, extents })
            }
            t => return Err(XufsError::Malformed(format!("bad metaop tag {t}"))),
        };
        Ok(MetaOp { op_id, target, args, enqueue_time_ms })
    }

    pub fn encoded_len(&self) -> usize {
        let args = match &self.args {
            MetaOpArgs::Create { .. } | MetaOpArgs::Mkdir { .. } => 4,
            MetaOpArgs::Unlink | MetaOpArgs::Rmdir => 0,
            MetaOpArgs::Rename { new_target } => str_len(new_target),
            MetaOpArgs::SetAttr { mode, mtime_ns, size } => {
                (1 + if mode.is_some() { 4 } else { 0 })
                    + (1 + if mtime_ns.is_some() { 8 } else { 0 })
                    + (1 + if size.is_some() { 8 } else { 0 })
            }
            MetaOpArgs::FlushShadow(f) => {
                1 + (1 + if f.set_len.is_some() { 8 } else { 0 })
                    + 8
                    + 4
                    + f.extents.iter().map(|e| 8 + bytes_len(&e.data)).sum::<usize>()
            }
        };
        8 + str_len(&self.target) + 8 + 1 + args
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.encoded_len());
        self.encode_to(&mut w);
        w.into_inner()
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let op = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(op)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[repr(u8)]
pub enum OpStatus {
    Ok = 0,
    NotFound = 1,
    Exists = 2,
    NotEmpty = 3,
    IoError = 4,
    /// The op_id was already applied; acknowledged without re-execution.
    Duplicate = 5,
}

impl OpStatus {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => OpStatus::Ok,
            1 => OpStatus::NotFound,
            2 => OpStatus::Exists,
            3 => OpStatus::NotEmpty,
            4 => OpStatus::IoError,
            5 => OpStatus::Duplicate,
            _ => return None,
        })
    }

    pub fn is_applied(self) -> bool {
        matches!(self, OpStatus::Ok | OpStatus::Duplicate)
    }
}

/// Per-op result inside a `METAOP_ACK`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct OpOutcome {
    pub op_id: u64,
    pub status: OpStatus,
    /// Target's version after a successful apply, 0 otherwise.
    pub new_version: u64,
    /// Target's version immediately before the apply (0 if it did not
    /// exist). Lets a recovering client see what a flush overwrote.
    pub prev_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[repr(u8)]
pub enum LockMode {
    Shared = 0,
    Exclusive = 1,
}

impl LockMode {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(LockMode::Shared),
            1 => Some(LockMode::Exclusive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LockResult {
    Granted { lock_id: u64, term_ms: u64 },
    Conflict,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello { key: String, client_id: String },
    Challenge { nonce: Vec<u8> },
    ChallengeResponse { digest: [u8; 32] },
    AuthResult { ok: bool, detail: String },
    ReaddirReq { path: String },
    ReaddirResp { entries: Vec<EntryAttributes> },
    FetchReq { path: String, total_length: u64 },
    FetchSegment { path: String, stream_index: u32, offset: u64, data: Vec<u8> },
    FetchDone { path: String, version: u64, total_length: u64 },
    MetaOpBatch { client_id: String, ops: Vec<MetaOp> },
    MetaOpAck { results: Vec<OpOutcome> },
    CallbackRegister { client_id: String, watched: Vec<String> },
    Invalidate { path: String, new_version: u64 },
    LockReq { path: String, mode: LockMode },
    LockResp { result: LockResult },
    LeaseRenew { lock_id: u64 },
    LeaseAck { lock_id: u64, expires_in_ms: u64 },
    Unlock { lock_id: u64 },
    Error { code: ErrorCode, detail: String },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        use MessageKind as K;
        match self {
            Payload::Hello { .. } => K::Hello,
            Payload::Challenge { .. } => K::Challenge,
            Payload::ChallengeResponse { .. } => K::ChallengeResponse,
            Payload::AuthResult { .. } => K::AuthResult,
            Payload::ReaddirReq { .. } => K::ReaddirReq,
            Payload::ReaddirResp { .. } => K::ReaddirResp,
            Payload::FetchReq { .. } => K::FetchReq,
            Payload::FetchSegment { .. } => K::FetchSegment,
            Payload::FetchDone { .. } => K::FetchDone,
            Payload::MetaOpBatch { .. } => K::MetaOpBatch,
            Payload::MetaOpAck { .. } => K::MetaOpAck,
            Payload::CallbackRegister { .. } => K::CallbackRegister,
            Payload::Invalidate { .. } => K::Invalidate,
            Payload::LockReq { .. } => K::LockReq,
            Payload::LockResp { .. } => K::LockResp,
            Payload::LeaseRenew { .. } => K::LeaseRenew,
            Payload::LeaseAck { .. } => K::LeaseAck,
            Payload::Unlock { .. } => K::Unlock,
            Payload::Error { .. } => K::Error,
        }
    }

    fn encode_to(&self, w: &mut Writer) {
        match self {
            Payload::Hello { key, client_id } => {
                w.str(key);
                w.str(client_id);
            }
            Payload::Challenge { nonce } => w.bytes(nonce),
            Payload::ChallengeResponse { digest } => {
                w.bytes(digest.as_slice());
            }
            Payload::AuthResult { ok, detail } => {
                w.boolean(*ok);
                w.str(detail);
            }
            Payload::ReaddirReq { path } => w.str(path),
            Payload::ReaddirResp { entries } => {
                w.u32(entries.len() as u32);
                for e in entries {
                    e.encode(w);
                }
            }
            Payload::FetchReq { path, total_length } => {
                w.str(path);
                w.u64(*total_length);
            }
            Payload::FetchSegment { path, stream_index, offset, data } => {
                w.str(path);
                w.u32(*stream_index);
                w.u64(*offset);
                w.bytes(data);
            }
            Payload::FetchDone { path, version, total_length } => {
                w.str(path);
                w.u64(*version);
                w.u64(*total_length);
            }
            Payload::MetaOpBatch { client_id, ops } => {
                w.str(client_id);
                w.u32(ops.len() as u32);
                for op in ops {
                    op.encode_to(w);
                }
            }
            Payload::MetaOpAck { results } => {
                w.u32(results.len() as u32);
                for res in results {
                    w.u64(res.op_id);
                    w.u8(res.status as u8);
                    w.u64(res.new_version);
                    w.u64(res.prev_version);
                }
            }
            Payload::CallbackRegister { client_id, watched } => {
                w.str(client_id);
                w.u32(watched.len() as u32);
                for p in watched {
                    w.str(p);
                }
            }
            Payload::Invalidate { path, new_version } => {
                w.str(path);
                w.u64(*new_version);
            }
            Payload::LockReq { path, mode } => {
                w.str(path);
                w.u8(*mode as u8);
            }
            Payload::LockResp { result } => match result {
                LockResult::Granted { lock_id, term_ms } => {
                    w.u8(1);
                    w.u64(*lock_id);
                    w.u64(*term_ms);
                }
                LockResult::Conflict => w.u8(0),
            },
            Payload::LeaseRenew { lock_id } => w.u64(*lock_id),
            Payload::LeaseAck { lock_id, expires_in_ms } => {
                w.u64(*lock_id);
                w.u64(*expires_in_ms);
            }
            Payload::Unlock { lock_id } => w.u64(*lock_id),
            Payload::Error { code, detail } => {
                w.u16(*code as u16);
                w.str(detail);
            }
        }
    }

    fn decode_from(kind: MessageKind, r: &mut Reader) -> Result<Self> {
        use MessageKind as K;
        Ok(match kind {
            K::Hello => Payload::Hello { key: r.str()?, client_id: r.str()? },
            K::Challenge => Payload::Challenge { nonce: r.bytes()? },
            K::ChallengeResponse => {
                let b = r.bytes()?;
                let digest: [u8; 32] = b
                    .as_slice()
                    .try_into()
                    .map_err(|_| XufsError::Malformed("digest must be 32 bytes".into()))?;
                Payload::ChallengeResponse { digest }
            }
            K::AuthResult => Payload::AuthResult { ok: r.boolean()?, detail: r.str()? },
            K::ReaddirReq => Payload::ReaddirReq { path: r.str()? },
            K::ReaddirResp => {
                let n = r.u32()? as usize;
                let mut entries = Vec::with_capacity(n.min(65536));
                for _ in 0..n {
                    entries.push(EntryAttributes::decode(r)?);
                }
                Payload::ReaddirResp { entries }
            }
            K::FetchReq => Payload::FetchReq { path: r.str()?, total_length: r.u64()? },
            K::FetchSegment => Payload::FetchSegment {
                path: r.str()?,
                stream_index: r.u32()?,
                offset: r.u64()?,
                data: r.bytes()?,
            },
            K::FetchDone => Payload::FetchDone {
                path: r.str()?,
                version: r.u64()?,
                total_length: r.u64()?,
            },
            K::MetaOpBatch => {
                let client_id = r.str()?;
                let n = r.u32()? as usize;
                let mut ops = Vec::with_capacity(n.min(65536));
                for _ in 0..n {
                    ops.push(MetaOp::decode_from(r)?);
                }
                Payload::MetaOpBatch { client_id, ops }
            }
            K::MetaOpAck => {
                let n = r.u32()? as usize;
                let mut results = Vec::with_capacity(n.min(65536));
                for _ in 0..n {
                    results.push(OpOutcome {
                        op_id: r.u64()?,
                        status: OpStatus::from_u8(r.u8()?)
                            .ok_or_else(|| XufsError::Malformed("bad op status".into()))?,
                        new_version: r.u64()?,
                        prev_version: r.u64()?,
                    });
                }
                Payload::MetaOpAck { results }
            }
            K::CallbackRegister => {
                let client_id = r.str()?;
                let n = r.u32()? as usize;
                let mut watched = Vec::with_capacity(n.min(65536));
                for _ in 0..n {
                    watched.push(r.str()?);
                }
                Payload::CallbackRegister { client_id, watched }
            }
            K::Invalidate => Payload::Invalidate { path: r.str()?, new_version: r.u64()? },
            K::LockReq => Payload::LockReq {
                path: r.str()?,
                mode: LockMode::from_u8(r.u8()?)
                    .ok_or_else(|| XufsError::Malformed("bad lock mode".into()))?,
            },
            K::LockResp => {
                let result = match r.u8()? {
                    1 => LockResult::Granted { lock_id: r.u64()?, term_ms: r.u64()? },
                    0 => LockResult::Conflict,
                    v => return Err(XufsError::Malformed(format!("bad lock result {v}"))),
                };
                Payload::LockResp { result }
            }
            K::LeaseRenew => Payload::LeaseRenew { lock_id: r.u64()? },
            K::LeaseAck => Payload::LeaseAck { lock_id: r.u64()?, expires_in_ms: r.u64()? },
            K::Unlock => Payload::Unlock { lock_id: r.u64()? },
            K::Error => {
                let raw = r.u16()?;
                let code = ErrorCode::from_u16(raw)
                    .ok_or_else(|| XufsError::Malformed(format!("bad error code {raw}")))?;
                Payload::Error { code, detail: r.str()? }
            }
        })
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            Payload::Hello { key, client_id } => str_len(key) + str_len(client_id),
            Payload::Challenge { nonce } => bytes_len(nonce),
            Payload::ChallengeResponse { .. } => 4 + 32,
            Payload::AuthResult { detail, .. } => 1 + str_len(detail),
            Payload::ReaddirReq { path } => str_len(path),
            Payload::ReaddirResp { entries } => {
                4 + entries.iter().map(|e| e.encoded_len()).sum::<usize>()
            }
            Payload::FetchReq { path, .. } => str_len(path) + 8,
            Payload::FetchSegment { path, data, .. } => str_len(path) + 4 + 8 + bytes_len(data),
            Payload::FetchDone { path, .. } => str_len(path) + 16,
            Payload::MetaOpBatch { client_id, ops } => {
                str_len(client_id) + 4 + ops.iter().map(|o| o.encoded_len()).sum::<usize>()
            }
            Payload::MetaOpAck { results } => 4 + results.len() * (8 + 1 + 8 + 8),
            Payload::CallbackRegister { client_id, watched } => {
                str_len(client_id) + 4 + watched.iter().map(|p| str_len(p)).sum::<usize>()
            }
            Payload::Invalidate { path, .. } => str_len(path) + 8,
            Payload::LockReq { path, .. } => str_len(path) + 1,
            Payload::LockResp { result } => match result {
                LockResult::Granted { .. } => 1 + 16,
                LockResult::Conflict => 1,
            },
            Payload::LeaseRenew { .. } => 8,
            Payload::LeaseAck { .. } => 16,
            Payload::Unlock { .. } => 8,
            Payload::Error { detail, .. } => 2 + str_len(detail),
        }
    }

    /// Path the message concerns, for transcript summaries.
    pub fn path(&self) -> Option<&str> {
        match self {
            Payload::ReaddirReq { path }
            | Payload::FetchReq { path, .. }
            | Payload::FetchSegment { path, .. }
            | Payload::FetchDone { path, .. }
            | Payload::Invalidate { path, .. }
            | Payload::LockReq { path, .. } => Some(path),
            _ => None,
        }
    }

    pub fn stream_index(&self) -> Option<u32> {
        match self {
            Payload::FetchSegment { stream_index, .. } => Some(*stream_index),
            _ => None,
        }
    }
}

/// One protocol message: a request id plus a kind-specific payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub request_id: u64,
    pub payload: Payload,
}

impl Message {
    pub fn new(request_id: u64, payload: Payload) -> Self {
        Message { request_id, payload }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    /// Full frame size on the wire, header included.
    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload.encoded_len()
    }
}

/// Encodes a message into one length-prefixed, versioned frame.
pub fn encode_message(m: &Message) -> Result<Vec<u8>> {
    encode_message_limited(m, MAX_FRAME)
}

pub fn encode_message_limited(m: &Message, max_frame: usize) -> Result<Vec<u8>> {
    let payload_len = m.payload.encoded_len();
    if payload_len > max_frame {
        return Err(XufsError::FrameTooLarge { size: payload_len, max: max_frame });
    }
    let mut w = Writer::with_capacity(HEADER_LEN + payload_len);
    w.u8(WIRE_VERSION);
    w.u8(m.kind() as u8);
    w.u64(m.request_id);
    w.u32(payload_len as u32);
    m.payload.encode_to(&mut w);
    debug_assert_eq!(w.len(), HEADER_LEN + payload_len);
    Ok(w.into_inner())
}

/// Parsed frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub kind: MessageKind,
    pub request_id: u64,
    pub payload_len: u32,
}

pub fn decode_header(buf: &[u8; HEADER_LEN]) -> Result<FrameHeader> {
    let mut r = Reader::new(buf);
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(XufsError::Malformed(format!("unsupported wire version {version}")));
    }
    let kind_byte = r.u8()?;
    let kind = MessageKind::from_u8(kind_byte)
        .ok_or_else(|| XufsError::Malformed(format!("unknown message kind {kind_byte}")))?;
    let request_id = r.u64()?;
    let payload_len = r.u32()?;
    Ok(FrameHeader { kind, request_id, payload_len })
}

pub fn decode_payload(kind: MessageKind, buf: &[u8]) -> Result<Payload> {
    let mut r = Reader::new(buf);
    let p = Payload::decode_from(kind, &mut r)?;
    r.finish()?;
    Ok(p)
}

/// Decodes one full frame; the buffer must contain exactly one message.
pub fn decode_message(buf: &[u8]) -> Result<Message> {
    if buf.len() < HEADER_LEN {
        return Err(XufsError::Malformed("frame shorter than header".into()));
    }
    let header = decode_header(buf[..HEADER_LEN].try_into().unwrap())?;
    let body = &buf[HEADER_LEN..];
    if body.len() != header.payload_len as usize {
        return Err(XufsError::Malformed(format!(
            "payload length mismatch: header says {}, frame has {}",
            header.payload_len,
            body.len()
        )));
    }
    Ok(Message {
        request_id: header.request_id,
        payload: decode_payload(header.kind, body)?,
    })
}
