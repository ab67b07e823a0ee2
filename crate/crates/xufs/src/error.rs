//! Error types shared across the wire protocol, server, cache, and client.
//!
//! Every failure that can cross the wire has a stable numeric [`ErrorCode`];
//! `XufsError` is the crate-wide error carrying that code plus context.

use std::fmt;
use std::io;

/// Stable numeric codes carried in `ERROR` messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    FrameTooLarge = 1,
    IncompleteTransfer = 2,
    CredentialExpired = 3,
    AuthFailed = 4,
    NotFound = 5,
    NotADirectory = 6,
    AccessDenied = 7,
    SizeChanged = 8,
    Conflict = 9,
    Expired = 10,
    NotOwner = 11,
    NotMaterialized = 12,
    DisconnectedMiss = 13,
    Unreachable = 14,
    ProtocolError = 15,
    Exists = 16,
    NotEmpty = 17,
    IoError = 18,
    Malformed = 19,
    ConnectionLost = 20,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        use ErrorCode::*;
        Some(match v {
            1 => FrameTooLarge,
            2 => IncompleteTransfer,
            3 => CredentialExpired,
            4 => AuthFailed,
            5 => NotFound,
            6 => NotADirectory,
            7 => AccessDenied,
            8 => SizeChanged,
            9 => Conflict,
            10 => Expired,
            11 => NotOwner,
            12 => NotMaterialized,
            13 => DisconnectedMiss,
            14 => Unreachable,
            15 => ProtocolError,
            16 => Exists,
            17 => NotEmpty,
            18 => IoError,
            19 => Malformed,
            20 => ConnectionLost,
            _ => return None,
        })
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum XufsError {
    #[error("frame too large: {size} bytes exceeds max {max}")]
    FrameTooLarge { size: usize, max: usize },
    #[error("incomplete transfer: {0}")]
    IncompleteTransfer(String),
    #[error("credential expired")]
    CredentialExpired,
    #[error("authentication failed: {0}")]
    AuthFailed(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("not a directory: {0}")]
    NotADirectory(String),
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("size changed: {0}")]
    SizeChanged(String),
    #[error("lock conflict: {0}")]
    Conflict(String),
    #[error("lease expired")]
    Expired,
    #[error("lease not owned by caller")]
    NotOwner,
    #[error("not materialized: {0}")]
    NotMaterialized(String),
    #[error("disconnected and not cached: {0}")]
    DisconnectedMiss(String),
    #[error("server unreachable: {0}")]
    Unreachable(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("already exists: {0}")]
    Exists(String),
    #[error("directory not empty: {0}")]
    NotEmpty(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("connection lost")]
    ConnectionLost,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl XufsError {
    pub fn code(&self) -> ErrorCode {
        use XufsError::*;
        match self {
            FrameTooLarge { .. } => ErrorCode::FrameTooLarge,
            IncompleteTransfer(_) => ErrorCode::IncompleteTransfer,
            CredentialExpired => ErrorCode::CredentialExpired,
            AuthFailed(_) => ErrorCode::AuthFailed,
            NotFound(_) => ErrorCode::NotFound,
            NotADirectory(_) => ErrorCode::NotADirectory,
            AccessDenied(_) => ErrorCode::AccessDenied,
            SizeChanged(_) => ErrorCode::SizeChanged,
            Conflict(_) => ErrorCode::Conflict,
            Expired => ErrorCode::Expired,
            NotOwner => ErrorCode::NotOwner,
            NotMaterialized(_) => ErrorCode::NotMaterialized,
            DisconnectedMiss(_) => ErrorCode::DisconnectedMiss,
            Unreachable(_) => ErrorCode::Unreachable,
            ProtocolError(_) => ErrorCode::ProtocolError,
            Exists(_) => ErrorCode::Exists,
            NotEmpty(_) => ErrorCode::NotEmpty,
            Malformed(_) => ErrorCode::Malformed,
            ConnectionLost => ErrorCode::ConnectionLost,
            Io(_) => ErrorCode::IoError,
        }
    }

    /// Reconstructs an error from a wire `ERROR` payload.
    pub fn from_wire(code: ErrorCode, detail: String) -> Self {
        use ErrorCode as C;
        match code {
            C::FrameTooLarge => XufsError::FrameTooLarge { size: 0, max: 0 },
            C::IncompleteTransfer => XufsError::IncompleteTransfer(detail),
            C::CredentialExpired => XufsError::CredentialExpired,
            C::AuthFailed => XufsError::AuthFailed(detail),
            C::NotFound => XufsError::NotFound(detail),
            C::NotADirectory => XufsError::NotADirectory(detail),
            C::AccessDenied => XufsError::AccessDenied(detail),
            C::SizeChanged => XufsError::SizeChanged(detail),
            C::Conflict => XufsError::Conflict(detail),
            C::Expired => XufsError::Expired,
            C::NotOwner => XufsError::NotOwner,
            C::NotMaterialized => XufsError::NotMaterialized(detail),
            C::DisconnectedMiss => XufsError::DisconnectedMiss(detail),
            C::Unreachable => XufsError::Unreachable(detail),
            C::ProtocolError => XufsError::ProtocolError(detail),
            C::Exists => XufsError::Exists(detail),
            C::NotEmpty => XufsError::NotEmpty(detail),
            C::IoError => XufsError::Io(io::Error::other(detail)),
            C::Malformed => XufsError::Malformed(detail),
            C::ConnectionLost => XufsError::ConnectionLost,
        }
    }
}

pub type Result<T> = std::result::Result<T, XufsError>;
