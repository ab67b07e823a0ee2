//! Challenge-response authentication over a short-lived `<key, phrase>` pair.
//!
//! The server sends a random nonce; the client proves possession of the
//! phrase by returning HMAC-SHA256(phrase, nonce || key). The phrase itself
//! never crosses the wire.

use std::fmt;
use std::time::SystemTime;

use sha2::{Digest, Sha256};

use crate::error::{Result, XufsError};

pub const MIN_NONCE_LEN: usize = 16;
pub const NONCE_LEN: usize = 32;

/// Short-lived secret pair identifying one mount session.
#[derive(Clone)]
pub struct AuthCredential {
    pub key: String,
    pub phrase: Vec<u8>,
    pub expiry: SystemTime,
}

impl AuthCredential {
    pub fn new(key: impl Into<String>, phrase: impl Into<Vec<u8>>, expiry: SystemTime) -> Self {
        AuthCredential { key: key.into(), phrase: phrase.into(), expiry }
    }

    /// A credential that never expires, for tests and long-running servers.
    pub fn long_lived(key: impl Into<String>, phrase: impl Into<Vec<u8>>) -> Self {
        AuthCredential::new(
            key,
            phrase,
            SystemTime::UNIX_EPOCH + std::time::Duration::from_secs(u32::MAX as u64),
        )
    }
}

// The phrase is a secret; keep it out of debug output and logs.
impl fmt::Debug for AuthCredential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthCredential")
            .field("key", &self.key)
            .field("phrase", &"<redacted>")
            .field("expiry", &self.expiry)
            .finish()
    }
}

/// Keyed digest of `nonce` under the credential's phrase. Deterministic,
/// fixed 32-byte output, infeasible to produce without the phrase.
pub fn challenge_digest(cred: &AuthCredential, nonce: &[u8], now: SystemTime) -> Result<[u8; 32]> {
    if now > cred.expiry {
        return Err(XufsError::CredentialExpired);
    }
    if nonce.len() < MIN_NONCE_LEN {
        return Err(XufsError::ProtocolError(format!(
            "nonce too short: {} < {MIN_NONCE_LEN}",
            nonce.len()
        )));
    }
    let mut msg = Vec::with_capacity(nonce.len() + cred.key.len());
    msg.extend_from_slice(nonce);
    msg.extend_from_slice(cred.key.as_bytes());
    Ok(hmac_sha256(&cred.phrase, &msg))
}

/// Constant-time comparison of two digests.
pub fn digests_equal(a: &[u8; 32], b: &[u8; 32]) -> bool {
    let mut diff = 0u8;
    for (x, y) in a.iter().zip(b.iter()) {
        diff |= x ^ y;
    }
    diff == 0
}

/// RFC 2104 HMAC over SHA-256.
fn hmac_sha256(key: &[u8], msg: &[u8]) -> [u8; 32] {
    const BLOCK: usize = 64;
    let mut key_block = [0u8; BLOCK];
    if key.len() > BLOCK {
        let digest = Sha256::digest(key);
        key_block[..32].copy_from_slice(&digest);
    } else {
        key_block[..key.len()].copy_from_slice(key);
    }
    let mut inner = Sha256::new();
    let ipad: Vec<u8> = key_block.iter().map(|b| b ^ 0x36).collect();
    inner.update(&ipad);
    inner.update(msg);
    let inner_digest = inner.finalize();

    let mut outer = Sha256::new();
    let opad: Vec<u8> = key_block.iter().map(|b| b ^ 0x5c).collect();
    outer.update(&opad);
    outer.update(inner_digest);
    outer.finalize().into()
}
