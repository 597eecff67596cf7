//! Authenticated encryption of frames into 66-byte datagrams.
//!
//! Sealed layout: `nonce(12) ‖ AES-256-GCM(frame)(38+16)`. The nonce is the
//! sender's 4-byte host id followed by a strictly increasing 8-byte send
//! counter, which gives uniqueness two ways: counters never repeat within a
//! sender, and the id prefix keeps senders sharing one key from colliding
//! with each other. The protocol version byte rides along as associated
//! data, so a frame sealed under a different dialect fails authentication
//! outright instead of being misparsed.
//!
//! The opener tracks the highest counter seen per sender and drops anything
//! not strictly newer, which makes recorded datagrams worthless. Lease
//! semantics tolerate this extra strictness: a datagram reordered behind
//! its successor dies here, exactly like a lost datagram, and the protocol
//! already recovers from loss by re-requesting.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use leaseguard_core::{HostId, ProtocolMessage, PROTOCOL_VERSION};

use crate::frame::{decode_frame, encode_frame, FRAME_LEN};
use crate::WireError;

/// Sealed datagram size: nonce + ciphertext + tag.
pub const SEALED_LEN: usize = NONCE_LEN + FRAME_LEN + TAG_LEN;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// All sealing binds the version byte as associated data.
const AAD: [u8; 1] = [PROTOCOL_VERSION];

// ---------------------------------------------------------------------------
// Keys
// ---------------------------------------------------------------------------

/// 256-bit pre-shared key. Deliberately opaque in debug output.
#[derive(Clone, PartialEq, Eq)]
pub struct SealKey([u8; 32]);

impl fmt::Debug for SealKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SealKey(..)")
    }
}

impl SealKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SealKey(bytes)
    }

    /// Parses the 64-hex-character form used in key files and env vars.
    pub fn from_hex(text: &str) -> Result<Self, WireError> {
        let cleaned = text.trim();
        let raw = hex::decode(cleaned).map_err(|_| WireError::BadKeyEncoding)?;
        let bytes: [u8; 32] = raw.try_into().map_err(|_| WireError::BadKeyEncoding)?;
        Ok(SealKey(bytes))
    }

    /// Loads a key file containing the hex form (surrounding whitespace
    /// tolerated).
    pub fn load(path: &Path) -> Result<Self, WireError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_hex(&text)
    }

    /// Reads the key from an environment variable.
    pub fn from_env(var: &str) -> Result<Self, WireError> {
        let text = std::env::var(var).map_err(|_| WireError::KeyEnvMissing(var.to_string()))?;
        Self::from_hex(&text)
    }

    fn cipher(&self) -> Aes256Gcm {
        Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&self.0))
    }
}

// ---------------------------------------------------------------------------
// Sealing
// ---------------------------------------------------------------------------

/// Outbound half: owns this host's send counter.
pub struct Sealer {
    cipher: Aes256Gcm,
    sender: HostId,
    next_counter: u64,
}

impl Sealer {
    pub fn new(key: &SealKey, sender: HostId) -> Self {
        Sealer {
            cipher: key.cipher(),
            sender,
            next_counter: 1,
        }
    }

    /// Encodes, seals, and stamps the next nonce onto one message.
    pub fn seal(&mut self, msg: &ProtocolMessage) -> Result<Vec<u8>, WireError> {
        let frame = encode_frame(msg)?;
        let mut nonce = [0u8; NONCE_LEN];
        nonce[..4].copy_from_slice(&self.sender.to_be_bytes());
        nonce[4..].copy_from_slice(&self.next_counter.to_be_bytes());
        self.next_counter = self
            .next_counter
            .checked_add(1)
            .expect("send counter exhausted");
        let ciphertext = self
            .cipher
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &frame,
                    aad: &AAD,
                },
            )
            .map_err(|_| WireError::SealFailure)?;
        let mut out = Vec::with_capacity(SEALED_LEN);
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&ciphertext);
        debug_assert_eq!(out.len(), SEALED_LEN);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Opening
// ---------------------------------------------------------------------------

/// Inbound half: authenticates, enforces counter freshness per sender,
/// and decodes.
pub struct Opener {
    cipher: Aes256Gcm,
    last_counter: BTreeMap<HostId, u64>,
}

impl Opener {
    pub fn new(key: &SealKey) -> Self {
        Opener {
            cipher: key.cipher(),
            last_counter: BTreeMap::new(),
        }
    }

    /// Opens one sealed datagram. The counter high-water mark moves only
    /// after authentication succeeds, so junk with inflated counters
    /// cannot wedge a sender out.
    pub fn open(&mut self, datagram: &[u8]) -> Result<ProtocolMessage, WireError> {
        if datagram.len() != SEALED_LEN {
            return Err(WireError::BadLength {
                expected: SEALED_LEN,
                got: datagram.len(),
            });
        }
        let (nonce, ciphertext) = datagram.split_at(NONCE_LEN);
        let sender = u32::from_be_bytes(nonce[..4].try_into().unwrap());
        let counter = u64::from_be_bytes(nonce[4..].try_into().unwrap());
        let last = self.last_counter.get(&sender).copied().unwrap_or(0);
        if counter <= last {
            return Err(WireError::Replay {
                sender,
                counter,
                last,
            });
        }
        let frame = self
            .cipher
            .decrypt(
                Nonce::from_slice(nonce),
                Payload {
                    msg: ciphertext,
                    aad: &AAD,
                },
            )
            .map_err(|_| WireError::AuthFailure)?;
        let msg = decode_frame(&frame)?;
        self.last_counter.insert(sender, counter);
        Ok(msg)
    }
}

// ---------------------------------------------------------------------------
