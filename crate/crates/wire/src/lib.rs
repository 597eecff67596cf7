//! Transport layer for the lease protocol: a fixed 38-byte frame codec,
//! AES-256-GCM sealing with replay defense, and a UDP endpoint.
//!
//! The [`Endpoint`] trait is the seam the engines are written against:
//! [`UdpEndpoint`] implements it for real networks, and the simulator
//! provides a virtual-network implementation with the same semantics
//! (datagrams may be delayed, dropped, or duplicated — never corrupted
//! undetectably).

mod frame;
mod seal;
mod udp;

pub use frame::{decode_frame, encode_frame, FRAME_LEN};
pub use seal::{Opener, SealKey, Sealer, NONCE_LEN, SEALED_LEN, TAG_LEN};
pub use udp::{TransportStats, UdpEndpoint};

use leaseguard_core::{HostId, ProtocolMessage};

/// Datagram-style message port: fire-and-forget sends, non-blocking polls.
pub trait Endpoint {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), WireError>;

    /// Returns the next authenticated inbound message, or `None` when
    /// nothing deliverable is pending.
    fn poll(&mut self) -> Result<Option<ProtocolMessage>, WireError>;
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("wrong length: expected {expected} bytes, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("unknown protocol version {0:#04x}")]
    UnknownVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownMsgType(u8),
    #[error("requests must not carry a responder timestamp")]
    RequestWithResponderTimestamp,
    #[error("datagram failed authentication")]
    AuthFailure,
    #[error("sealing failed")]
    SealFailure,
    #[error("replayed counter {counter} from sender {sender} (newest seen {last})")]
    Replay { sender: HostId, counter: u64, last: u64 },
    #[error("key is not 64 hex characters")]
    BadKeyEncoding,
    #[error("key environment variable {0} is not set")]
    KeyEnvMissing(String),
    #[error("no address resolved")]
    NoAddress,
    #[error("no return route learned for holder {0}")]
    NoRouteToHolder(HostId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for WireError {
    fn eq(&self, other: &Self) -> bool {
        use WireError::*;
        match (self, other) {
            (
                BadLength { expected: a, got: b },
                BadLength { expected: c, got: d },
            ) => a == c && b == d,
            (UnknownVersion(a), UnknownVersion(b)) => a == b,
            (UnknownMsgType(a), UnknownMsgType(b)) => a == b,
            (RequestWithResponderTimestamp, RequestWithResponderTimestamp) => true,
            (AuthFailure, AuthFailure) => true,
            (SealFailure, SealFailure) => true,
            (
                Replay { sender: a, counter: b, last: c },
                Replay { sender: d, counter: e, last: f },
            ) => a == d && b == e && c == f,
            (BadKeyEncoding, BadKeyEncoding) => true,
            (KeyEnvMissing(a), KeyEnvMissing(b)) => a == b,
            (NoAddress, NoAddress) => true,
            (NoRouteToHolder(a), NoRouteToHolder(b)) => a == b,
            (Io(a), Io(b)) => a.kind() == b.kind(),
            _ => false,
        }
    }
}
