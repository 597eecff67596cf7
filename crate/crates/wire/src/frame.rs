//! Fixed 38-byte plaintext frame.
//!
//! Layout, all integers big-endian:
//!
//! ```text
//! offset  size  field
//!      0     1  version          (0x01)
//!      1     1  msg_type         (0x01 ReqLease, 0x02 Granted, 0x03 NotGranted)
//!      2     4  sender_id        (the holder this exchange concerns)
//!      6     8  lease_id
//!     14     8  epoch_number
//!     22     8  timestamp_ns     (holder's request send time)
//!     30     8  send_timestamp_ns (responder's send time; zero on requests)
//! ```
//!
//! Decoding is total: every 38-byte string either decodes to a valid
//! message or is rejected with a reason — unknown discriminants and a
//! request carrying a responder timestamp are rejected rather than guessed
//! at, so a peer speaking a newer dialect can never be half-understood.

use leaseguard_core::{MessageKind, ProtocolMessage, PROTOCOL_VERSION};

use crate::WireError;

/// Size of the plaintext frame.
pub const FRAME_LEN: usize = 38;

const TYPE_REQ_LEASE: u8 = 0x01;
const TYPE_GRANTED: u8 = 0x02;
const TYPE_NOT_GRANTED: u8 = 0x03;

fn kind_to_byte(kind: MessageKind) -> u8 {
    match kind {
        MessageKind::ReqLease => TYPE_REQ_LEASE,
        MessageKind::Granted => TYPE_GRANTED,
        MessageKind::NotGranted => TYPE_NOT_GRANTED,
    }
}

/// Serializes a message into the fixed frame.
pub fn encode_frame(msg: &ProtocolMessage) -> Result<[u8; FRAME_LEN], WireError> {
    if msg.kind == MessageKind::ReqLease && msg.send_timestamp != 0 {
        return Err(WireError::RequestWithResponderTimestamp);
    }
    let mut buf = [0u8; FRAME_LEN];
    buf[0] = PROTOCOL_VERSION;
    buf[1] = kind_to_byte(msg.kind);
    buf[2..6].copy_from_slice(&msg.holder.to_be_bytes());
    buf[6..14].copy_from_slice(&msg.lease_id.to_be_bytes());
    buf[14..22].copy_from_slice(&msg.epoch_number.to_be_bytes());
    buf[22..30].copy_from_slice(&msg.timestamp.to_be_bytes());
    buf[30..38].copy_from_slice(&msg.send_timestamp.to_be_bytes());
    Ok(buf)
}

/// Parses a frame. Rejects wrong lengths, unknown discriminants, and
/// requests with a nonzero responder timestamp.
pub fn decode_frame(bytes: &[u8]) -> Result<ProtocolMessage, WireError> {
    if bytes.len() != FRAME_LEN {
        return Err(WireError::BadLength {
            expected: FRAME_LEN,
            got: bytes.len(),
        });
    }
    if bytes[0] != PROTOCOL_VERSION {
        return Err(WireError::UnknownVersion(bytes[0]));
    }
    let kind = match bytes[1] {
        TYPE_REQ_LEASE => MessageKind::ReqLease,
        TYPE_GRANTED => MessageKind::Granted,
        TYPE_NOT_GRANTED => MessageKind::NotGranted,
        other => return Err(WireError::UnknownMsgType(other)),
    };
    let msg = ProtocolMessage {
        kind,
        holder: u32::from_be_bytes(bytes[2..6].try_into().unwrap()),
        lease_id: u64::from_be_bytes(bytes[6..14].try_into().unwrap()),
        epoch_number: u64::from_be_bytes(bytes[14..22].try_into().unwrap()),
        timestamp: u64::from_be_bytes(bytes[22..30].try_into().unwrap()),
        send_timestamp: u64::from_be_bytes(bytes[30..38].try_into().unwrap()),
    };
    if msg.kind == MessageKind::ReqLease && msg.send_timestamp != 0 {
        return Err(WireError::RequestWithResponderTimestamp);
    }
    Ok(msg)
}

// ---------------------------------------------------------------------------
