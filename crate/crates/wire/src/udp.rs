//! Sealed lease messaging over UDP.
//!
//! One datagram carries exactly one sealed frame; there is no stream state
//! to desynchronize and nothing to fragment. Inbound datagrams that fail
//! opening (tampered, replayed, malformed, wrong key) are counted and
//! dropped here — the engines above only ever see authenticated protocol
//! messages, and loss recovery is the protocol's own re-request path.
//!
//! Holders know the granter's address up front. The granter learns each
//! holder's return address from the source of its last authenticated
//! request, which survives holders hopping ports or NATs rebinding.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};

use leaseguard_core::{HostId, ProtocolMessage};
use tracing::debug;

use crate::seal::{Opener, SealKey, Sealer, SEALED_LEN};
use crate::{Endpoint, WireError};

/// Counters for everything the transport swallowed or passed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub sent: u64,
    pub received: u64,
    pub auth_failures: u64,
    pub replays_dropped: u64,
    pub decode_failures: u64,
}

enum Route {
    /// Holder side: everything goes to the granter.
    Fixed(SocketAddr),
    /// Granter side: reply to where each holder's last valid request
    /// came from.
    Learned(BTreeMap<HostId, SocketAddr>),
}

/// A sealed UDP endpoint; implements [`Endpoint`] for the engines.
pub struct UdpEndpoint {
    socket: UdpSocket,
    sealer: Sealer,
    opener: Opener,
    route: Route,
    stats: TransportStats,
}

impl UdpEndpoint {
    /// Endpoint for a holder: binds `bind`, sends to `granter`.
    pub fn holder(
        bind: impl ToSocketAddrs,
        granter: impl ToSocketAddrs,
        key: &SealKey,
        host: HostId,
    ) -> Result<Self, WireError> {
        let granter = granter
            .to_socket_addrs()?
            .next()
            .ok_or(WireError::NoAddress)?;
        Self::new(bind, key, host, Route::Fixed(granter))
    }

    /// Endpoint for the granter: binds `bind`, learns holder addresses.
    pub fn granter(
        bind: impl ToSocketAddrs,
        key: &SealKey,
        host: HostId,
    ) -> Result<Self, WireError> {
        Self::new(bind, key, host, Route::Learned(BTreeMap::new()))
    }

    fn new(
        bind: impl ToSocketAddrs,
        key: &SealKey,
        host: HostId,
        route: Route,
    ) -> Result<Self, WireError> {
        let socket = UdpSocket::bind(bind)?;
        socket.set_nonblocking(true)?;
        Ok(UdpEndpoint {
            socket,
            sealer: Sealer::new(key, host),
            opener: Opener::new(key),
            route,
            stats: TransportStats::default(),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, WireError> {
        Ok(self.socket.local_addr()?)
    }

    pub fn stats(&self) -> TransportStats {
        self.stats
    }
}

impl Endpoint for UdpEndpoint {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), WireError> {
        let dest = match &self.route {
            Route::Fixed(addr) => *addr,
            Route::Learned(map) => *map
                .get(&msg.holder)
                .ok_or(WireError::NoRouteToHolder(msg.holder))?,
        };
        let sealed = self.sealer.seal(msg)?;
        self.socket.send_to(&sealed, dest)?;
        self.stats.sent += 1;
        Ok(())
    }

    fn poll(&mut self) -> Result<Option<ProtocolMessage>, WireError> {
        let mut buf = [0u8; SEALED_LEN * 4];
        loop {
            let (len, src) = match self.socket.recv_from(&mut buf) {
                Ok(got) => got,
                Err(e) if e.kind() == ErrorKind::WouldBlock => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            match self.opener.open(&buf[..len]) {
                Ok(msg) => {
                    if msg.is_request() {
                        if let Route::Learned(map) = &mut self.route {
                            map.insert(msg.holder, src);
                        }
                    }
                    self.stats.received += 1;
                    return Ok(Some(msg));
                }
                Err(WireError::AuthFailure) => {
                    self.stats.auth_failures += 1;
                    debug!(%src, "dropped datagram: authentication failed");
                }
                Err(WireError::Replay { sender, counter, last }) => {
                    self.stats.replays_dropped += 1;
                    debug!(%src, sender, counter, last, "dropped datagram: replay");
                }
                Err(err) => {
                    self.stats.decode_failures += 1;
                    debug!(%src, %err, "dropped datagram: malformed");
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
