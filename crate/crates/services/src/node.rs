//! Identity, keys, sealing and the length-prefixed TCP control transport.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream, UdpSocket};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use rtsabac_core::wire::envelope::{open, seal, OpenError, ReplayGuard, SealError, SequenceCounter};
use rtsabac_core::wire::{
    Authenticator, DecodeError, Ed25519Authenticator, Envelope, HmacAuthenticator, Message, NoopAuthenticator, Scheme,
};
use rtsabac_core::Timestamp;

use crate::config::{key_material, ConfigError, NodeConfig};

/// Upper bound of one control-plane frame.
pub const MAX_FRAME: usize = 1 << 25;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
    #[error("seal: {0}")]
    Seal(#[from] SealError),
    #[error("{0}")]
    Open(#[from] OpenError),
    #[error("no key for peer '{0}'")]
    UnknownPeer(String),
    #[error("unexpected reply {0}")]
    Unexpected(&'static str),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
}

impl NetError {
    /// Metric label for a rejected inbound message.
    pub fn reason(&self) -> &'static str {
        match self {
            NetError::Open(OpenError::AuthFailure) | NetError::Open(OpenError::SchemeMismatch { .. }) => "auth",
            NetError::Open(OpenError::Replay { .. }) => "replay",
            NetError::Open(OpenError::Stale { .. }) => "stale",
            NetError::UnknownPeer(_) => "unknown-peer",
            NetError::Decode(_) => "malformed",
            _ => "io",
        }
    }
}

/// Signing and verification keys by peer.
pub struct Keyring {
    scheme: Scheme,
    default: Option<Arc<dyn Authenticator>>,
    peers: BTreeMap<String, Arc<dyn Authenticator>>,
    own: Option<Arc<dyn Authenticator>>,
}

impl Keyring {
    pub fn from_config(cfg: &NodeConfig) -> Result<Keyring, ConfigError> {
        let scheme = cfg.scheme()?;
        let mut ring = Keyring { scheme, default: None, peers: BTreeMap::new(), own: None };
        match scheme {
            Scheme::Noop => ring.default = Some(Arc::new(NoopAuthenticator)),
            Scheme::HmacSha512 => {
                if let Some(k) = &cfg.key {
                    ring.default = Some(Arc::new(HmacAuthenticator::new(&key_material(k)?)));
                }
                for (id, p) in &cfg.peers {
                    if let Some(k) = &p.key {
                        ring.peers.insert(id.clone(), Arc::new(HmacAuthenticator::new(&key_material(k)?)));
                    }
                }
            }
            Scheme::Ed25519 => {
                if let Some(s) = &cfg.secret {
                    ring.own = Some(Arc::new(Ed25519Authenticator::from_secret(&key32(s, "secret")?)));
                }
                for (id, p) in &cfg.peers {
                    if let Some(k) = &p.public {
                        let v = Ed25519Authenticator::verifier(&key32(k, "public key")?)
                            .map_err(|e| ConfigError::Invalid(format!("peer {id}: {e}")))?;
                        ring.peers.insert(id.clone(), Arc::new(v));
                    }
                }
            }
        }
        Ok(ring)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn signer(&self, peer: &str) -> Option<Arc<dyn Authenticator>> {
        match self.scheme {
            Scheme::Ed25519 => self.own.clone(),
            _ => self.peers.get(peer).or(self.default.as_ref()).cloned(),
        }
    }

    pub fn verifier(&self, peer: &str) -> Option<Arc<dyn Authenticator>> {
        match self.scheme {
            Scheme::Ed25519 => self.peers.get(peer).cloned(),
            _ => self.peers.get(peer).or(self.default.as_ref()).cloned(),
        }
    }
}

fn key32(spec: &str, what: &str) -> Result<[u8; 32], ConfigError> {
    key_material(spec)?
        .try_into()
        .map_err(|v: Vec<u8>| ConfigError::Invalid(format!("{what} must be 32 bytes, got {}", v.len())))
}

/// A service identity able to seal outbound and open inbound envelopes.
pub struct Node {
    pub id: String,
    pub keys: Keyring,
    pub freshness_ms: u64,
    pub timeout: Duration,
    seq: SequenceCounter,
    guard: Mutex<ReplayGuard>,
    /// Serializes sequence allocation with transmission so that peers see
    /// strictly increasing sequence numbers.
    send_lock: Mutex<()>,
}

impl Node {
    pub fn new(cfg: &NodeConfig) -> Result<Node, ConfigError> {
        Ok(Node {
            id: cfg.id.clone(),
            keys: Keyring::from_config(cfg)?,
            freshness_ms: cfg.freshness_ms,
            timeout: Duration::from_millis(cfg.timeout_ms.max(1)),
            seq: SequenceCounter::new(),
            guard: Mutex::new(ReplayGuard::new()),
            send_lock: Mutex::new(()),
        })
    }

    pub fn seal(&self, to: &str, message: Message) -> Result<Vec<u8>, NetError> {
        let auth = self.keys.signer(to).ok_or_else(|| NetError::UnknownPeer(to.to_string()))?;
        let env = Envelope::new(&self.id, self.seq.next(), Timestamp::now(), message);
        Ok(seal(env, auth.as_ref())?.encode().map_err(SealError::from)?)
    }

    /// Decodes and verifies an inbound envelope.
    pub fn open(&self, bytes: &[u8]) -> Result<Envelope, NetError> {
        let env = Envelope::decode(bytes)?;
        let auth = self.keys.verifier(&env.sender).ok_or_else(|| NetError::UnknownPeer(env.sender.clone()))?;
        let mut guard = self.guard.lock().unwrap();
        open(&env, auth.as_ref(), &mut guard, Timestamp::now(), self.freshness_ms)?;
        Ok(env)
    }

    /// Seals `message` for `to` and hands the bytes to `transmit` while
    /// holding the send lock.
    pub fn transmit<T>(
        &self,
        to: &str,
        message: Message,
        transmit: impl FnOnce(&[u8]) -> io::Result<T>,
    ) -> Result<T, NetError> {
        let _g = self.send_lock.lock().unwrap();
        let bytes = self.seal(to, message)?;
        Ok(transmit(&bytes)?)
    }

    /// One-way control message.
    pub fn send(&self, to: &str, addr: SocketAddr, message: Message) -> Result<(), NetError> {
        self.transmit(to, message, |b| {
            let mut s = connect(addr, self.timeout)?;
            write_frame(&mut s, b)
        })
    }

    /// Control request awaiting one sealed reply from `to`.
    pub fn request(&self, to: &str, addr: SocketAddr, message: Message) -> Result<Envelope, NetError> {
        let mut s = self.transmit(to, message, |b| {
            let mut s = connect(addr, self.timeout)?;
            write_frame(&mut s, b)?;
            Ok(s)
        })?;
        let reply = read_frame(&mut s)?;
        let env = self.open(&reply)?;
        if env.sender != to {
            return Err(NetError::UnknownPeer(env.sender));
        }
        Ok(env)
    }

    /// Datagram carrying a sealed message, prefixed with [`DATA_SEALED`].
    pub fn send_datagram(&self, socket: &UdpSocket, to: &str, addr: SocketAddr, message: Message) -> Result<(), NetError> {
        self.transmit(to, message, |b| {
            let mut d = Vec::with_capacity(b.len() + 1);
            d.push(DATA_SEALED);
            d.extend_from_slice(b);
            socket.send_to(&d, addr).map(|_| ())
        })
    }
}

/// Data-plane datagram tags.
pub const DATA_RAW: u8 = 0x00;
pub const DATA_SEALED: u8 = 0x01;

pub fn connect(addr: SocketAddr, timeout: Duration) -> io::Result<TcpStream> {
    let s = TcpStream::connect_timeout(&addr, timeout)?;
    s.set_read_timeout(Some(timeout))?;
    s.set_write_timeout(Some(timeout))?;
    s.set_nodelay(true)?;
    Ok(s)
}

pub fn write_frame(s: &mut impl Write, bytes: &[u8]) -> io::Result<()> {
    let mut out = Vec::with_capacity(bytes.len() + 4);
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
    s.write_all(&out)?;
    s.flush()
}

pub fn read_frame(s: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    s.read_exact(&mut len)?;
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes")));
    }
    let mut buf = vec![0; n];
    s.read_exact(&mut buf)?;
    Ok(buf)
}

/// Health check: an empty frame answered by an empty frame.
pub fn ping(addr: SocketAddr, timeout: Duration) -> bool {
    let Ok(mut s) = connect(addr, timeout) else { return false };
    write_frame(&mut s, &[]).is_ok() && matches!(read_frame(&mut s), Ok(b) if b.is_empty())
}
