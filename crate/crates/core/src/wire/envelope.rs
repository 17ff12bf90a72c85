//! Authenticated envelope.
//!
//! ```text
//! version   u8      = 1
//! msg-type  u8      1..=12
//! sender    u16 len + UTF-8
//! sequence  u64
//! timestamp u64     milliseconds
//! body      u24 len + body bytes
//! scheme    u8      0 noop, 1 hmac-sha512, 2 ed25519
//! tag       u16 len + tag bytes
//! ```
//!
//! The tag covers every byte from `version` through the end of `body`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use super::auth::{AuthError, Authenticator, Scheme};
use super::codec::{DecodeError, EncodeError, Reader, Writer};
use super::message::{Message, MessageType};
use crate::Timestamp;

pub const PROTOCOL_VERSION: u8 = 1;
pub const MAX_BODY_LEN: usize = (1 << 24) - 1;
pub const DEFAULT_FRESHNESS_MS: u64 = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub version: u8,
    pub sender: String,
    pub sequence: u64,
    pub timestamp: Timestamp,
    pub message: Message,
    pub scheme: Scheme,
    pub tag: Vec<u8>,
}

impl Envelope {
    /// Unsealed envelope.
    pub fn new(sender: &str, sequence: u64, timestamp: Timestamp, message: Message) -> Self {
        Envelope {
            version: PROTOCOL_VERSION,
            sender: sender.to_string(),
            sequence,
            timestamp,
            message,
            scheme: Scheme::Noop,
            tag: Vec::new(),
        }
    }

    pub fn message_type(&self) -> MessageType {
        self.message.message_type()
    }

    fn write_signed(&self, w: &mut Writer) {
        w.u8(self.version);
        w.u8(self.message_type().code());
        w.str(&self.sender);
        w.u64(self.sequence);
        w.u64(self.timestamp.0);
        let mut body = Writer::new();
        self.message.encode_body(&mut body);
        match body.finish() {
            Ok(b) if b.len() > MAX_BODY_LEN => w.fail(EncodeError::BodyTooLarge(b.len())),
            Ok(b) => {
                w.u24(b.len() as u32);
                w.raw(&b);
            }
            Err(e) => w.fail(e),
        }
    }

    /// Bytes covered by the tag.
    pub fn signed_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = Writer::new();
        self.write_signed(&mut w);
        w.finish()
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = Writer::new();
        self.write_signed(&mut w);
        w.u8(self.scheme.code());
        w.bytes16("tag", &self.tag);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Envelope, DecodeError> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != PROTOCOL_VERSION {
            return Err(DecodeError::UnknownVersion(version));
        }
        let code = r.u8()?;
        let ty = MessageType::from_code(code).ok_or(DecodeError::UnknownMessageType(code))?;
        let sender = r.str()?;
        let sequence = r.u64()?;
        let timestamp = r.timestamp()?;
        let len = r.u24()? as usize;
        let message = Message::decode_body(ty, r.take_len(len)?)?;
        let code = r.u8()?;
        let scheme = Scheme::from_code(code).ok_or_else(|| DecodeError::Invalid(format!("unknown scheme {code}")))?;
        let tag = r.bytes16()?.to_vec();
        r.finish()?;
        Ok(Envelope { version, sender, sequence, timestamp, message, scheme, tag })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SealError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Auth(#[from] AuthError),
}

/// Sets scheme and tag.
pub fn seal(mut envelope: Envelope, auth: &dyn Authenticator) -> Result<Envelope, SealError> {
    envelope.scheme = auth.scheme();
    envelope.tag = auth.sign(&envelope.signed_bytes()?)?;
    Ok(envelope)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpenError {
    #[error("scheme {got} where {expected} is configured")]
    SchemeMismatch { expected: Scheme, got: Scheme },
    #[error("authentication failed")]
    AuthFailure,
    #[error("replayed sequence {got} from '{sender}' (last {last})")]
    Replay { sender: String, last: u64, got: u64 },
    #[error("timestamp {timestamp} outside freshness window at {now}")]
    Stale { timestamp: Timestamp, now: Timestamp },
}

/// Highest accepted sequence per sender.
#[derive(Debug, Default)]
pub struct ReplayGuard {
    last: HashMap<String, u64>,
}

impl ReplayGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&self, sender: &str, sequence: u64) -> Result<(), OpenError> {
        match self.last.get(sender) {
            Some(&last) if sequence <= last => {
                Err(OpenError::Replay { sender: sender.to_string(), last, got: sequence })
            }
            _ => Ok(()),
        }
    }

    pub fn accept(&mut self, sender: &str, sequence: u64) -> Result<(), OpenError> {
        self.check(sender, sequence)?;
        self.last.insert(sender.to_string(), sequence);
        Ok(())
    }
}

/// Verifies tag, freshness and sequence, in that order. The guard only
/// advances when all checks pass.
pub fn open(
    envelope: &Envelope,
    auth: &dyn Authenticator,
    guard: &mut ReplayGuard,
    now: Timestamp,
    freshness_ms: u64,
) -> Result<(), OpenError> {
    if envelope.scheme != auth.scheme() {
        return Err(OpenError::SchemeMismatch { expected: auth.scheme(), got: envelope.scheme });
    }
    let signed = envelope.signed_bytes().map_err(|_| OpenError::AuthFailure)?;
    if !auth.verify(&signed, &envelope.tag) {
        return Err(OpenError::AuthFailure);
    }
    if envelope.timestamp.0.abs_diff(now.0) > freshness_ms {
        return Err(OpenError::Stale { timestamp: envelope.timestamp, now });
    }
    guard.accept(&envelope.sender, envelope.sequence)
}

/// Per-sender sequence source. Starts at the wall clock in microseconds so
/// that a restarted sender stays ahead of what its peers have seen.
#[derive(Debug)]
pub struct SequenceCounter(AtomicU64);

impl SequenceCounter {
    pub fn new() -> Self {
        let micros = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(1);
        SequenceCounter(AtomicU64::new(micros))
    }

    pub fn starting_at(first: u64) -> Self {
        SequenceCounter(AtomicU64::new(first))
    }

    pub fn next(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}

impl Default for SequenceCounter {
    fn default() -> Self {
        Self::new()
    }
}
