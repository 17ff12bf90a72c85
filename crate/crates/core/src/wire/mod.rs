//! Wire protocol: canonical codec, the twelve message variants and the
//! authenticated envelope.

pub mod auth;
pub mod codec;
pub mod envelope;
pub mod message;

pub use auth::{AuthError, Authenticator, Ed25519Authenticator, HmacAuthenticator, NoopAuthenticator, Scheme};
pub use codec::{DecodeError, EncodeError, Wire};
pub use envelope::{
    open, seal, Envelope, OpenError, ReplayGuard, SealError, SequenceCounter, DEFAULT_FRESHNESS_MS, MAX_BODY_LEN,
    PROTOCOL_VERSION,
};
pub use message::{CrudOp, CrudStatus, Message, MessageType, PolicyChange};
