//! Envelope authenticators.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use hmac::{Hmac, Mac};
use sha2::Sha512;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Noop = 0,
    HmacSha512 = 1,
    Ed25519 = 2,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Noop, Scheme::HmacSha512, Scheme::Ed25519];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Scheme> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Noop => "noop",
            Scheme::HmacSha512 => "hmac-sha512",
            Scheme::Ed25519 => "ed25519",
        }
    }

    /// Label used in benchmark reports.
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Noop => "NoOp",
            Scheme::HmacSha512 => "HMAC",
            Scheme::Ed25519 => "Ed25519",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "noop" => Ok(Scheme::Noop),
            "hmac" | "hmac-sha512" => Ok(Scheme::HmacSha512),
            "ed25519" => Ok(Scheme::Ed25519),
            _ => Err(format!("unknown authentication scheme '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("no signing key configured")]
    NoSigningKey,
    #[error("invalid key material: {0}")]
    BadKey(String),
}

pub trait Authenticator: Send + Sync {
    fn scheme(&self) -> Scheme;
    fn sign(&self, message: &[u8]) -> Result<Vec<u8>, AuthError>;
    fn verify(&self, message: &[u8], tag: &[u8]) -> bool;
}

/// Signs nothing and accepts only the empty tag.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoopAuthenticator;

impl Authenticator for NoopAuthenticator {
    fn scheme(&self) -> Scheme {
        Scheme::Noop
    }

    fn sign(&self, _: &[u8]) -> Result<Vec<u8>, AuthError> {
        Ok(Vec::new())
    }

    fn verify(&self, _: &[u8], tag: &[u8]) -> bool {
        tag.is_empty()
    }
}

/// HMAC-SHA-512 with a pre-shared key.
#[derive(Clone)]
pub struct HmacAuthenticator {
    key: Vec<u8>,
}

impl HmacAuthenticator {
    pub fn new(key: &[u8]) -> Self {
        HmacAuthenticator { key: key.to_vec() }
    }

    fn mac(&self) -> Hmac<Sha512> {
        <Hmac<Sha512> as Mac>::new_from_slice(&self.key).expect("hmac accepts any key length")
    }
}

impl fmt::Debug for HmacAuthenticator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HmacAuthenticator").finish_non_exhaustive()
    }
}

impl Authenticator for HmacAuthenticator {
    fn scheme(&self) -> Scheme {
        Scheme::HmacSha512
    }

    fn sign(&self, message: &[u8]) -> Result<Vec<u8>, AuthError> {
        let mut mac = self.mac();
        mac.update(message);
        Ok(mac.finalize().into_bytes().to_vec())
    }

    fn verify(&self, message: &[u8], tag: &[u8]) -> bool {
        let mut mac = self.mac();
        mac.update(message);
        mac.verify_slice(tag).is_ok()
    }
}

/// Ed25519 signatures. A verifier-only instance holds just the public key.
#[derive(Clone)]
pub struct Ed25519Authenticator {
    signing: Option<SigningKey>,
    verifying: VerifyingKey,
}

impl Ed25519Authenticator {
    pub fn from_secret(secret: &[u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(secret);
        Ed25519Authenticator { verifying: signing.verifying_key(), signing: Some(signing) }
    }

    pub fn verifier(public: &[u8; 32]) -> Result<Self, AuthError> {
        let verifying = VerifyingKey::from_bytes(public).map_err(|e| AuthError::BadKey(e.to_string()))?;
        Ok(Ed25519Authenticator { signing: None, verifying })
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.verifying.to_bytes()
    }
}

impl fmt::Debug for Ed25519Authenticator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ed25519Authenticator")
            .field("public", &self.verifying)
            .field("can_sign", &self.signing.is_some())
            .finish()
    }
}

impl Authenticator for Ed25519Authenticator {
    fn scheme(&self) -> Scheme {
        Scheme::Ed25519
    }

    fn sign(&self, message: &[u8]) -> Result<Vec<u8>, AuthError> {
        let key = self.signing.as_ref().ok_or(AuthError::NoSigningKey)?;
        Ok(key.sign(message).to_bytes().to_vec())
    }

    fn verify(&self, message: &[u8], tag: &[u8]) -> bool {
        let Ok(sig) = Signature::from_slice(tag) else {
            return false;
        };
        self.verifying.verify_strict(message, &sig).is_ok()
    }
}
