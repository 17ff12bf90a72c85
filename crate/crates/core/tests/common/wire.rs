//! Random envelopes, the HMAC construction written out over SHA-512, and
//! golden fixture generation.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha512};

use rtsabac_core::decision::AccessDecision;
use rtsabac_core::pattern::FlowPattern;
use rtsabac_core::policy::{Action, AttrValue, AttributeBinding, AuxiliaryPredicate, CmpOp, Policy};
use rtsabac_core::wire::{
    seal, Authenticator, CrudOp, CrudStatus, Ed25519Authenticator, Envelope, HmacAuthenticator, Message, MessageType,
    NoopAuthenticator, PolicyChange,
};
use rtsabac_core::Timestamp;

use super::{random_flow, random_frame, random_request};

pub const KEY: &[u8] = b"substation-shared-key";
pub const SECRET: [u8; 32] = [7; 32];

pub fn hmac_oracle(key: &[u8], msg: &[u8]) -> Vec<u8> {
    let mut k = [0u8; 128];
    if key.len() > 128 {
        k[..64].copy_from_slice(&Sha512::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let inner = Sha512::new().chain_update(k.map(|b| b ^ 0x36)).chain_update(msg).finalize();
    Sha512::new().chain_update(k.map(|b| b ^ 0x5c)).chain_update(inner).finalize().to_vec()
}

pub fn word(rng: &mut StdRng) -> String {
    let n = rng.gen_range(1..8);
    (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

pub fn value(rng: &mut StdRng) -> AttrValue {
    match rng.gen_range(0..4) {
        0 => AttrValue::Bool(rng.gen()),
        1 => AttrValue::Int(rng.gen()),
        2 => AttrValue::Decimal(rng.gen_range(-1e6..1e6)),
        _ => AttrValue::Str(word(rng)),
    }
}

pub fn policy(rng: &mut StdRng) -> Policy {
    let aux = (0..rng.gen_range(0..3))
        .map(|i| AuxiliaryPredicate::compare(&format!("a{i}"), &word(rng), *CmpOp::ALL.choose(rng).unwrap(), value(rng)))
        .collect();
    let hops: Vec<String> = (0..rng.gen_range(0..3)).map(|_| word(rng)).collect();
    Policy::new(&word(rng), if rng.gen() { Action::Grant } else { Action::Deny }, random_flow(rng))
        .with_auxiliary(aux)
        .with_nexthop(hops.iter().map(String::as_str))
        .with_validity(rng.gen_range(1..1_000_000))
}

pub fn binding(rng: &mut StdRng) -> AttributeBinding {
    let from = rng.gen_range(0..1 << 40);
    AttributeBinding::new(&word(rng), value(rng), Timestamp(from), Timestamp(from + rng.gen_range(0..1 << 20)))
}

pub fn decision(rng: &mut StdRng) -> AccessDecision {
    let from = rng.gen_range(0..1 << 40);
    let flows: Vec<FlowPattern> = (0..rng.gen_range(1..3)).map(|_| random_flow(rng)).collect();
    let hops: BTreeSet<String> = (0..rng.gen_range(0..3)).map(|_| word(rng)).collect();
    let origins: BTreeSet<String> = (0..rng.gen_range(1..3)).map(|_| word(rng)).collect();
    let action = if rng.gen() { Action::Grant } else { Action::Deny };
    AccessDecision::new(flows, action, hops, Timestamp(from), Timestamp(from + rng.gen_range(0..100_000)), origins)
}

pub fn list<T>(rng: &mut StdRng, max: usize, f: fn(&mut StdRng) -> T) -> Vec<T> {
    (0..rng.gen_range(0..=max)).map(|_| f(rng)).collect()
}

pub fn message(rng: &mut StdRng, ty: MessageType) -> Message {
    match ty {
        MessageType::PolicyCrudRequest => Message::PolicyCrudRequest {
            op: *CrudOp::ALL.choose(rng).unwrap(),
            id: word(rng),
            policy: rng.gen_bool(0.5).then(|| policy(rng)),
        },
        MessageType::PolicyCrudResponse => Message::PolicyCrudResponse {
            status: *CrudStatus::ALL.choose(rng).unwrap(),
            revision: rng.gen(),
            policy: rng.gen_bool(0.5).then(|| policy(rng)),
            details: list(rng, 3, word),
        },
        MessageType::PolicyExchangeIncremental => Message::PolicyExchangeIncremental {
            changes: (0..rng.gen_range(0..3))
                .map(|_| PolicyChange { op: *CrudOp::ALL.choose(rng).unwrap(), policy: policy(rng) })
                .collect(),
            revision: rng.gen(),
        },
        MessageType::PolicyExchangeRequest => Message::PolicyExchangeRequest,
        MessageType::PolicyExchangeComplete => Message::PolicyExchangeComplete { policies: list(rng, 3, policy), revision: rng.gen() },
        MessageType::AttributeRequest => Message::AttributeRequest { keys: list(rng, 4, word) },
        MessageType::AttributeResolution => Message::AttributeResolution { bindings: list(rng, 4, binding), unknown: list(rng, 2, word) },
        MessageType::AccessRequest => Message::AccessRequest { request: random_request(rng) },
        MessageType::SessionInitialization => Message::SessionInitialization { decisions: list(rng, 3, decision) },
        MessageType::AccessVerificationRequest => Message::AccessVerificationRequest { flow: random_flow(rng) },
        MessageType::AccessVerificationResponse => Message::AccessVerificationResponse { decisions: list(rng, 3, decision) },
        MessageType::PayloadExchangeRequest => Message::PayloadExchangeRequest { frame: random_frame(rng).build() },
    }
}

pub fn envelope(rng: &mut StdRng) -> Envelope {
    let ty = *MessageType::ALL.choose(rng).unwrap();
    Envelope::new(&word(rng), rng.gen(), Timestamp(rng.gen_range(0..1 << 45)), message(rng, ty))
}

pub fn authenticators() -> Vec<Box<dyn Authenticator>> {
    vec![
        Box::new(NoopAuthenticator),
        Box::new(HmacAuthenticator::new(KEY)),
        Box::new(Ed25519Authenticator::from_secret(&SECRET)),
    ]
}

/// The sealed envelope stored as the golden fixture for `ty`.
pub fn golden(ty: MessageType) -> Envelope {
    let mut rng = StdRng::seed_from_u64(u64::from(ty.code()));
    let env = Envelope::new("golden", 42, Timestamp(1_700_000_000_000), message(&mut rng, ty));
    seal(env, &HmacAuthenticator::new(KEY)).expect("hmac signs")
}

pub fn golden_path(dir: &std::path::Path, ty: MessageType) -> std::path::PathBuf {
    dir.join(format!("{:02}-{}.hex", ty.code(), ty.name()))
}
