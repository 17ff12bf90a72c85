//! Protocol message variants and their bodies.

use std::fmt;

use super::codec::{decode_list, encode_list, DecodeError, Reader, Wire, Writer};
use crate::decision::AccessDecision;
use crate::pattern::{AccessRequestPattern, FlowPattern};
use crate::policy::{AttributeBinding, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageType {
    PolicyCrudRequest = 1,
    PolicyCrudResponse = 2,
    PolicyExchangeIncremental = 3,
    PolicyExchangeRequest = 4,
    PolicyExchangeComplete = 5,
    AttributeRequest = 6,
    AttributeResolution = 7,
    AccessRequest = 8,
    SessionInitialization = 9,
    AccessVerificationRequest = 10,
    AccessVerificationResponse = 11,
    PayloadExchangeRequest = 12,
}

impl MessageType {
    pub const ALL: [MessageType; 12] = [
        MessageType::PolicyCrudRequest,
        MessageType::PolicyCrudResponse,
        MessageType::PolicyExchangeIncremental,
        MessageType::PolicyExchangeRequest,
        MessageType::PolicyExchangeComplete,
        MessageType::AttributeRequest,
        MessageType::AttributeResolution,
        MessageType::AccessRequest,
        MessageType::SessionInitialization,
        MessageType::AccessVerificationRequest,
        MessageType::AccessVerificationResponse,
        MessageType::PayloadExchangeRequest,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<MessageType> {
        Self::ALL.get((c as usize).wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::PolicyCrudRequest => "policy-crud-request",
            MessageType::PolicyCrudResponse => "policy-crud-response",
            MessageType::PolicyExchangeIncremental => "policy-exchange-incremental",
            MessageType::PolicyExchangeRequest => "policy-exchange-request",
            MessageType::PolicyExchangeComplete => "policy-exchange-complete",
            MessageType::AttributeRequest => "attribute-request",
            MessageType::AttributeResolution => "attribute-resolution",
            MessageType::AccessRequest => "access-request",
            MessageType::SessionInitialization => "session-initialization",
            MessageType::AccessVerificationRequest => "access-verification-request",
            MessageType::AccessVerificationResponse => "access-verification-response",
            MessageType::PayloadExchangeRequest => "payload-exchange-request",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CrudOp {
    Create = 1,
    Read = 2,
    Update = 3,
    Delete = 4,
}

impl CrudOp {
    pub const ALL: [CrudOp; 4] = [CrudOp::Create, CrudOp::Read, CrudOp::Update, CrudOp::Delete];

    pub fn name(self) -> &'static str {
        match self {
            CrudOp::Create => "create",
            CrudOp::Read => "read",
            CrudOp::Update => "update",
            CrudOp::Delete => "delete",
        }
    }
}

impl Wire for CrudOp {
    fn encode(&self, w: &mut Writer) {
        w.u8(*self as u8);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let c = r.u8()?;
        Self::ALL
            .get((c as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| DecodeError::Invalid(format!("unknown crud op {c}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CrudStatus {
    Ok = 0,
    NotFound = 1,
    Duplicate = 2,
    ValidationFailed = 3,
    Unauthorized = 4,
    Error = 5,
}

impl CrudStatus {
    pub const ALL: [CrudStatus; 6] = [
        CrudStatus::Ok,
        CrudStatus::NotFound,
        CrudStatus::Duplicate,
        CrudStatus::ValidationFailed,
        CrudStatus::Unauthorized,
        CrudStatus::Error,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CrudStatus::Ok => "ok",
            CrudStatus::NotFound => "not-found",
            CrudStatus::Duplicate => "duplicate",
            CrudStatus::ValidationFailed => "validation-failed",
            CrudStatus::Unauthorized => "unauthorized",
            CrudStatus::Error => "error",
        }
    }
}

impl Wire for CrudStatus {
    fn encode(&self, w: &mut Writer) {
        w.u8(*self as u8);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let c = r.u8()?;
        Self::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| DecodeError::Invalid(format!("unknown crud status {c}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyChange {
    pub op: CrudOp,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    PolicyCrudRequest { op: CrudOp, id: String, policy: Option<Policy> },
    PolicyCrudResponse { status: CrudStatus, revision: u64, policy: Option<Policy>, details: Vec<String> },
    PolicyExchangeIncremental { changes: Vec<PolicyChange>, revision: u64 },
    PolicyExchangeRequest,
    PolicyExchangeComplete { policies: Vec<Policy>, revision: u64 },
    AttributeRequest { keys: Vec<String> },
    AttributeResolution { bindings: Vec<AttributeBinding>, unknown: Vec<String> },
    AccessRequest { request: AccessRequestPattern },
    SessionInitialization { decisions: Vec<AccessDecision> },
    AccessVerificationRequest { flow: FlowPattern },
    AccessVerificationResponse { decisions: Vec<AccessDecision> },
    PayloadExchangeRequest { frame: Vec<u8> },
}

fn encode_opt<T: Wire>(v: &Option<T>, w: &mut Writer) {
    match v {
        None => w.u8(0),
        Some(x) => {
            w.u8(1);
            x.encode(w);
        }
    }
}

fn decode_opt<T: Wire>(r: &mut Reader<'_>) -> Result<Option<T>, DecodeError> {
    match r.u8()? {
        0 => Ok(None),
        1 => Ok(Some(T::decode(r)?)),
        f => Err(DecodeError::Invalid(format!("bad option flag {f}"))),
    }
}

impl Wire for PolicyChange {
    fn encode(&self, w: &mut Writer) {
        self.op.encode(w);
        self.policy.encode(w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PolicyChange { op: CrudOp::decode(r)?, policy: Policy::decode(r)? })
    }
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::PolicyCrudRequest { .. } => MessageType::PolicyCrudRequest,
            Message::PolicyCrudResponse { .. } => MessageType::PolicyCrudResponse,
            Message::PolicyExchangeIncremental { .. } => MessageType::PolicyExchangeIncremental,
            Message::PolicyExchangeRequest => MessageType::PolicyExchangeRequest,
            Message::PolicyExchangeComplete { .. } => MessageType::PolicyExchangeComplete,
            Message::AttributeRequest { .. } => MessageType::AttributeRequest,
            Message::AttributeResolution { .. } => MessageType::AttributeResolution,
            Message::AccessRequest { .. } => MessageType::AccessRequest,
            Message::SessionInitialization { .. } => MessageType::SessionInitialization,
            Message::AccessVerificationRequest { .. } => MessageType::AccessVerificationRequest,
            Message::AccessVerificationResponse { .. } => MessageType::AccessVerificationResponse,
            Message::PayloadExchangeRequest { .. } => MessageType::PayloadExchangeRequest,
        }
    }

    pub fn encode_body(&self, w: &mut Writer) {
        match self {
            Message::PolicyCrudRequest { op, id, policy } => {
                op.encode(w);
                w.str(id);
                encode_opt(policy, w);
            }
            Message::PolicyCrudResponse { status, revision, policy, details } => {
                status.encode(w);
                w.u64(*revision);
                encode_opt(policy, w);
                w.strings(details.iter());
            }
            Message::PolicyExchangeIncremental { changes, revision } => {
                encode_list(changes, w);
                w.u64(*revision);
            }
            Message::PolicyExchangeRequest => {}
            Message::PolicyExchangeComplete { policies, revision } => {
                encode_list(policies, w);
                w.u64(*revision);
            }
            Message::AttributeRequest { keys } => w.strings(keys.iter()),
            Message::AttributeResolution { bindings, unknown } => {
                encode_list(bindings, w);
                w.strings(unknown.iter());
            }
            Message::AccessRequest { request } => request.encode(w),
            Message::SessionInitialization { decisions } | Message::AccessVerificationResponse { decisions } => {
                encode_list(decisions, w)
            }
            Message::AccessVerificationRequest { flow } => flow.encode(w),
            Message::PayloadExchangeRequest { frame } => w.bytes32("frame", frame),
        }
    }

    /// Decodes a complete body of type `ty`.
    pub fn decode_body(ty: MessageType, body: &[u8]) -> Result<Message, DecodeError> {
        let mut r = Reader::new(body);
        let m = match ty {
            MessageType::PolicyCrudRequest => Message::PolicyCrudRequest {
                op: CrudOp::decode(&mut r)?,
                id: r.str()?,
                policy: decode_opt(&mut r)?,
            },
            MessageType::PolicyCrudResponse => Message::PolicyCrudResponse {
                status: CrudStatus::decode(&mut r)?,
                revision: r.u64()?,
                policy: decode_opt(&mut r)?,
                details: r.strings()?,
            },
            MessageType::PolicyExchangeIncremental => {
                Message::PolicyExchangeIncremental { changes: decode_list(&mut r)?, revision: r.u64()? }
            }
            MessageType::PolicyExchangeRequest => Message::PolicyExchangeRequest,
            MessageType::PolicyExchangeComplete => {
                Message::PolicyExchangeComplete { policies: decode_list(&mut r)?, revision: r.u64()? }
            }
            MessageType::AttributeRequest => Message::AttributeRequest { keys: r.strings()? },
            MessageType::AttributeResolution => {
                Message::AttributeResolution { bindings: decode_list(&mut r)?, unknown: r.strings()? }
            }
            MessageType::AccessRequest => Message::AccessRequest { request: AccessRequestPattern::decode(&mut r)? },
            MessageType::SessionInitialization => {
                Message::SessionInitialization { decisions: decode_list(&mut r)? }
            }
            MessageType::AccessVerificationRequest => {
                Message::AccessVerificationRequest { flow: FlowPattern::decode(&mut r)? }
            }
            MessageType::AccessVerificationResponse => {
                Message::AccessVerificationResponse { decisions: decode_list(&mut r)? }
            }
            MessageType::PayloadExchangeRequest => {
                Message::PayloadExchangeRequest { frame: r.bytes32()?.to_vec() }
            }
        };
        r.finish()?;
        Ok(m)
    }
}
