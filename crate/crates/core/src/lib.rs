//! Core data model of the real-time ABAC fabric.
//!
//! * [`pattern`]: flow patterns, access request patterns and tree matching.
//! * [`dissect`]: raw frame parsing into access request patterns.
//! * [`policy`]: policies, auxiliary predicates, attribute bindings, CNF.
//! * [`decision`]: dynamic authorization, enforcement and composition.
//! * [`wire`]: canonical codec, message variants and authenticators.

pub mod decision;
pub mod dissect;
pub mod pattern;
pub mod policy;
pub mod time;
pub mod wire;

pub use time::Timestamp;
