//! Decision-engine fixtures and a re-derivation oracle.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

use rtsabac_core::decision::{AccessDecision, AttributeSource, SourceError};
use rtsabac_core::pattern::{matches, qualified_set, AccessRequestPattern};
use rtsabac_core::policy::{Action, AttrType, AttrValue, AttributeBinding, AuxiliaryPredicate, Catalog, CmpOp, Policy};
use rtsabac_core::Timestamp;

use super::random_flow;

pub const DEPS: [&str; 3] = ["dep-a", "dep-b", "dep-c"];
pub const MODES: [&str; 2] = ["normal", "maintenance"];

pub struct Counting {
    pub bindings: Vec<AttributeBinding>,
    pub calls: usize,
}

impl AttributeSource for Counting {
    fn resolve(&mut self, keys: &BTreeSet<String>, _: Timestamp) -> Result<Vec<AttributeBinding>, SourceError> {
        self.calls += 1;
        Ok(self.bindings.iter().filter(|b| keys.contains(&b.key)).cloned().collect())
    }
}

pub fn catalog() -> Catalog {
    Catalog::new()
        .with("mode", AttrType::Str, true)
        .with("load", AttrType::Int, true)
        .with("bay", AttrType::Int, false)
}

pub fn random_decision(rng: &mut StdRng) -> AccessDecision {
    let from = rng.gen_range(0..1000);
    let hops: BTreeSet<String> = DEPS.iter().filter(|_| rng.gen_bool(0.5)).map(|s| s.to_string()).collect();
    AccessDecision::new(
        [random_flow(rng)],
        if rng.gen_bool(0.7) { Action::Grant } else { Action::Deny },
        hops,
        Timestamp(from),
        Timestamp(from + rng.gen_range(0..10_000)),
        BTreeSet::from([format!("p{}", rng.gen_range(0..100))]),
    )
}

pub fn random_aux(rng: &mut StdRng) -> Vec<AuxiliaryPredicate> {
    (0..rng.gen_range(0..3))
        .map(|i| {
            let id = format!("a{i}");
            match rng.gen_range(0..3) {
                0 => AuxiliaryPredicate::compare(&id, "mode", CmpOp::Eq, AttrValue::Str(MODES.choose(rng).unwrap().to_string())),
                1 => AuxiliaryPredicate::compare(&id, "load", CmpOp::Lt, AttrValue::Int(rng.gen_range(0..10))),
                _ => AuxiliaryPredicate::compare(&id, "bay", CmpOp::Ne, AttrValue::Int(rng.gen_range(0..3))),
            }
        })
        .collect()
}

pub fn random_policy(rng: &mut StdRng, i: usize) -> Policy {
    let hops: Vec<&str> = DEPS.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
    Policy::new(&format!("p{i}"), if rng.gen_bool(0.8) { Action::Grant } else { Action::Deny }, random_flow(rng))
        .with_auxiliary(random_aux(rng))
        .with_nexthop(hops)
        .with_validity(rng.gen_range(1..60_000))
}

pub fn random_bindings(rng: &mut StdRng, now: u64) -> Vec<AttributeBinding> {
    let until = |rng: &mut StdRng| Timestamp(now + rng.gen_range(0..30_000));
    vec![
        AttributeBinding::new("mode", AttrValue::Str(MODES.choose(rng).unwrap().to_string()), Timestamp(0), until(rng)),
        AttributeBinding::new("load", AttrValue::Int(rng.gen_range(0..10)), Timestamp(0), until(rng)),
        AttributeBinding::new("bay", AttrValue::Int(rng.gen_range(0..3)), Timestamp(0), Timestamp::INFINITE),
    ]
}

pub fn holds(p: &AuxiliaryPredicate, bindings: &[AttributeBinding]) -> bool {
    let rtsabac_core::policy::AuxExpr::Compare(c) = &p.expr else { unreachable!() };
    let b = bindings.iter().find(|b| b.key == c.key).unwrap();
    match (&b.value, &c.literal, c.op) {
        (AttrValue::Str(v), AttrValue::Str(l), CmpOp::Eq) => v == l,
        (AttrValue::Int(v), AttrValue::Int(l), CmpOp::Lt) => v < l,
        (AttrValue::Int(v), AttrValue::Int(l), CmpOp::Ne) => v != l,
        _ => unreachable!(),
    }
}

/// Re-derives (action, nexthop) from policies and bindings directly.
pub fn brute_force(policies: &[Policy], bindings: &[AttributeBinding], request: &AccessRequestPattern) -> (Action, BTreeSet<String>) {
    let matching: Vec<&Policy> = policies.iter().filter(|p| matches(&p.flow, request)).collect();
    if matching.is_empty() {
        return (Action::Deny, BTreeSet::new());
    }
    let outcome = |p: &Policy| {
        let granted = p.action == Action::Grant && !p.nexthop.is_empty() && p.auxiliary.iter().all(|a| holds(a, bindings));
        if granted {
            (Action::Grant, p.nexthop.clone())
        } else {
            (Action::Deny, BTreeSet::new())
        }
    };
    let sets: Vec<_> = matching.iter().map(|p| qualified_set(&p.flow)).collect();
    let above = |i: usize, j: usize| sets[i] != sets[j] && sets[i].0.is_superset(&sets[j].0);
    let n = matching.len();
    let maximal: Vec<usize> = (0..n).filter(|&i| !(0..n).any(|j| above(j, i))).collect();
    if let Some(&w) = maximal.iter().find(|&&i| (0..n).all(|j| j == i || above(i, j))) {
        return outcome(matching[w]);
    }
    let outcomes: Vec<_> = maximal.iter().map(|&i| outcome(matching[i])).collect();
    if outcomes.iter().all(|(a, _)| *a == Action::Grant) {
        (Action::Grant, outcomes.into_iter().flat_map(|(_, h)| h).collect())
    } else {
        (Action::Deny, BTreeSet::new())
    }
}

