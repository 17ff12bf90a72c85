//! Access decisions: derivation from policies, enforcement against requests,
//! most-specific selection and composition.

mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use thiserror::Error;

pub use store::DecisionStore;

use crate::pattern::{
    match_nested, qualified_set, AccessRequestPattern, Field, FlowPattern, PatternNode, Predicate,
    QualifiedPredicateSet, Value,
};
use crate::policy::{
    classify, evaluate_auxiliary, Action, AttributeBinding, BindingSet, Catalog, Policy, PolicyClass,
};
use crate::Timestamp;

pub const DEFAULT_ERROR_RETRY_MS: u64 = 1000;
pub const DEFAULT_DENY_TTL_MS: u64 = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub error_retry_ms: u64,
    pub default_deny_ttl_ms: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { error_retry_ms: DEFAULT_ERROR_RETRY_MS, default_deny_ttl_ms: DEFAULT_DENY_TTL_MS }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccessDecision {
    /// Canonical, sorted and deduplicated; more than one only for composites.
    pub flows: Vec<FlowPattern>,
    pub action: Action,
    pub nexthop: BTreeSet<String>,
    pub valid_from: Timestamp,
    pub valid_until: Timestamp,
    pub origin_policy_ids: BTreeSet<String>,
}

impl AccessDecision {
    /// Builds a decision, forcing DENY whenever the nexthop set is empty and
    /// clearing the nexthop of a DENY.
    pub fn new(
        flows: impl IntoIterator<Item = FlowPattern>,
        action: Action,
        nexthop: BTreeSet<String>,
        valid_from: Timestamp,
        valid_until: Timestamp,
        origin_policy_ids: BTreeSet<String>,
    ) -> Self {
        let mut flows: Vec<FlowPattern> = flows.into_iter().map(|f| f.canonicalized()).collect();
        flows.sort();
        flows.dedup();
        let (action, nexthop) = match action {
            Action::Grant if !nexthop.is_empty() => (Action::Grant, nexthop),
            _ => (Action::Deny, BTreeSet::new()),
        };
        AccessDecision {
            flows,
            action,
            nexthop,
            valid_from: valid_from.min(valid_until),
            valid_until,
            origin_policy_ids,
        }
    }

    pub fn deny(flow: FlowPattern, valid_from: Timestamp, valid_until: Timestamp, origin: Option<&str>) -> Self {
        AccessDecision::new(
            [flow],
            Action::Deny,
            BTreeSet::new(),
            valid_from,
            valid_until,
            origin.into_iter().map(String::from).collect(),
        )
    }

    pub fn is_valid_at(&self, now: Timestamp) -> bool {
        self.valid_from <= now && now <= self.valid_until
    }

    pub fn is_composite(&self) -> bool {
        self.flows.len() > 1
    }

    pub fn matches(&self, request: &AccessRequestPattern) -> bool {
        self.flows.iter().any(|f| matches!(match_nested(f, request), Ok(Some(_))))
    }

    /// Union of the qualified sets of the flows that match `request`.
    pub fn matched_set(&self, request: &AccessRequestPattern) -> QualifiedPredicateSet {
        self.flows
            .iter()
            .filter(|f| matches!(match_nested(f, request), Ok(Some(_))))
            .fold(QualifiedPredicateSet::default(), |acc, f| acc.union(&qualified_set(f)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SourceError {
    #[error("attribute source unreachable: {0}")]
    Unreachable(String),
    #[error("attribute source rejected request: {0}")]
    Rejected(String),
}

/// Resolves attribute keys to bindings.
pub trait AttributeSource {
    fn resolve(&mut self, keys: &BTreeSet<String>, now: Timestamp) -> Result<Vec<AttributeBinding>, SourceError>;
}

/// Maps a policy to the DEPs a granted flow is forwarded to.
pub trait NexthopResolver {
    fn nexthop(&self, policy: &Policy) -> BTreeSet<String>;
}

/// Uses the policy's explicit nexthop list.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExplicitNexthop;

impl NexthopResolver for ExplicitNexthop {
    fn nexthop(&self, policy: &Policy) -> BTreeSet<String> {
        policy.nexthop.clone()
    }
}

/// Address of an end device behind a DEP. Absent parts are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProtectedEndpoint {
    pub mac: Option<[u8; 6]>,
    pub ip: Option<Ipv4Addr>,
    pub port: Option<u16>,
}

impl ProtectedEndpoint {
    fn value(&self, field: Field) -> Option<Value> {
        match field {
            Field::DstMac => self.mac.map(Value::Mac),
            Field::DstIp => self.ip.map(Value::Ipv4),
            Field::DstPort => self.port.map(|p| Value::Uint(p.into())),
            _ => None,
        }
    }

    /// Whether the endpoint satisfies every destination predicate it can be
    /// compared with, and at least one such predicate exists.
    pub fn satisfies(&self, predicates: &[&Predicate]) -> bool {
        let mut compared = false;
        for p in predicates {
            if let Some(v) = self.value(p.field) {
                compared = true;
                if !p.operand.eval(&v) {
                    return false;
                }
            }
        }
        compared
    }
}

/// Protected endpoints per DEP id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EndpointRegistry {
    pub deps: BTreeMap<String, Vec<ProtectedEndpoint>>,
}

impl EndpointRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn protect(&mut self, dep: &str, endpoint: ProtectedEndpoint) {
        self.deps.entry(dep.to_string()).or_default().push(endpoint);
    }

    /// DEPs protecting a destination of `flow`.
    pub fn deps_for(&self, flow: &FlowPattern) -> BTreeSet<String> {
        let preds = flow.destination_predicates();
        if preds.is_empty() {
            return BTreeSet::new();
        }
        self.deps
            .iter()
            .filter(|(_, eps)| eps.iter().any(|e| e.satisfies(&preds)))
            .map(|(id, _)| id.clone())
            .collect()
    }
}

impl NexthopResolver for EndpointRegistry {
    fn nexthop(&self, policy: &Policy) -> BTreeSet<String> {
        let found = self.deps_for(&policy.flow);
        if found.is_empty() {
            policy.nexthop.clone()
        } else {
            found
        }
    }
}

/// Derives one decision per policy. Attributes fetched for earlier policies
/// are reused; the source is asked only for keys not yet known, at most once
/// per policy.
pub fn dynamic_authorization(
    policies: &[Policy],
    catalog: &Catalog,
    source: &mut dyn AttributeSource,
    nexthops: &dyn NexthopResolver,
    config: &EngineConfig,
    now: Timestamp,
) -> Vec<AccessDecision> {
    let mut system = BindingSet::new();
    policies
        .iter()
        .map(|policy| {
            let error = || AccessDecision::deny(policy.flow.clone(), now, now.plus(config.error_retry_ms), Some(&policy.id));
            let Ok(class) = classify(policy, catalog) else {
                return error();
            };
            let required = policy.required_keys();
            let missing: BTreeSet<String> = required.iter().filter(|k| !system.contains_key(*k)).cloned().collect();
            if !missing.is_empty() {
                match source.resolve(&missing, now) {
                    Ok(bindings) => {
                        for b in bindings.into_iter().filter(|b| missing.contains(&b.key)) {
                            system.insert(b.key.clone(), b);
                        }
                    }
                    Err(_) => return error(),
                }
            }
            let holds = match evaluate_auxiliary(&policy.auxiliary, &system, now) {
                Ok(v) => v,
                Err(_) => return error(),
            };
            let valid_until = match class {
                PolicyClass::Static => now.plus(policy.static_max_validity_ms),
                PolicyClass::Dynamic => required
                    .iter()
                    .filter_map(|k| system.get(k))
                    .map(|b| b.valid_until)
                    .min()
                    .unwrap_or(Timestamp::INFINITE),
            };
            let (action, nexthop) = match (holds, policy.action) {
                (true, Action::Grant) => (Action::Grant, nexthops.nexthop(policy)),
                _ => (Action::Deny, BTreeSet::new()),
            };
            AccessDecision::new(
                [policy.flow.clone()],
                action,
                nexthop,
                now,
                valid_until,
                BTreeSet::from([policy.id.clone()]),
            )
        })
        .collect()
}

/// (action, nexthop) of `decision` for `request` at `now`; every failure
/// collapses to (DENY, {}).
pub fn enforce(decision: &AccessDecision, request: &AccessRequestPattern, now: Timestamp) -> (Action, BTreeSet<String>) {
    let grant = decision.action == Action::Grant && !decision.nexthop.is_empty();
    if decision.is_valid_at(now) && decision.matches(request) && grant {
        (Action::Grant, decision.nexthop.clone())
    } else {
        (Action::Deny, BTreeSet::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("no decisions to select from")]
    Empty,
}

/// Field-wise combination: union of flows and origins; GRANT with the union
/// of nexthops only if every input grants; earliest expiry, latest start.
pub fn compose(decisions: &[AccessDecision]) -> Result<AccessDecision, DecisionError> {
    let first = decisions.first().ok_or(DecisionError::Empty)?;
    if decisions.len() == 1 {
        return Ok(first.clone());
    }
    let all_grant = decisions.iter().all(|d| d.action == Action::Grant);
    let nexthop = if all_grant {
        decisions.iter().flat_map(|d| d.nexthop.iter().cloned()).collect()
    } else {
        BTreeSet::new()
    };
    let until = decisions.iter().map(|d| d.valid_until).min().expect("non-empty");
    let from = decisions.iter().map(|d| d.valid_from).max().expect("non-empty");
    Ok(AccessDecision::new(
        decisions.iter().flat_map(|d| d.flows.iter().cloned()),
        if all_grant { Action::Grant } else { Action::Deny },
        nexthop,
        from,
        until,
        decisions.iter().flat_map(|d| d.origin_policy_ids.iter().cloned()).collect(),
    ))
}

/// The candidate whose matched flow is strictly more specific than every
/// other; otherwise the composite of the maximally specific candidates.
pub fn select_decision(
    candidates: &[AccessDecision],
    request: &AccessRequestPattern,
) -> Result<AccessDecision, DecisionError> {
    match candidates {
        [] => Err(DecisionError::Empty),
        [only] => Ok(only.clone()),
        _ => {
            let sets: Vec<QualifiedPredicateSet> = candidates.iter().map(|c| c.matched_set(request)).collect();
            let strictly_above = |i: usize, j: usize| sets[i] != sets[j] && sets[i].is_superset(&sets[j]);
            let n = candidates.len();
            if let Some(w) = (0..n).find(|&i| (0..n).all(|j| j == i || strictly_above(i, j))) {
                return Ok(candidates[w].clone());
            }
            let maximal: Vec<AccessDecision> = (0..n)
                .filter(|&i| !(0..n).any(|j| strictly_above(j, i)))
                .map(|i| candidates[i].clone())
                .collect();
            compose(&maximal)
        }
    }
}

/// Flow pattern matching exactly the facts of `request`.
pub fn exact_flow(request: &AccessRequestPattern) -> FlowPattern {
    let mut node: Option<PatternNode> = None;
    for anchor in request.anchors().iter().rev() {
        let mut children: Vec<PatternNode> = anchor
            .facts
            .iter()
            .map(|f| PatternNode::Param(Predicate::eq(f.field, f.value.clone())))
            .collect();
        children.extend(node.take());
        node = Some(PatternNode::layer(anchor.layer, children));
    }
    let raw = FlowPattern::new(node.unwrap_or_else(|| PatternNode::layer(crate::pattern::Layer::Opaque, Vec::new())));
    raw.normalized().unwrap_or(raw)
}

/// DENY decision for exactly `request`, valid for the default TTL.
pub fn default_decision(request: &AccessRequestPattern, config: &EngineConfig, now: Timestamp) -> AccessDecision {
    AccessDecision::deny(exact_flow(request), now, now.plus(config.default_deny_ttl_ms), None)
}
