use std::collections::{BTreeMap, BTreeSet};

use super::{select_decision, AccessDecision};
use crate::pattern::{AccessRequestPattern, FlowPattern};
use crate::wire::codec::encode_flow;
use crate::Timestamp;

/// Decisions indexed by canonical flow encoding. A decision replaces any
/// earlier one with the same origin policies; composites are indexed under
/// every constituent flow.
#[derive(Debug, Clone, Default)]
pub struct DecisionStore {
    next_id: u64,
    entries: BTreeMap<u64, AccessDecision>,
    by_flow: BTreeMap<Vec<u8>, BTreeSet<u64>>,
    by_origin: BTreeMap<BTreeSet<String>, u64>,
}

fn flow_key(flow: &FlowPattern) -> Vec<u8> {
    encode_flow(&flow.canonicalized())
}

impl DecisionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AccessDecision> {
        self.entries.values()
    }

    /// Returns `false` if an identical decision was already stored.
    pub fn insert(&mut self, decision: AccessDecision) -> bool {
        let origin_key = (!decision.origin_policy_ids.is_empty()).then(|| decision.origin_policy_ids.clone());
        let replaced = match &origin_key {
            Some(k) => self.by_origin.get(k).copied(),
            None => self.entries.iter().find(|(_, d)| **d == decision).map(|(id, _)| *id),
        };
        if let Some(old) = replaced {
            if self.entries.get(&old) == Some(&decision) {
                return false;
            }
            self.remove(old);
        }
        let id = self.next_id;
        self.next_id += 1;
        for flow in &decision.flows {
            self.by_flow.entry(flow_key(flow)).or_default().insert(id);
        }
        if let Some(k) = origin_key {
            self.by_origin.insert(k, id);
        }
        self.entries.insert(id, decision);
        true
    }

    fn remove(&mut self, id: u64) -> Option<AccessDecision> {
        let d = self.entries.remove(&id)?;
        for flow in &d.flows {
            let key = flow_key(flow);
            if let Some(ids) = self.by_flow.get_mut(&key) {
                ids.remove(&id);
                if ids.is_empty() {
                    self.by_flow.remove(&key);
                }
            }
        }
        if self.by_origin.get(&d.origin_policy_ids) == Some(&id) {
            self.by_origin.remove(&d.origin_policy_ids);
        }
        Some(d)
    }

    /// Drops every decision that expired before `now`.
    pub fn purge(&mut self, now: Timestamp) -> usize {
        let expired: Vec<u64> =
            self.entries.iter().filter(|(_, d)| d.valid_until < now).map(|(id, _)| *id).collect();
        for id in &expired {
            self.remove(*id);
        }
        expired.len()
    }

    /// Unexpired decisions stored under `flow`.
    pub fn by_flow(&self, flow: &FlowPattern, now: Timestamp) -> Vec<&AccessDecision> {
        self.by_flow
            .get(&flow_key(flow))
            .into_iter()
            .flatten()
            .filter_map(|id| self.entries.get(id))
            .filter(|d| d.valid_until >= now)
            .collect()
    }

    /// Decisions valid at `now` with a flow matching `request`.
    pub fn candidates(&self, request: &AccessRequestPattern, now: Timestamp) -> Vec<AccessDecision> {
        self.entries
            .values()
            .filter(|d| d.is_valid_at(now) && d.matches(request))
            .cloned()
            .collect()
    }

    /// The most specific valid decision for `request`, composed on conflict.
    pub fn lookup(&self, request: &AccessRequestPattern, now: Timestamp) -> Option<AccessDecision> {
        select_decision(&self.candidates(request, now), request).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::text::parse_flow;
    use crate::policy::Action;

    fn decision(origin: &str, until: u64) -> AccessDecision {
        AccessDecision::new(
            [parse_flow("eth { goose { } }").unwrap()],
            Action::Grant,
            BTreeSet::from(["b".to_string()]),
            Timestamp(0),
            Timestamp(until),
            BTreeSet::from([origin.to_string()]),
        )
    }

    #[test]
    fn last_writer_wins() {
        let mut s = DecisionStore::new();
        assert!(s.insert(decision("p", 10)));
        assert!(!s.insert(decision("p", 10)));
        assert!(s.insert(decision("p", 20)));
        assert_eq!(s.len(), 1);
        assert_eq!(s.iter().next().unwrap().valid_until, Timestamp(20));
        s.insert(decision("q", 5));
        assert_eq!(s.by_flow(&parse_flow("eth { goose { } }").unwrap(), Timestamp(0)).len(), 2);
    }

    #[test]
    fn expiry() {
        let mut s = DecisionStore::new();
        s.insert(decision("p", 10));
        s.insert(decision("q", 30));
        let flow = parse_flow("eth { goose { } }").unwrap();
        assert_eq!(s.by_flow(&flow, Timestamp(11)).len(), 1);
        assert_eq!(s.purge(Timestamp(11)), 1);
        assert_eq!(s.len(), 1);
        assert_eq!(s.purge(Timestamp(30)), 0);
    }
}
