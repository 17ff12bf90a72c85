mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use rtsabac_core::decision::{
    compose, default_decision, dynamic_authorization, enforce, select_decision, AccessDecision, EngineConfig,
    ExplicitNexthop,
};
use rtsabac_core::pattern::{AccessRequestPattern, Anchor, Fact, Value};
use rtsabac_core::policy::{Action, Policy};
use rtsabac_core::Timestamp;

use common::decision::{brute_force, catalog, random_bindings, random_decision, random_policy, Counting};
use common::{domain, random_request};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn composite_validity_is_minimum(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let ds: Vec<AccessDecision> = (0..rng.gen_range(1..5)).map(|_| random_decision(&mut rng)).collect();
        let c = compose(&ds).unwrap();
        prop_assert_eq!(c.valid_until, ds.iter().map(|d| d.valid_until).min().unwrap());
        prop_assert!(c.valid_from <= c.valid_until);
        let mut rev = ds.clone();
        rev.shuffle(&mut rng);
        prop_assert_eq!(compose(&rev).unwrap(), c.clone());
        prop_assert_eq!(compose(&ds[..1]).unwrap(), ds[0].clone());
        if ds.iter().all(|d| d.action == Action::Grant) {
            let hops: BTreeSet<String> = ds.iter().flat_map(|d| d.nexthop.clone()).collect();
            prop_assert_eq!(c.nexthop, hops);
        } else {
            prop_assert_eq!(c.action, Action::Deny);
            prop_assert!(c.nexthop.is_empty());
        }
    }

    #[test]
    fn grant_always_has_nexthop(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let now = rng.gen_range(0..5000);
        let policies: Vec<Policy> = (0..5).map(|i| random_policy(&mut rng, i)).collect();
        let mut src = Counting { bindings: random_bindings(&mut rng, now), calls: 0 };
        let ds = dynamic_authorization(&policies, &catalog(), &mut src, &ExplicitNexthop, &EngineConfig::default(), Timestamp(now));
        let request = random_request(&mut rng);
        for d in ds.iter().chain([random_decision(&mut rng)].iter()) {
            prop_assert!(d.action == Action::Deny || !d.nexthop.is_empty());
            for t in [d.valid_from.0, d.valid_until.0, d.valid_until.0.saturating_add(1)] {
                let (action, hops) = enforce(d, &request, Timestamp(t));
                prop_assert!(action == Action::Deny || !hops.is_empty());
            }
        }
    }

    #[test]
    fn enforce_denies_after_expiry(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let d = random_decision(&mut rng);
        let request = random_request(&mut rng);
        let late = d.valid_until.0 + rng.gen_range(1..100_000);
        prop_assert_eq!(enforce(&d, &request, Timestamp(late)), (Action::Deny, BTreeSet::new()));
        if d.valid_from.0 > 0 {
            prop_assert_eq!(enforce(&d, &request, Timestamp(d.valid_from.0 - 1)), (Action::Deny, BTreeSet::new()));
        }
    }

    #[test]
    fn default_decision_is_exact(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let request = random_request(&mut rng);
        let d = default_decision(&request, &EngineConfig::default(), Timestamp(0));
        prop_assert_eq!(d.action, Action::Deny);
        prop_assert!(d.nexthop.is_empty());
        prop_assert!(d.matches(&request));
        for (ai, anchor) in request.anchors().iter().enumerate() {
            for (fi, fact) in anchor.facts.iter().enumerate() {
                let other = domain(fact.field).into_iter().find(|v| *v != fact.value).unwrap_or(match &fact.value {
                    Value::Uint(v) => Value::Uint(v + 1),
                    v => v.clone(),
                });
                let mut anchors: Vec<Anchor> = request.anchors().to_vec();
                anchors[ai].facts[fi] = Fact::new(fact.field, other);
                prop_assert!(!d.matches(&AccessRequestPattern::new(anchors)));
            }
        }
    }

    #[test]
    fn static_policies_fetch_nothing(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let now = Timestamp(rng.gen_range(0..1_000_000));
        let policies: Vec<Policy> = (0..rng.gen_range(1..6))
            .map(|i| random_policy(&mut rng, i).with_auxiliary(vec![]))
            .collect();
        let mut src = Counting { bindings: vec![], calls: 0 };
        let a = dynamic_authorization(&policies, &catalog(), &mut src, &ExplicitNexthop, &EngineConfig::default(), now);
        let b = dynamic_authorization(&policies, &catalog(), &mut src, &ExplicitNexthop, &EngineConfig::default(), now);
        prop_assert_eq!(src.calls, 0);
        prop_assert_eq!(&a, &b);
        for (d, p) in a.iter().zip(&policies) {
            prop_assert_eq!(d.valid_until, now.plus(p.static_max_validity_ms));
        }
    }

    #[test]
    fn attribute_fetches_are_shared(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let policies: Vec<Policy> = (0..5).map(|i| random_policy(&mut rng, i)).collect();
        let mut src = Counting { bindings: random_bindings(&mut rng, 0), calls: 0 };
        dynamic_authorization(&policies, &catalog(), &mut src, &ExplicitNexthop, &EngineConfig::default(), Timestamp(0));
        let mut seen = BTreeSet::new();
        let mut expected = 0;
        for p in &policies {
            let keys = p.required_keys();
            if !keys.is_subset(&seen) {
                expected += 1;
            }
            seen.extend(keys);
        }
        prop_assert_eq!(src.calls, expected);
    }

    #[test]
    fn strict_winner_is_returned_unchanged(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let request = random_request(&mut rng);
        let cands: Vec<AccessDecision> = (0..20)
            .map(|_| random_decision(&mut rng))
            .filter(|d| d.matches(&request))
            .take(3)
            .collect();
        prop_assume!(!cands.is_empty());
        let chosen = select_decision(&cands, &request).unwrap();
        let sets: Vec<_> = cands.iter().map(|c| c.matched_set(&request)).collect();
        for (i, c) in cands.iter().enumerate() {
            let strict = (0..cands.len()).all(|j| j == i || (sets[i] != sets[j] && sets[i].is_superset(&sets[j])));
            if strict {
                prop_assert_eq!(&chosen, c);
            }
        }
    }

    #[test]
    fn engine_agrees_with_brute_force(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let now = 1000;
        let policies: Vec<Policy> = (0..rng.gen_range(1..=5)).map(|i| random_policy(&mut rng, i)).collect();
        let bindings = random_bindings(&mut rng, now);
        let request = random_request(&mut rng);
        let mut src = Counting { bindings: bindings.clone(), calls: 0 };
        let ds = dynamic_authorization(&policies, &catalog(), &mut src, &ExplicitNexthop, &EngineConfig::default(), Timestamp(now));
        let cands: Vec<AccessDecision> = ds.into_iter().filter(|d| d.matches(&request)).collect();
        let got = match select_decision(&cands, &request) {
            Ok(d) => enforce(&d, &request, Timestamp(now)),
            Err(_) => enforce(&default_decision(&request, &EngineConfig::default(), Timestamp(now)), &request, Timestamp(now)),
        };
        prop_assert_eq!(got, brute_force(&policies, &bindings, &request));
    }
}
