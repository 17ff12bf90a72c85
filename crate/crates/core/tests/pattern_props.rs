mod common;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use rtsabac_core::pattern::{
    is_more_specific, match_at_root, match_nested, qualified_set, FlowPattern, PatternNode, Specificity,
};
use rtsabac_core::wire::codec::encode_flow;

use common::matching::{flatten, oracle_nested, oracle_root};
use common::{random_flow, random_predicate, random_request};

fn shuffled(flow: &FlowPattern, rng: &mut StdRng) -> FlowPattern {
    fn walk(node: &PatternNode, rng: &mut StdRng) -> PatternNode {
        match node {
            PatternNode::Layer { layer, children } => {
                let mut c: Vec<PatternNode> = children.iter().map(|n| walk(n, rng)).collect();
                c.shuffle(rng);
                PatternNode::Layer { layer: *layer, children: c }
            }
            other => other.clone(),
        }
    }
    FlowPattern::new(walk(flow.root(), rng))
}

fn with_extra_predicate(flow: &FlowPattern, rng: &mut StdRng) -> FlowPattern {
    let depth = flatten(flow).len();
    let target = rng.gen_range(0..depth);
    fn walk(node: &PatternNode, at: usize, rng: &mut StdRng) -> PatternNode {
        match node {
            PatternNode::Layer { layer, children } => {
                let mut c: Vec<PatternNode> = children
                    .iter()
                    .map(|n| if n.is_layer() { walk(n, at.wrapping_sub(1), rng) } else { n.clone() })
                    .collect();
                if at == 0 {
                    c.insert(0, PatternNode::Param(random_predicate(rng, *layer)));
                }
                PatternNode::Layer { layer: *layer, children: c }
            }
            other => other.clone(),
        }
    }
    FlowPattern::new(walk(flow.root(), target, rng))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn matcher_agrees_with_brute_force(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let flow = random_flow(&mut rng);
        let request = random_request(&mut rng);
        prop_assert_eq!(match_at_root(&flow, &request).unwrap(), oracle_root(&flow, request.anchors()));
        let nested = match_nested(&flow, &request).unwrap();
        let expected = oracle_nested(&flow, &request).map(|i| request.path_to(i));
        prop_assert_eq!(nested, expected);
    }

    #[test]
    fn nested_is_root_match_on_some_subtree(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let flow = random_flow(&mut rng);
        let request = random_request(&mut rng);
        let any_subtree = (0..request.anchors().len())
            .any(|i| match_at_root(&flow, &request.subtree(i)).unwrap());
        prop_assert_eq!(match_nested(&flow, &request).unwrap().is_some(), any_subtree);
    }

    #[test]
    fn specificity_is_antisymmetric(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = random_flow(&mut rng);
        let b = random_flow(&mut rng);
        prop_assert_eq!(is_more_specific(&a, &a), Specificity::Equal);
        let expected = match is_more_specific(&a, &b) {
            Specificity::MoreSpecific => Specificity::LessSpecific,
            Specificity::LessSpecific => Specificity::MoreSpecific,
            other => other,
        };
        prop_assert_eq!(is_more_specific(&b, &a), expected);
    }

    #[test]
    fn extra_predicate_never_creates_match(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let flow = random_flow(&mut rng);
        let extended = with_extra_predicate(&flow, &mut rng).normalized().unwrap();
        let request = random_request(&mut rng);
        if !match_at_root(&flow, &request).unwrap() {
            prop_assert!(!match_at_root(&extended, &request).unwrap());
        }
        if match_nested(&flow, &request).unwrap().is_none() {
            prop_assert!(match_nested(&extended, &request).unwrap().is_none());
        }
    }

    #[test]
    fn sibling_order_is_irrelevant(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let flow = random_flow(&mut rng);
        let other = shuffled(&flow, &mut rng);
        prop_assert_eq!(qualified_set(&flow), qualified_set(&other));
        prop_assert_eq!(encode_flow(&flow.canonicalized()), encode_flow(&other.canonicalized()));
    }
}

#[test]
fn generated_pairs_exercise_both_outcomes() {
    let mut rng = StdRng::seed_from_u64(7);
    let (mut root, mut nested, n) = (0, 0, 2000);
    for _ in 0..n {
        let flow = random_flow(&mut rng);
        let request = random_request(&mut rng);
        root += usize::from(match_at_root(&flow, &request).unwrap());
        nested += usize::from(match_nested(&flow, &request).unwrap().is_some());
    }
    println!("root matches {root}/{n}, nested matches {nested}/{n}");
    assert!(root > n / 20 && nested > root && nested < n);
}
