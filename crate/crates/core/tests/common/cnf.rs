//! Random predicate trees over boolean leaves and a direct truth-table
//! evaluator.

use rand::rngs::StdRng;
use rand::Rng;

use rtsabac_core::policy::{AttrValue, AttributeBinding, AuxiliaryPredicate, CmpOp, PredicateTree};
use rtsabac_core::Timestamp;

pub fn leaf(i: usize) -> PredicateTree {
    PredicateTree::leaf(AuxiliaryPredicate::compare(&format!("a{i}"), &format!("k{i}"), CmpOp::Eq, AttrValue::Bool(true)))
}

pub fn random_tree(rng: &mut StdRng, leaves: usize, depth: usize) -> PredicateTree {
    if depth == 0 || rng.gen_bool(0.25) {
        return leaf(rng.gen_range(0..leaves));
    }
    let op = rng.gen_range(0..4);
    let a = random_tree(rng, leaves, depth - 1);
    if op == 0 {
        return PredicateTree::not(a);
    }
    let b = random_tree(rng, leaves, depth - 1);
    match op {
        1 => PredicateTree::and(a, b),
        2 => PredicateTree::or(a, b),
        _ => PredicateTree::xor(a, b),
    }
}

pub fn assignment_bindings(leaves: usize, bits: u32) -> Vec<AttributeBinding> {
    (0..leaves)
        .map(|i| {
            AttributeBinding::new(&format!("k{i}"), AttrValue::Bool(bits >> i & 1 == 1), Timestamp(0), Timestamp::INFINITE)
        })
        .collect()
}

pub fn leaf_index(id: &str) -> usize {
    id[1..].parse().unwrap()
}

/// Evaluates `tree` under the assignment `bits` by structural recursion.
pub fn truth(tree: &PredicateTree, bits: u32) -> bool {
    match tree {
        PredicateTree::Leaf(p) => bits >> leaf_index(&p.id) & 1 == 1,
        PredicateTree::Not(a) => !truth(a, bits),
        PredicateTree::And(a, b) => truth(a, bits) && truth(b, bits),
        PredicateTree::Or(a, b) => truth(a, bits) || truth(b, bits),
        PredicateTree::Xor(a, b) => truth(a, bits) != truth(b, bits),
    }
}
