//! House policies and their static/dynamic classification.

pub mod attribute;
pub mod auxiliary;
pub mod text;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use attribute::{
    binding_set, AttrType, AttrValue, AttributeBinding, AttributeKey, BindingSet, Catalog, CatalogError,
};
pub use auxiliary::{
    evaluate_auxiliary, required_keys, to_conjunctive_form, AuxExpr, AuxiliaryPredicate, CmpOp, Comparison,
    EvalError, PredicateTree, MAX_TREE_LEAVES,
};

use crate::pattern::{FlowPattern, PatternViolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Action {
    Grant,
    #[default]
    Deny,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Grant => "GRANT",
            Action::Deny => "DENY",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GRANT" => Ok(Action::Grant),
            "DENY" => Ok(Action::Deny),
            _ => Err(format!("unknown action '{s}'")),
        }
    }
}

pub const DEFAULT_STATIC_MAX_VALIDITY_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub id: String,
    pub action: Action,
    pub flow: FlowPattern,
    /// Conjunction of atomic predicates.
    pub auxiliary: Vec<AuxiliaryPredicate>,
    pub static_max_validity_ms: u64,
    /// Explicit nexthop DEPs, used when the registry yields none.
    pub nexthop: BTreeSet<String>,
}

impl Policy {
    pub fn new(id: &str, action: Action, flow: FlowPattern) -> Self {
        Policy {
            id: id.to_string(),
            action,
            flow,
            auxiliary: Vec::new(),
            static_max_validity_ms: DEFAULT_STATIC_MAX_VALIDITY_MS,
            nexthop: BTreeSet::new(),
        }
    }

    pub fn with_auxiliary(mut self, auxiliary: Vec<AuxiliaryPredicate>) -> Self {
        self.auxiliary = auxiliary;
        self
    }

    pub fn with_tree(self, tree: &PredicateTree) -> Self {
        self.with_auxiliary(to_conjunctive_form(tree))
    }

    pub fn with_validity(mut self, ms: u64) -> Self {
        self.static_max_validity_ms = ms;
        self
    }

    pub fn with_nexthop<I: IntoIterator<Item = S>, S: Into<String>>(mut self, deps: I) -> Self {
        self.nexthop = deps.into_iter().map(Into::into).collect();
        self
    }

    /// ATT of the auxiliary set.
    pub fn required_keys(&self) -> BTreeSet<String> {
        required_keys(&self.auxiliary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyClass {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),
}

/// Dynamic iff some required attribute is declared time-variable.
pub fn classify(policy: &Policy, catalog: &Catalog) -> Result<PolicyClass, ClassifyError> {
    let mut class = PolicyClass::Static;
    for key in policy.required_keys() {
        let decl = catalog.get(&key).ok_or_else(|| ClassifyError::UnknownAttribute(key.clone()))?;
        if decl.time_variable {
            class = PolicyClass::Dynamic;
        }
    }
    Ok(class)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyViolation {
    #[error("empty policy id")]
    EmptyId,
    #[error("{0}")]
    Pattern(PatternViolation),
    #[error("unknown attribute '{key}' in predicate '{predicate}'")]
    UnknownAttribute { predicate: String, key: String },
    #[error("predicate '{predicate}': {reason}")]
    PredicateType { predicate: String, reason: String },
    #[error("duplicate predicate id '{0}'")]
    DuplicatePredicate(String),
    #[error("static-max-validity must be positive")]
    ZeroValidity,
}

/// Collects every problem with `policy`; never panics.
pub fn validate_policy(policy: &Policy, catalog: &Catalog) -> Result<(), Vec<PolicyViolation>> {
    let mut out = Vec::new();
    if policy.id.trim().is_empty() {
        out.push(PolicyViolation::EmptyId);
    }
    out.extend(policy.flow.validate().into_iter().map(PolicyViolation::Pattern));
    let mut seen = BTreeSet::new();
    for pred in &policy.auxiliary {
        if !seen.insert(pred.id.as_str()) {
            out.push(PolicyViolation::DuplicatePredicate(pred.id.clone()));
        }
        for cmp in pred.expr.comparisons() {
            match catalog.get(&cmp.key) {
                None => out.push(PolicyViolation::UnknownAttribute {
                    predicate: pred.id.clone(),
                    key: cmp.key.clone(),
                }),
                Some(decl) => {
                    if let Err(reason) = cmp.type_check(decl.value_type) {
                        out.push(PolicyViolation::PredicateType { predicate: pred.id.clone(), reason });
                    }
                }
            }
        }
    }
    if policy.static_max_validity_ms == 0 {
        out.push(PolicyViolation::ZeroValidity);
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
