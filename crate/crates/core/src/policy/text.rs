//! Policy file format.
//!
//! ```text
//! # comment
//! policy: goose-trip
//! action: GRANT
//! static-max-validity: 60000
//! nexthop: dep-b
//! flow: eth { dst-mac prefix 01:0c:cd
//!   goose { appid == 5 } }
//! aux: a1 && (a2 || a3)
//! a1: breaker-position == "closed"
//! a2: mode == "maintenance"
//! a3: load < 10.5 || !(bay-id == 4)
//! ```
//!
//! `aux` operators bind `!` tighter than `&&`, `&&` tighter than `^`, and
//! `^` tighter than `||`. A file may hold several policies; each starts with
//! a `policy:` line. The flow value may span lines until its braces balance.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{AttrValue, AuxExpr, AuxiliaryPredicate, CmpOp, Comparison, Policy, PredicateTree};
use crate::pattern::text::parse_flow;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct PolicyTextError {
    pub line: usize,
    pub reason: String,
}

fn err<T>(line: usize, reason: impl Into<String>) -> Result<T, PolicyTextError> {
    Err(PolicyTextError { line, reason: reason.into() })
}

const HEADERS: [&str; 6] = ["policy", "action", "static-max-validity", "nexthop", "flow", "aux"];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Literal(AttrValue),
    Op(CmpOp),
    Not,
    And,
    Or,
    Xor,
    Open,
    Close,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')
}

fn tokenize(s: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match c {
            _ if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Tok::Open);
                i += 1
            }
            ')' => {
                out.push(Tok::Close);
                i += 1
            }
            '^' => {
                out.push(Tok::Xor);
                i += 1
            }
            '&' if next == Some('&') => {
                out.push(Tok::And);
                i += 2
            }
            '|' if next == Some('|') => {
                out.push(Tok::Or);
                i += 2
            }
            '=' if next == Some('=') => {
                out.push(Tok::Op(CmpOp::Eq));
                i += 2
            }
            '!' if next == Some('=') => {
                out.push(Tok::Op(CmpOp::Ne));
                i += 2
            }
            '!' => {
                out.push(Tok::Not);
                i += 1
            }
            '<' | '>' => {
                let eq = next == Some('=');
                out.push(Tok::Op(match (c, eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    _ => CmpOp::Ge,
                }));
                i += if eq { 2 } else { 1 };
            }
            '"' => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    i += if chars[i] == '\\' { 2 } else { 1 };
                }
                if i >= chars.len() {
                    return Err("unterminated string".into());
                }
                i += 1;
                let raw: String = chars[start..i].iter().collect();
                out.push(Tok::Literal(AttrValue::parse_literal(&raw).ok_or("bad string literal")?));
            }
            _ if is_ident_char(c) => {
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let numeric = word.starts_with(|c: char| c.is_ascii_digit() || c == '-') && word.parse::<f64>().is_ok();
                match word.as_str() {
                    "true" => out.push(Tok::Literal(AttrValue::Bool(true))),
                    "false" => out.push(Tok::Literal(AttrValue::Bool(false))),
                    _ if numeric => out.push(Tok::Literal(
                        AttrValue::parse_literal(&word).ok_or_else(|| format!("bad number '{word}'"))?,
                    )),
                    _ => out.push(Tok::Ident(word)),
                }
            }
            _ => return Err(format!("unexpected character '{c}'")),
        }
    }
    Ok(out)
}

struct Cursor {
    toks: Vec<Tok>,
    pos: usize,
}

impl Cursor {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_close(&mut self) -> Result<(), String> {
        if self.eat(&Tok::Close) {
            Ok(())
        } else {
            Err("expected ')'".into())
        }
    }

    fn finish(&self) -> Result<(), String> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(format!("unexpected {t:?}")),
        }
    }
}

/// Parses a predicate body: comparisons joined by `||`, with `!` and parens.
pub fn parse_aux_expr(s: &str) -> Result<AuxExpr, String> {
    fn disj(c: &mut Cursor) -> Result<AuxExpr, String> {
        let mut items = vec![term(c)?];
        while c.eat(&Tok::Or) {
            items.push(term(c)?);
        }
        Ok(if items.len() == 1 { items.pop().expect("one item") } else { AuxExpr::Any(items) })
    }
    fn term(c: &mut Cursor) -> Result<AuxExpr, String> {
        match c.bump() {
            Some(Tok::Not) => Ok(AuxExpr::Not(Box::new(term(c)?))),
            Some(Tok::Open) => {
                let e = disj(c)?;
                c.expect_close()?;
                Ok(e)
            }
            Some(Tok::Ident(key)) => {
                let Some(Tok::Op(op)) = c.bump() else {
                    return Err(format!("expected comparison operator after '{key}'"));
                };
                let Some(Tok::Literal(literal)) = c.bump() else {
                    return Err(format!("expected literal after '{key} {}'", op.symbol()));
                };
                Ok(AuxExpr::Compare(Comparison { key, op, literal }))
            }
            other => Err(format!("expected comparison, found {other:?}")),
        }
    }
    let mut c = Cursor { toks: tokenize(s)?, pos: 0 };
    let e = disj(&mut c)?;
    c.finish()?;
    Ok(e)
}

/// Parses an `aux` expression over the named predicate definitions.
pub fn parse_tree(s: &str, defs: &BTreeMap<String, AuxExpr>) -> Result<PredicateTree, String> {
    type Defs = BTreeMap<String, AuxExpr>;
    fn or(c: &mut Cursor, d: &Defs) -> Result<PredicateTree, String> {
        let mut t = xor(c, d)?;
        while c.eat(&Tok::Or) {
            t = PredicateTree::or(t, xor(c, d)?);
        }
        Ok(t)
    }
    fn xor(c: &mut Cursor, d: &Defs) -> Result<PredicateTree, String> {
        let mut t = and(c, d)?;
        while c.eat(&Tok::Xor) {
            t = PredicateTree::xor(t, and(c, d)?);
        }
        Ok(t)
    }
    fn and(c: &mut Cursor, d: &Defs) -> Result<PredicateTree, String> {
        let mut t = unary(c, d)?;
        while c.eat(&Tok::And) {
            t = PredicateTree::and(t, unary(c, d)?);
        }
        Ok(t)
    }
    fn unary(c: &mut Cursor, d: &Defs) -> Result<PredicateTree, String> {
        match c.bump() {
            Some(Tok::Not) => Ok(PredicateTree::not(unary(c, d)?)),
            Some(Tok::Open) => {
                let t = or(c, d)?;
                c.expect_close()?;
                Ok(t)
            }
            Some(Tok::Ident(id)) => {
                let expr = d.get(&id).ok_or_else(|| format!("undefined predicate '{id}'"))?;
                Ok(PredicateTree::leaf(AuxiliaryPredicate::new(&id, expr.clone())))
            }
            other => Err(format!("expected predicate id, found {other:?}")),
        }
    }
    let mut c = Cursor { toks: tokenize(s)?, pos: 0 };
    let t = or(&mut c, defs)?;
    c.finish()?;
    Ok(t)
}

#[derive(Default)]
struct Draft {
    line: usize,
    id: String,
    action: Option<String>,
    validity: Option<String>,
    nexthop: Option<String>,
    flow: Option<(usize, String)>,
    aux: Option<(usize, String)>,
    defs: Vec<(usize, String, String)>,
}

impl Draft {
    fn build(self) -> Result<Policy, PolicyTextError> {
        let line = self.line;
        let action = match &self.action {
            Some(a) => a.parse().or_else(|e: String| err(line, e))?,
            None => Default::default(),
        };
        let Some((flow_line, flow_text)) = &self.flow else {
            return err(line, format!("policy '{}' has no flow", self.id));
        };
        let flow = parse_flow(flow_text).or_else(|e| err(*flow_line, e.to_string()))?;
        let mut policy = Policy::new(&self.id, action, flow);
        if let Some(v) = &self.validity {
            policy.static_max_validity_ms =
                v.parse().or_else(|_| err(line, format!("bad static-max-validity '{v}'")))?;
        }
        if let Some(n) = &self.nexthop {
            policy.nexthop = n.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        }
        let mut defs = BTreeMap::new();
        for (l, id, body) in &self.defs {
            let expr = parse_aux_expr(body).or_else(|e| err(*l, e))?;
            if defs.insert(id.clone(), expr).is_some() {
                return err(*l, format!("predicate '{id}' defined twice"));
            }
        }
        match &self.aux {
            Some((l, expr)) => {
                let tree = parse_tree(expr, &defs).or_else(|e| err(*l, e))?;
                if let Some(problem) = tree.validate().into_iter().next() {
                    return err(*l, problem);
                }
                let used: Vec<&str> = tree.leaves().iter().map(|p| p.id.as_str()).collect();
                if let Some(unused) = defs.keys().find(|k| !used.contains(&k.as_str())) {
                    return err(*l, format!("predicate '{unused}' is not used in aux"));
                }
                policy = policy.with_tree(&tree);
            }
            None => {
                if let Some((l, id, _)) = self.defs.first() {
                    return err(*l, format!("predicate '{id}' defined without an aux line"));
                }
            }
        }
        Ok(policy)
    }
}

fn brace_balance(s: &str) -> i64 {
    s.chars().map(|c| match c {
        '{' => 1,
        '}' => -1,
        _ => 0,
    }).sum()
}

/// Parses every policy in `text`.
pub fn parse_policies(text: &str) -> Result<Vec<Policy>, PolicyTextError> {
    let mut out = Vec::new();
    let mut draft: Option<Draft> = None;
    let mut open_flow: i64 = 0;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if open_flow > 0 {
            let Some(d) = draft.as_mut() else { unreachable!("flow continuation without policy") };
            let (_, flow) = d.flow.as_mut().expect("open flow");
            flow.push('\n');
            flow.push_str(line);
            open_flow += brace_balance(line);
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return err(n, format!("expected 'key: value', got '{line}'"));
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "policy" {
            if let Some(d) = draft.take() {
                out.push(d.build()?);
            }
            if value.is_empty() {
                return err(n, "empty policy id");
            }
            draft = Some(Draft { line: n, id: value.to_string(), ..Default::default() });
            continue;
        }
        let Some(d) = draft.as_mut() else {
            return err(n, "expected 'policy: <id>' first");
        };
        let slot = match key {
            "action" => &mut d.action,
            "static-max-validity" => &mut d.validity,
            "nexthop" => &mut d.nexthop,
            "flow" => {
                if d.flow.is_some() {
                    return err(n, "duplicate 'flow'");
                }
                d.flow = Some((n, value.to_string()));
                open_flow = brace_balance(value);
                continue;
            }
            "aux" => {
                if d.aux.is_some() {
                    return err(n, "duplicate 'aux'");
                }
                d.aux = Some((n, value.to_string()));
                continue;
            }
            id if !id.is_empty() && id.chars().all(is_ident_char) && !HEADERS.contains(&id) => {
                d.defs.push((n, id.to_string(), value.to_string()));
                continue;
            }
            other => return err(n, format!("bad key '{other}'")),
        };
        if slot.is_some() {
            return err(n, format!("duplicate '{key}'"));
        }
        *slot = Some(value.to_string());
    }
    if open_flow > 0 {
        return err(text.lines().count(), "unbalanced braces in flow");
    }
    if let Some(d) = draft {
        out.push(d.build()?);
    }
    Ok(out)
}

/// Parses a file holding exactly one policy.
pub fn parse_policy(text: &str) -> Result<Policy, PolicyTextError> {
    let mut all = parse_policies(text)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        n => err(0, format!("expected one policy, found {n}")),
    }
}

/// Renders a policy in the file format; the output parses back to `policy`.
pub fn format_policy(policy: &Policy) -> String {
    let mut s = format!(
        "policy: {}\naction: {}\nstatic-max-validity: {}\n",
        policy.id, policy.action, policy.static_max_validity_ms
    );
    if !policy.nexthop.is_empty() {
        s += &format!("nexthop: {}\n", policy.nexthop.iter().cloned().collect::<Vec<_>>().join(", "));
    }
    s += &format!("flow: {}\n", policy.flow);
    if !policy.auxiliary.is_empty() {
        let ids: Vec<&str> = policy.auxiliary.iter().map(|p| p.id.as_str()).collect();
        s += &format!("aux: {}\n", ids.join(" && "));
        for p in &policy.auxiliary {
            s += &format!("{}: {}\n", p.id, p.expr);
        }
    }
    s
}

pub fn format_policies(policies: &[Policy]) -> String {
    policies.iter().map(format_policy).collect::<Vec<_>>().join("\n")
}
