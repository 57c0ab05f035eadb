//! PHyperLTL specifications: parsing, well-formedness, quantifier expansion.
//!
//! ```text
//! exists (s1 s2)
//! forall x1 in {q0} (s1)
//! forall x2 in {q5} (s2)
//! Pmax [ F (T@x1 & T@x2) ]
//! ```
//!
//! Declarations are separated by newlines or `;`. Everything after the last
//! quantifier is the body: a Boolean combination (`&`, `|`, `!`, parentheses)
//! of `P [φ] <op> c`, `Pmax [φ]`, `Pmin [φ]`, `Rmin{r} [F ψ]` and
//! `Rmax{r} [F ψ]` (reward `r` summed over all agents, or `r@x` for agent `x`
//! only).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ltl::{parse_ltl, Ltl, LtlError, StateVar};
use crate::mdp::{Mdp, StateId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("formula: {0}")]
    Ltl(#[from] LtlError),
    #[error("undeclared policy variable `{0}`")]
    UndeclaredPolicy(String),
    #[error("negation of an optimization objective")]
    NegatedObjective,
    #[error("ill-formed specification: {0}")]
    IllFormed(String),
    #[error("optimization objectives need a single initial tuple, but the quantifiers expand to {0}")]
    OptimizeNeedsSingleInstance(usize),
}

fn syntax(line: usize, msg: impl Into<String>) -> SpecError {
    SpecError::Syntax { line, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantifier {
    Forall,
    Exists,
}

/// A member of an initial-state set as written in the file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StateRef {
    Index(StateId),
    Label(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentQuant {
    pub mode: Quantifier,
    pub var: String,
    pub init: Vec<StateRef>,
    pub policy: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    pub fn holds(self, value: f64, c: f64) -> bool {
        match self {
            Cmp::Lt => value < c,
            Cmp::Le => value <= c,
            Cmp::Gt => value > c,
            Cmp::Ge => value >= c,
        }
    }

    pub fn negate(self) -> Cmp {
        match self {
            Cmp::Lt => Cmp::Ge,
            Cmp::Le => Cmp::Gt,
            Cmp::Gt => Cmp::Le,
            Cmp::Ge => Cmp::Lt,
        }
    }

    /// Lower-bound comparisons (`>`, `>=`) benefit from maximizing.
    pub fn is_lower_bound(self) -> bool {
        matches!(self, Cmp::Gt | Cmp::Ge)
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    Threshold(Cmp, f64),
    Optimize(Direction),
    /// Expected reward accumulated until the goal `F ψ` (the constraint's
    /// formula) first holds. `agent` restricts the reward to one state variable.
    Reward { dir: Direction, reward: String, agent: Option<String> },
}

impl ConstraintKind {
    pub fn is_objective(&self) -> bool {
        !matches!(self, ConstraintKind::Threshold(..))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbConstraint {
    pub formula: Ltl,
    pub kind: ConstraintKind,
}

/// Positive Boolean combination of constraints (negations already pushed
/// into threshold comparisons).
#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Leaf(usize),
    And(Box<Body>, Box<Body>),
    Or(Box<Body>, Box<Body>),
}

impl Body {
    pub fn leaves(&self, out: &mut Vec<usize>) {
        match self {
            Body::Leaf(i) => out.push(*i),
            Body::And(a, b) | Body::Or(a, b) => {
                a.leaves(out);
                b.leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperFormula {
    pub policy_vars: Vec<String>,
    pub quants: Vec<AgentQuant>,
    pub constraints: Vec<ProbConstraint>,
    pub body: Body,
}

impl HyperFormula {
    pub fn num_agents(&self) -> usize {
        self.quants.len()
    }

    pub fn objective(&self) -> Option<usize> {
        self.constraints.iter().position(|c| c.kind.is_objective())
    }

    /// Agent index of a state variable name.
    pub fn agent_of(&self, var: &str) -> Option<usize> {
        self.quants.iter().position(|q| q.var == var)
    }
}

// ---------------------------------------------------------------- parsing

fn is_ident(s: &str) -> bool {
    let mut c = s.chars();
    matches!(c.next(), Some(ch) if ch.is_ascii_alphabetic() || ch == '_')
        && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_')
}

/// Splits into `(line number, declaration)` pieces, dropping comments.
fn declarations(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        for piece in line.split(';') {
            let p = piece.trim();
            if !p.is_empty() {
                out.push((i + 1, p.to_string()));
            }
        }
    }
    out
}

fn parse_policy_block(line: usize, rest: &str) -> Result<Vec<String>, SpecError> {
    let inner = rest
        .trim()
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| syntax(line, "expected `exists (σ1 σ2 ...)`"))?;
    let vars: Vec<String> = inner.split_whitespace().map(str::to_string).collect();
    if vars.is_empty() {
        return Err(syntax(line, "empty policy-variable list"));
    }
    let mut seen = BTreeSet::new();
    for v in &vars {
        if !is_ident(v) {
            return Err(syntax(line, format!("bad policy variable `{v}`")));
        }
        if !seen.insert(v) {
            return Err(syntax(line, format!("duplicate policy variable `{v}`")));
        }
    }
    Ok(vars)
}

fn parse_quant(
    line: usize,
    mode: Quantifier,
    rest: &str,
    policies: &[String],
) -> Result<AgentQuant, SpecError> {
    // x in {a, b} (s)
    let rest = rest.trim();
    let (var, rest) = rest
        .split_once(char::is_whitespace)
        .ok_or_else(|| syntax(line, "expected `<var> in {...} (<policy>)`"))?;
    if !is_ident(var) {
        return Err(syntax(line, format!("bad state variable `{var}`")));
    }
    let rest = rest
        .trim_start()
        .strip_prefix("in")
        .ok_or_else(|| syntax(line, "expected `in`"))?
        .trim_start();
    let rest = rest.strip_prefix('{').ok_or_else(|| syntax(line, "expected `{`"))?;
    let (set, rest) = rest.split_once('}').ok_or_else(|| syntax(line, "expected `}`"))?;
    let init = set
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if let Ok(i) = t.parse::<usize>() {
                Ok(StateRef::Index(i))
            } else if let Some(i) = t.strip_prefix('q').and_then(|d| d.parse::<usize>().ok()) {
                Ok(StateRef::Index(i))
            } else if is_ident(t) {
                Ok(StateRef::Label(t.to_string()))
            } else {
                Err(syntax(line, format!("bad initial state `{t}`")))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let policy = rest
        .trim()
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .map(str::trim)
        .ok_or_else(|| syntax(line, "expected `(<policy>)` binding"))?;
    let policy = policies
        .iter()
        .position(|p| p == policy)
        .ok_or_else(|| SpecError::UndeclaredPolicy(policy.to_string()))?;
    Ok(AgentQuant { mode, var: var.to_string(), init, policy })
}

/// Negation-aware intermediate body tree.
enum RawBody {
    Leaf(ProbConstraint),
    Not(Box<RawBody>),
    And(Box<RawBody>, Box<RawBody>),
    Or(Box<RawBody>, Box<RawBody>),
}

struct BodyParser<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl BodyParser<'_> {
    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += self.src[self.pos..].chars().next().unwrap().len_utf8();
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, SpecError> {
        Err(syntax(self.line, format!("{} (at body offset {})", msg.into(), self.pos)))
    }

    fn or(&mut self) -> Result<RawBody, SpecError> {
        let mut lhs = self.and()?;
        while self.eat("|") {
            lhs = RawBody::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<RawBody, SpecError> {
        let mut lhs = self.not()?;
        while self.eat("&") {
            lhs = RawBody::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<RawBody, SpecError> {
        if self.eat("!") {
            return Ok(RawBody::Not(Box::new(self.not()?)));
        }
        if self.eat("(") {
            let b = self.or()?;
            if !self.eat(")") {
                return self.err("expected `)`");
            }
            return Ok(b);
        }
        self.constraint().map(RawBody::Leaf)
    }

    fn bracketed_formula(&mut self) -> Result<Ltl, SpecError> {
        if !self.eat("[") {
            return self.err("expected `[`");
        }
        let rest = &self.src[self.pos..];
        let end = match rest.find(']') {
            Some(e) => e,
            None => return self.err("expected `]`"),
        };
        let f = parse_ltl(&rest[..end])?;
        self.pos += end + 1;
        Ok(f)
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
        self.pos += len;
        rest[..len].to_string()
    }

    fn constraint(&mut self) -> Result<ProbConstraint, SpecError> {
        let start = self.pos;
        let kw = self.word();
        match kw.as_str() {
            "P" => {
                let formula = self.bracketed_formula()?;
                let cmp = if self.eat(">=") {
                    Cmp::Ge
                } else if self.eat("<=") {
                    Cmp::Le
                } else if self.eat(">") {
                    Cmp::Gt
                } else if self.eat("<") {
                    Cmp::Lt
                } else {
                    return self.err("expected comparison after `P [...]`");
                };
                self.skip_ws();
                let rest = &self.src[self.pos..];
                let len = rest
                    .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == '-'))
                    .unwrap_or(rest.len());
                let c: f64 = match rest[..len].parse() {
                    Ok(c) => c,
                    Err(_) => return self.err("expected a probability bound"),
                };
                if !(0.0..=1.0).contains(&c) {
                    return self.err(format!("bound {c} outside [0, 1]"));
                }
                self.pos += len;
                Ok(ProbConstraint { formula, kind: ConstraintKind::Threshold(cmp, c) })
            }
            "Pmax" | "Pmin" => {
                let dir = if kw == "Pmax" { Direction::Max } else { Direction::Min };
                let formula = self.bracketed_formula()?;
                Ok(ProbConstraint { formula, kind: ConstraintKind::Optimize(dir) })
            }
            "Rmax" | "Rmin" => {
                let dir = if kw == "Rmax" { Direction::Max } else { Direction::Min };
                if !self.eat("{") {
                    return self.err("expected `{reward}`");
                }
                let rest = &self.src[self.pos..];
                let Some(end) = rest.find('}') else { return self.err("expected `}`") };
                let spec = rest[..end].trim().to_string();
                self.pos += end + 1;
                let (reward, agent) = match spec.split_once('@') {
                    Some((r, a)) => (r.trim().to_string(), Some(a.trim().to_string())),
                    None => (spec, None),
                };
                let formula = self.bracketed_formula()?;
                match &formula {
                    Ltl::Eventually(psi) if psi.is_propositional() => {}
                    _ => {
                        return self.err("reward objectives take a goal of the form `F ψ` with propositional ψ")
                    }
                }
                Ok(ProbConstraint { formula, kind: ConstraintKind::Reward { dir, reward, agent } })
            }
            _ => {
                self.pos = start;
                self.err("expected a probability constraint")
            }
        }
    }
}

fn normalize(
    raw: RawBody,
    negated: bool,
    out: &mut Vec<ProbConstraint>,
) -> Result<Body, SpecError> {
    Ok(match raw {
        RawBody::Leaf(mut c) => {
            if negated {
                match &mut c.kind {
                    ConstraintKind::Threshold(cmp, _) => *cmp = cmp.negate(),
                    _ => return Err(SpecError::NegatedObjective),
                }
            }
            out.push(c);
            Body::Leaf(out.len() - 1)
        }
        RawBody::Not(b) => normalize(*b, !negated, out)?,
        RawBody::And(a, b) => {
            let (a, b) = (normalize(*a, negated, out)?, normalize(*b, negated, out)?);
            if negated {
                Body::Or(Box::new(a), Box::new(b))
            } else {
                Body::And(Box::new(a), Box::new(b))
            }
        }
        RawBody::Or(a, b) => {
            let (a, b) = (normalize(*a, negated, out)?, normalize(*b, negated, out)?);
            if negated {
                Body::And(Box::new(a), Box::new(b))
            } else {
                Body::Or(Box::new(a), Box::new(b))
            }
        }
    })
}

pub fn parse_spec(text: &str) -> Result<HyperFormula, SpecError> {
    let decls = declarations(text);
    let mut it = decls.into_iter().peekable();
    let (line, first) = it.next().ok_or_else(|| syntax(1, "empty specification"))?;
    let policy_vars = match first.strip_prefix("exists") {
        Some(rest) if rest.trim_start().starts_with('(') => parse_policy_block(line, rest)?,
        _ => return Err(syntax(line, "expected `exists (σ1 ...)` policy prefix")),
    };
    let mut quants = Vec::new();
    while let Some((line, d)) = it.peek().cloned() {
        let (mode, rest) = if let Some(r) = d.strip_prefix("forall ") {
            (Quantifier::Forall, r)
        } else if let Some(r) = d.strip_prefix("exists ") {
            if r.trim_start().starts_with('(') {
                return Err(syntax(line, "policy quantifiers cannot alternate"));
            }
            (Quantifier::Exists, r)
        } else {
            break;
        };
        let q = parse_quant(line, mode, rest, &policy_vars)?;
        if quants.iter().any(|x: &AgentQuant| x.var == q.var) {
            return Err(syntax(line, format!("duplicate state variable `{}`", q.var)));
        }
        quants.push(q);
        it.next();
    }
    if quants.is_empty() {
        return Err(syntax(line, "expected at least one agent quantifier"));
    }
    let rest: Vec<(usize, String)> = it.collect();
    let Some(&(body_line, _)) = rest.first() else {
        return Err(syntax(line, "missing body"));
    };
    let body_text = rest.iter().map(|r| r.1.as_str()).collect::<Vec<_>>().join(" ");
    let mut p = BodyParser { src: &body_text, pos: 0, line: body_line };
    let raw = p.or()?;
    p.skip_ws();
    if p.pos != body_text.len() {
        return p.err("trailing input after body");
    }
    let mut constraints = Vec::new();
    let body = normalize(raw, false, &mut constraints)?;
    Ok(HyperFormula { policy_vars, quants, constraints, body })
}

// ------------------------------------------------------- well-formedness

/// Resolves an initial-state set against a model (labels expand to all
/// states carrying them). Unknown references are dropped.
pub fn resolve_init(refs: &[StateRef], m: &Mdp) -> Vec<StateId> {
    let mut out = BTreeSet::new();
    for r in refs {
        match r {
            StateRef::Index(i) if *i < m.num_states() => {
                out.insert(*i);
            }
            StateRef::Index(_) => {}
            StateRef::Label(l) => {
                if let Some(ap) = m.ap_index(l) {
                    out.extend((0..m.num_states()).filter(|&s| m.label(s).contains(ap)));
                }
            }
        }
    }
    out.into_iter().collect()
}

fn tag_name(v: &StateVar) -> String {
    match v {
        StateVar::Index(i) => (i + 1).to_string(),
        StateVar::Name(n) => n.clone(),
    }
}

/// Lists every well-formedness violation; empty means well-formed.
pub fn check_well_formed(h: &HyperFormula, m: &Mdp) -> Vec<String> {
    let mut out = Vec::new();
    for (i, p) in h.policy_vars.iter().enumerate() {
        if !h.quants.iter().any(|q| q.policy == i) {
            out.push(format!("unbound policy variable {p}"));
        }
    }
    for q in &h.quants {
        if q.init.is_empty() {
            out.push(format!("empty initial set for {}", q.var));
            continue;
        }
        for r in &q.init {
            match r {
                StateRef::Index(i) if *i >= m.num_states() => {
                    out.push(format!("initial state {i} of {} out of range", q.var))
                }
                StateRef::Label(l) if resolve_init(std::slice::from_ref(r), m).is_empty() => {
                    out.push(format!("initial set of {} names label `{l}` carried by no state", q.var))
                }
                _ => {}
            }
        }
    }
    let mut unbound = BTreeSet::new();
    for c in &h.constraints {
        for atom in c.formula.atoms() {
            let bound = match &atom.var {
                StateVar::Name(n) => h.agent_of(n).is_some(),
                StateVar::Index(i) => *i < h.num_agents(),
            };
            if !bound {
                unbound.insert(tag_name(&atom.var));
            }
            if m.ap_index(&atom.ap).is_none() {
                out.push(format!("unknown atomic proposition {}", atom.ap));
            }
        }
        if let ConstraintKind::Reward { reward, agent, .. } = &c.kind {
            if m.reward(reward).is_none() {
                out.push(format!("unknown reward structure {reward}"));
            }
            if let Some(a) = agent {
                if h.agent_of(a).is_none() {
                    unbound.insert(a.clone());
                }
            }
        }
    }
    for v in unbound {
        out.push(format!("unbound state variable {v}"));
    }
    if h.constraints.iter().filter(|c| c.kind.is_objective()).count() > 1 {
        out.push("multiple optimization objectives".into());
    }
    out.dedup();
    out
}

// ------------------------------------------------------------- expansion

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bindings {
    pub agent_policy: Vec<usize>,
    pub initial: Vec<StateId>,
    /// Agents bound to each policy variable.
    pub policy_agents: Vec<Vec<usize>>,
}

impl Bindings {
    pub fn num_agents(&self) -> usize {
        self.agent_policy.len()
    }
}

/// And/Or tree over the initial tuples produced by the agent quantifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expansion {
    Leaf(usize),
    And(Vec<Expansion>),
    Or(Vec<Expansion>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Elaborated {
    pub policy_vars: Vec<String>,
    pub agent_policy: Vec<usize>,
    pub policy_agents: Vec<Vec<usize>>,
    /// Constraints with tags rewritten to agent indices.
    pub constraints: Vec<ProbConstraint>,
    /// Agent index of each reward restricted to one agent.
    pub reward_agent: Vec<Option<usize>>,
    pub body: Body,
    /// Initial tuple of every leaf.
    pub instances: Vec<Vec<StateId>>,
    pub tree: Expansion,
}

impl Elaborated {
    pub fn bindings(&self, leaf: usize) -> Bindings {
        Bindings {
            agent_policy: self.agent_policy.clone(),
            initial: self.instances[leaf].clone(),
            policy_agents: self.policy_agents.clone(),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.agent_policy.len()
    }

    pub fn objective(&self) -> Option<usize> {
        self.constraints.iter().position(|c| c.kind.is_objective())
    }
}

/// Expands the agent quantifiers; fails on ill-formed input.
pub fn expand_quantifiers(h: &HyperFormula, m: &Mdp) -> Result<Elaborated, SpecError> {
    let report = check_well_formed(h, m);
    if !report.is_empty() {
        return Err(SpecError::IllFormed(report.join("; ")));
    }
    let agent_policy: Vec<usize> = h.quants.iter().map(|q| q.policy).collect();
    let mut policy_agents = vec![Vec::new(); h.policy_vars.len()];
    for (a, &p) in agent_policy.iter().enumerate() {
        policy_agents[p].push(a);
    }
    let constraints = h
        .constraints
        .iter()
        .map(|c| {
            let formula = c.formula.map_tags(&mut |a| {
                Ok::<_, SpecError>(match &a.var {
                    StateVar::Name(n) => StateVar::Index(h.agent_of(n).expect("checked")),
                    v => v.clone(),
                })
            })?;
            Ok(ProbConstraint { formula, kind: c.kind.clone() })
        })
        .collect::<Result<Vec<_>, SpecError>>()?;
    let reward_agent = h
        .constraints
        .iter()
        .map(|c| match &c.kind {
            ConstraintKind::Reward { agent: Some(a), .. } => h.agent_of(a),
            _ => None,
        })
        .collect();
    let sets: Vec<Vec<StateId>> = h.quants.iter().map(|q| resolve_init(&q.init, m)).collect();
    let mut instances = Vec::new();
    let tree = build_tree(h, &sets, 0, &mut Vec::new(), &mut instances);
    if instances.len() > 1 && h.objective().is_some() {
        return Err(SpecError::OptimizeNeedsSingleInstance(instances.len()));
    }
    Ok(Elaborated {
        policy_vars: h.policy_vars.clone(),
        agent_policy,
        policy_agents,
        constraints,
        reward_agent,
        body: h.body.clone(),
        instances,
        tree,
    })
}

fn build_tree(
    h: &HyperFormula,
    sets: &[Vec<StateId>],
    depth: usize,
    prefix: &mut Vec<StateId>,
    out: &mut Vec<Vec<StateId>>,
) -> Expansion {
    if depth == sets.len() {
        out.push(prefix.clone());
        return Expansion::Leaf(out.len() - 1);
    }
    let mut children: Vec<Expansion> = sets[depth]
        .iter()
        .map(|&s| {
            prefix.push(s);
            let c = build_tree(h, sets, depth + 1, prefix, out);
            prefix.pop();
            c
        })
        .collect();
    if children.len() == 1 {
        return children.pop().unwrap();
    }
    match h.quants[depth].mode {
        Quantifier::Forall => Expansion::And(children),
        Quantifier::Exists => Expansion::Or(children),
    }
}

/// Bijective policy binding, one probability operator, singleton initial sets.
pub fn is_dec_fragment(h: &HyperFormula) -> bool {
    let bijective = h.policy_vars.len() == h.quants.len() && {
        let used: BTreeMap<usize, usize> =
            h.quants.iter().fold(BTreeMap::new(), |mut acc, q| {
                *acc.entry(q.policy).or_insert(0) += 1;
                acc
            });
        used.len() == h.policy_vars.len() && used.values().all(|&c| c == 1)
    };
    let singletons = h.quants.iter().all(|q| q.init.len() == 1 && !matches!(q.init[0], StateRef::Label(_)));
    bijective && h.constraints.len() == 1 && singletons
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpBuilder;

    pub(crate) const MEET: &str = "\
# meeting
exists (s1 s2)
forall x1 in {q0} (s1)
forall x2 in {q5} (s2)
Pmax [ F (T@x1 & T@x2) ]
";

    const ISO: &str = "exists (s)
forall x1 in {0} (s)
forall x2 in {3} (s)
Pmax [ ((!T@x1 & !T@x2) U (T@x1 & T@x2)) | ((!S@x1 & !S@x2 & !T@x1 & !T@x2) U (S@x1 & S@x2)) ]";

    const NONINTER: &str = "exists (a1 a2a a2b)
forall y1 in {0} (a1); forall y2 in {0} (a1)
forall z1 in {5} (a2a); forall z2 in {5} (a2b)
Pmax [ ((!goal@y1) U goal@z1) xor ((!goal@y2) U goal@z2) ]";

    fn model() -> Mdp {
        let mut b = MdpBuilder::with_counts(6, 1, &["T", "S", "goal", "start"]);
        for s in 0..6 {
            b.transition(s, 0, s, 1.0);
        }
        b.label(2, 0).label(4, 1).label(0, 3).label(1, 3);
        b.reward("cost", 0, 0, 1.0);
        b.build().unwrap()
    }

    #[test]
    fn meeting_spec() {
        let h = parse_spec(MEET).unwrap();
        assert_eq!(h.policy_vars, vec!["s1", "s2"]);
        assert_eq!(h.quants.len(), 2);
        assert!(h.quants.iter().all(|q| q.mode == Quantifier::Forall));
        assert_eq!(h.constraints[0].kind, ConstraintKind::Optimize(Direction::Max));
        assert!(check_well_formed(&h, &model()).is_empty());
        let e = expand_quantifiers(&h, &model()).unwrap();
        assert_eq!(e.instances, vec![vec![0, 5]]);
        assert_eq!(e.constraints[0].formula, parse_ltl("F (T@1 & T@2)").unwrap());
        assert!(is_dec_fragment(&h));
    }

    #[test]
    fn single_line_form() {
        let h = parse_spec("exists (s1 s2); forall x1 in {q0} (s1); forall x2 in {q5} (s2); Pmax [ F (T@x1 & T@x2) ]").unwrap();
        assert_eq!(h, parse_spec(MEET).unwrap());
    }

    #[test]
    fn iso_spec() {
        let h = parse_spec(ISO).unwrap();
        assert_eq!(h.policy_vars.len(), 1);
        assert_eq!(h.quants.iter().map(|q| q.policy).collect::<Vec<_>>(), vec![0, 0]);
        assert!(!is_dec_fragment(&h));
    }

    #[test]
    fn noninter_not_dec() {
        let h = parse_spec(NONINTER).unwrap();
        assert_eq!(h.quants.len(), 4);
        assert!(!is_dec_fragment(&h));
    }

    #[test]
    fn undeclared_policy_binding() {
        let e = parse_spec("exists (s1)\nforall x in {0} (s3)\nPmax [F T@x]").unwrap_err();
        assert_eq!(e, SpecError::UndeclaredPolicy("s3".into()));
    }

    #[test]
    fn unbound_state_variable() {
        let h = parse_spec("exists (s1)\nforall x1 in {0} (s1)\nPmax [F (T@x1 & T@x3)]").unwrap();
        assert_eq!(check_well_formed(&h, &model()), vec!["unbound state variable x3"]);
    }

    #[test]
    fn multiple_objectives() {
        let h = parse_spec("exists (s1)\nforall x1 in {0} (s1)\nPmax [F T@x1] & Pmin [F S@x1]").unwrap();
        assert_eq!(check_well_formed(&h, &model()), vec!["multiple optimization objectives"]);
    }

    #[test]
    fn other_violations() {
        let h = parse_spec("exists (s1 s2)\nforall x1 in {9} (s1)\nforall x2 in {nolabel} (s1)\nP [F T@x1] >= 0.5").unwrap();
        let r = check_well_formed(&h, &model());
        assert!(r.contains(&"unbound policy variable s2".to_string()));
        assert!(r.contains(&"initial state 9 of x1 out of range".to_string()));
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn forall_expands_to_conjunction() {
        let h = parse_spec("exists (s)\nforall x in {0, 1} (s)\nforall y in {3} (s)\nP [F T@x] >= 0.5").unwrap();
        let e = expand_quantifiers(&h, &model()).unwrap();
        assert_eq!(e.instances, vec![vec![0, 3], vec![1, 3]]);
        assert_eq!(e.tree, Expansion::And(vec![Expansion::Leaf(0), Expansion::Leaf(1)]));
    }

    #[test]
    fn exists_expands_to_disjunction() {
        let h = parse_spec("exists (s)\nexists x in {start} (s)\nP [F T@x] > 0.1").unwrap();
        let e = expand_quantifiers(&h, &model()).unwrap();
        assert_eq!(e.instances, vec![vec![0], vec![1]]);
        assert_eq!(e.tree, Expansion::Or(vec![Expansion::Leaf(0), Expansion::Leaf(1)]));
    }

    #[test]
    fn optimize_rejects_multiple_instances() {
        let h = parse_spec("exists (s)\nforall x in {0, 1} (s)\nPmax [F T@x]").unwrap();
        assert_eq!(
            expand_quantifiers(&h, &model()).unwrap_err(),
            SpecError::OptimizeNeedsSingleInstance(2)
        );
    }

    #[test]
    fn negation_flips_thresholds() {
        let h = parse_spec("exists (s)\nforall x in {0} (s)\n!(P [F T@x] >= 0.5 & P [G !S@x] < 0.2)").unwrap();
        assert!(matches!(h.body, Body::Or(..)));
        assert_eq!(h.constraints[0].kind, ConstraintKind::Threshold(Cmp::Lt, 0.5));
        assert_eq!(h.constraints[1].kind, ConstraintKind::Threshold(Cmp::Ge, 0.2));
        let e = parse_spec("exists (s)\nforall x in {0} (s)\n!Pmax [F T@x]").unwrap_err();
        assert_eq!(e, SpecError::NegatedObjective);
    }

    #[test]
    fn reward_objective() {
        let h = parse_spec("exists (s)\nforall x in {0} (s)\nRmin{cost@x} [F T@x]").unwrap();
        assert_eq!(
            h.constraints[0].kind,
            ConstraintKind::Reward { dir: Direction::Min, reward: "cost".into(), agent: Some("x".into()) }
        );
        let e = expand_quantifiers(&h, &model()).unwrap();
        assert_eq!(e.reward_agent, vec![Some(0)]);
        assert!(parse_spec("exists (s)\nforall x in {0} (s)\nRmin{cost} [G T@x]").is_err());
    }

    #[test]
    fn leaf_count_is_product() {
        let h = parse_spec("exists (s)\nforall x in {0,1,2} (s)\nexists y in {3,4} (s)\nP [F T@x] >= 0.5").unwrap();
        let e = expand_quantifiers(&h, &model()).unwrap();
        assert_eq!(e.instances.len(), 6);
    }
}
