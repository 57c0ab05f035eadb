//! Tableau translation from LTL to state-based Büchi automata.

use std::collections::{BTreeSet, HashMap, VecDeque};

use super::cube::{Cube, TaggedAp};
use super::AutomataError;
use crate::ltl::{Ltl, StateVar};

/// Nondeterministic Büchi automaton with cube-labelled edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Nba {
    pub aps: Vec<TaggedAp>,
    pub initial: Vec<usize>,
    pub edges: Vec<Vec<(Cube, usize)>>,
    pub accepting: Vec<bool>,
}

impl Nba {
    pub fn num_states(&self) -> usize {
        self.edges.len()
    }

    /// Single initial state and pairwise disjoint guards in every state.
    pub fn is_deterministic(&self) -> bool {
        self.initial.len() == 1
            && self.edges.iter().all(|es| {
                es.iter()
                    .enumerate()
                    .all(|(i, a)| es[i + 1..].iter().all(|b| !a.0.intersects(b.0)))
            })
    }

    /// Accepting-run check on a lasso of valuations (reference semantics for tests).
    pub fn accepts_valuations(&self, prefix: &[u64], cycle: &[u64]) -> bool {
        // Product of the NBA with the lasso positions; accept iff some
        // reachable accepting node lies on a cycle.
        let p = prefix.len();
        let len = p + cycle.len();
        let val = |i: usize| if i < p { prefix[i] } else { cycle[i - p] };
        let succ_pos = |i: usize| if i + 1 < len { i + 1 } else { p };
        let n = self.num_states();
        let id = |q: usize, i: usize| q * len + i;
        let mut adj = vec![Vec::new(); n * len];
        for q in 0..n {
            for i in 0..len {
                for &(c, t) in &self.edges[q] {
                    if c.matches(val(i)) {
                        adj[id(q, i)].push(id(t, succ_pos(i)));
                    }
                }
            }
        }
        let mut seen = vec![false; n * len];
        let mut stack: Vec<usize> = self.initial.iter().map(|&q| id(q, 0)).collect();
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        let sccs = crate::graph::tarjan_scc(n * len, &seen, |v, out| out.extend(&adj[v]));
        sccs.iter().any(|c| {
            let nontrivial = c.len() > 1 || adj[c[0]].contains(&c[0]);
            nontrivial && c.iter().any(|&v| self.accepting[v / len])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Node {
    True,
    False,
    Lit(usize, bool),
    And(usize, usize),
    Or(usize, usize),
    Next(usize),
    Until(usize, usize),
    Release(usize, usize),
}

/// Hash-consed NNF formulas.
#[derive(Default)]
struct Arena {
    nodes: Vec<Node>,
    ids: HashMap<Node, usize>,
    prop: Vec<bool>,
}

impl Arena {
    fn intern(&mut self, n: Node) -> usize {
        if let Some(&id) = self.ids.get(&n) {
            return id;
        }
        let prop = match n {
            Node::True | Node::False | Node::Lit(..) => true,
            Node::And(a, b) | Node::Or(a, b) => self.prop[a] && self.prop[b],
            _ => false,
        };
        let id = self.nodes.len();
        self.nodes.push(n);
        self.prop.push(prop);
        self.ids.insert(n, id);
        id
    }

    fn build(&mut self, f: &Ltl, aps: &[TaggedAp]) -> Result<usize, AutomataError> {
        let n = match f {
            Ltl::True => Node::True,
            Ltl::False => Node::False,
            Ltl::Atom(a) => Node::Lit(ap_index(aps, a)?, true),
            Ltl::Not(x) => match &**x {
                Ltl::Atom(a) => Node::Lit(ap_index(aps, a)?, false),
                _ => return Err(AutomataError::NotNnf),
            },
            Ltl::And(x, y) => Node::And(self.build(x, aps)?, self.build(y, aps)?),
            Ltl::Or(x, y) => Node::Or(self.build(x, aps)?, self.build(y, aps)?),
            Ltl::Next(x) => Node::Next(self.build(x, aps)?),
            Ltl::Until(x, y) => Node::Until(self.build(x, aps)?, self.build(y, aps)?),
            Ltl::Release(x, y) => Node::Release(self.build(x, aps)?, self.build(y, aps)?),
            Ltl::Eventually(x) => {
                let t = self.intern(Node::True);
                Node::Until(t, self.build(x, aps)?)
            }
            Ltl::Globally(x) => {
                let ff = self.intern(Node::False);
                Node::Release(ff, self.build(x, aps)?)
            }
            Ltl::Implies(..) | Ltl::Xor(..) => return Err(AutomataError::NotNnf),
        };
        Ok(self.intern(n))
    }

    /// Negation of a propositional node.
    fn negate(&mut self, id: usize) -> usize {
        let n = match self.nodes[id] {
            Node::True => Node::False,
            Node::False => Node::True,
            Node::Lit(v, s) => Node::Lit(v, !s),
            Node::And(a, b) => {
                let (na, nb) = (self.negate(a), self.negate(b));
                Node::Or(na, nb)
            }
            Node::Or(a, b) => {
                let (na, nb) = (self.negate(a), self.negate(b));
                Node::And(na, nb)
            }
            _ => unreachable!("negate on temporal node"),
        };
        self.intern(n)
    }
}

fn ap_index(aps: &[TaggedAp], a: &crate::ltl::Atom) -> Result<usize, AutomataError> {
    let StateVar::Index(agent) = a.var else {
        return Err(AutomataError::UnresolvedTag(a.to_string()));
    };
    Ok(aps
        .iter()
        .position(|t| t.name == a.ap && t.agent == agent)
        .expect("proposition list covers all atoms"))
}

/// Sorted list of the tagged propositions of a formula.
pub fn formula_aps(f: &Ltl) -> Result<Vec<TaggedAp>, AutomataError> {
    let mut set = BTreeSet::new();
    for a in f.atoms() {
        match a.var {
            StateVar::Index(agent) => {
                set.insert(TaggedAp { name: a.ap.clone(), agent });
            }
            StateVar::Name(_) => return Err(AutomataError::UnresolvedTag(a.to_string())),
        }
    }
    if set.len() > 64 {
        return Err(AutomataError::TooManyAps(set.len()));
    }
    Ok(set.into_iter().collect())
}

struct Cover {
    cube: Cube,
    next: BTreeSet<usize>,
    postponed: BTreeSet<usize>,
}

fn expand(
    arena: &mut Arena,
    mut todo: Vec<usize>,
    mut done: BTreeSet<usize>,
    cube: Cube,
    mut next: BTreeSet<usize>,
    mut postponed: BTreeSet<usize>,
    out: &mut Vec<Cover>,
) {
    let mut cube = cube;
    while let Some(f) = todo.pop() {
        if !done.insert(f) {
            continue;
        }
        match arena.nodes[f] {
            Node::True => {}
            Node::False => return,
            Node::Lit(v, s) => match cube.and(Cube::literal(v, s)) {
                Some(c) => cube = c,
                None => return,
            },
            Node::And(a, b) => {
                todo.push(a);
                todo.push(b);
            }
            Node::Next(a) => {
                next.insert(a);
            }
            Node::Or(a, b) => {
                let mut t1 = todo.clone();
                t1.push(a);
                expand(arena, t1, done.clone(), cube, next.clone(), postponed.clone(), out);
                todo.push(b);
                if arena.prop[a] {
                    todo.push(arena.negate(a));
                }
            }
            Node::Until(a, b) => {
                let mut t1 = todo.clone();
                t1.push(b);
                expand(arena, t1, done.clone(), cube, next.clone(), postponed.clone(), out);
                todo.push(a);
                if arena.prop[b] {
                    todo.push(arena.negate(b));
                }
                next.insert(f);
                postponed.insert(f);
            }
            Node::Release(a, b) => {
                let mut t1 = todo.clone();
                t1.push(a);
                t1.push(b);
                expand(arena, t1, done.clone(), cube, next.clone(), postponed.clone(), out);
                todo.push(b);
                if arena.prop[a] {
                    todo.push(arena.negate(a));
                }
                next.insert(f);
            }
        }
    }
    out.push(Cover { cube, next, postponed });
}

/// Translates an NNF formula into a state-based Büchi automaton.
pub fn ltl_to_nba(f: &Ltl, cap: usize) -> Result<Nba, AutomataError> {
    let aps = formula_aps(f)?;
    ltl_to_nba_over(f, aps, cap)
}

pub(crate) fn ltl_to_nba_over(f: &Ltl, aps: Vec<TaggedAp>, cap: usize) -> Result<Nba, AutomataError> {
    let mut arena = Arena::default();
    let root = arena.build(f, &aps)?;
    let untils: Vec<usize> = (0..arena.nodes.len())
        .filter(|&i| matches!(arena.nodes[i], Node::Until(..)))
        .collect();
    let k = untils.len();

    // Generalized automaton over obligation sets.
    let mut tg_ids: HashMap<BTreeSet<usize>, usize> = HashMap::new();
    let mut tg_states: Vec<BTreeSet<usize>> = Vec::new();
    let mut tg_edges: Vec<Vec<(Cube, usize, Vec<bool>)>> = Vec::new();
    let init: BTreeSet<usize> = [root].into();
    tg_ids.insert(init.clone(), 0);
    tg_states.push(init);
    let mut i = 0;
    while i < tg_states.len() {
        let mut covers = Vec::new();
        let todo: Vec<usize> = tg_states[i].iter().copied().collect();
        expand(&mut arena, todo, BTreeSet::new(), Cube::TRUE, BTreeSet::new(), BTreeSet::new(), &mut covers);
        let mut edges = Vec::new();
        for c in covers {
            let id = match tg_ids.get(&c.next) {
                Some(&id) => id,
                None => {
                    let id = tg_states.len();
                    if id >= cap {
                        return Err(AutomataError::NbaCap(cap));
                    }
                    tg_ids.insert(c.next.clone(), id);
                    tg_states.push(c.next);
                    id
                }
            };
            let marks: Vec<bool> = untils.iter().map(|u| !c.postponed.contains(u)).collect();
            if !edges.contains(&(c.cube, id, marks.clone())) {
                edges.push((c.cube, id, marks));
            }
        }
        tg_edges.push(edges);
        i += 1;
    }

    // Degeneralize with a level counter; level k is the accepting copy.
    let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut states: Vec<(usize, usize)> = Vec::new();
    let mut edges: Vec<Vec<(Cube, usize)>> = Vec::new();
    let mut queue = VecDeque::new();
    ids.insert((0, 0), 0);
    states.push((0, 0));
    queue.push_back(0);
    while let Some(s) = queue.pop_front() {
        let (q, level) = states[s];
        let start = if level == k { 0 } else { level };
        let mut out: Vec<(Cube, usize)> = Vec::new();
        for (cube, t, marks) in &tg_edges[q] {
            let mut l = start;
            while l < k && marks[l] {
                l += 1;
            }
            let key = (*t, l);
            let id = match ids.get(&key) {
                Some(&id) => id,
                None => {
                    let id = states.len();
                    if id >= cap {
                        return Err(AutomataError::NbaCap(cap));
                    }
                    ids.insert(key, id);
                    states.push(key);
                    queue.push_back(id);
                    id
                }
            };
            if !out.contains(&(*cube, id)) {
                out.push((*cube, id));
            }
        }
        if edges.len() <= s {
            edges.resize(s + 1, Vec::new());
        }
        edges[s] = out;
    }
    edges.resize(states.len(), Vec::new());
    let accepting = states.iter().map(|&(_, l)| l == k).collect();
    Ok(Nba { aps, initial: vec![0], edges, accepting })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::{parse_ltl, to_nnf};

    fn nba(s: &str) -> Nba {
        ltl_to_nba(&to_nnf(&parse_ltl(s).unwrap()), 4096).unwrap()
    }

    #[test]
    fn eventually_two_states() {
        let n = nba("F a@1");
        assert_eq!(n.num_states(), 2);
        assert!(n.is_deterministic());
        assert_eq!(n.accepting.iter().filter(|&&a| a).count(), 1);
    }

    #[test]
    fn globally_one_state() {
        let n = nba("G a@1");
        assert_eq!(n.num_states(), 1);
        assert!(n.accepting[0]);
        assert_eq!(n.edges[0], vec![(Cube::literal(0, true), 0)]);
    }

    #[test]
    fn until_two_states() {
        let n = nba("a@1 U b@1");
        assert_eq!(n.num_states(), 2);
        assert!(n.is_deterministic());
    }

    #[test]
    fn cap_enforced() {
        let f = to_nnf(&parse_ltl("F a@1 & F b@1 & F c@1 & F d@1").unwrap());
        assert_eq!(ltl_to_nba(&f, 3), Err(AutomataError::NbaCap(3)));
    }
}
