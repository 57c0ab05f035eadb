//! Deterministic Rabin automata over cube-labelled letters.

use std::collections::{BTreeMap, HashMap, VecDeque};

use super::cube::{partition, table_to_cubes, Cube, TaggedAp};
use super::AutomataError;
use crate::ltl::LassoWord;

/// Letter spaces up to this many propositions are minimized by enumeration.
pub const MINIMIZE_MAX_APS: usize = 12;

/// Rabin pair: accept if `l` is visited finitely often and `k` infinitely often.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RabinPair {
    pub l: Vec<bool>,
    pub k: Vec<bool>,
}

impl RabinPair {
    pub fn new(n: usize, l: &[usize], k: &[usize]) -> Self {
        let mut p = RabinPair { l: vec![false; n], k: vec![false; n] };
        for &q in l {
            p.l[q] = true;
        }
        for &q in k {
            p.k[q] = true;
        }
        p
    }

    /// Rabin condition on the set of states visited infinitely often.
    pub fn accepts(&self, inf: &[usize]) -> bool {
        inf.iter().all(|&q| !self.l[q]) && inf.iter().any(|&q| self.k[q])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dra {
    aps: Vec<TaggedAp>,
    init: usize,
    trans: Vec<Vec<(Cube, usize)>>,
    pairs: Vec<RabinPair>,
}

impl Dra {
    pub fn new(
        aps: Vec<TaggedAp>,
        init: usize,
        trans: Vec<Vec<(Cube, usize)>>,
        pairs: Vec<RabinPair>,
    ) -> Self {
        Dra { aps, init, trans, pairs }
    }

    pub fn aps(&self) -> &[TaggedAp] {
        &self.aps
    }

    pub fn initial(&self) -> usize {
        self.init
    }

    pub fn num_states(&self) -> usize {
        self.trans.len()
    }

    pub fn edges(&self, q: usize) -> &[(Cube, usize)] {
        &self.trans[q]
    }

    pub fn pairs(&self) -> &[RabinPair] {
        &self.pairs
    }

    /// Number of agents the alphabet refers to.
    pub fn arity(&self) -> usize {
        self.aps.iter().map(|a| a.agent + 1).max().unwrap_or(0)
    }

    /// Successor on a concrete valuation of [`Dra::aps`].
    pub fn step(&self, q: usize, valuation: u64) -> usize {
        self.trans[q]
            .iter()
            .find(|(c, _)| c.matches(valuation))
            .map(|e| e.1)
            .expect("transition function is total")
    }

    /// Valuation of the proposition list on one letter of a lasso word.
    pub fn valuation(&self, letter: &crate::ltl::Letter) -> u64 {
        let mut v = 0u64;
        for (i, ap) in self.aps.iter().enumerate() {
            if letter[ap.agent].contains(&ap.name) {
                v |= 1 << i;
            }
        }
        v
    }

    /// Guards of every state are pairwise disjoint and cover all letters.
    pub fn is_deterministic(&self) -> bool {
        let k = self.aps.len();
        self.trans.iter().all(|es| {
            let disjoint = es
                .iter()
                .enumerate()
                .all(|(i, a)| es[i + 1..].iter().all(|b| !a.0.intersects(b.0)));
            let volume: u128 = es.iter().map(|e| e.0.volume(k)).sum();
            disjoint && volume == 1u128 << k
        })
    }

    /// States visited infinitely often by the run on `prefix · loop^ω`.
    pub fn infinity_set(&self, prefix: &[u64], cycle: &[u64]) -> Vec<usize> {
        let mut q = self.init;
        for &v in prefix {
            q = self.step(q, v);
        }
        let mut loop_starts: HashMap<usize, usize> = HashMap::new();
        let mut visits: Vec<Vec<usize>> = Vec::new();
        loop {
            if let Some(&first) = loop_starts.get(&q) {
                let mut inf: Vec<usize> = visits[first..].concat();
                inf.sort_unstable();
                inf.dedup();
                return inf;
            }
            loop_starts.insert(q, visits.len());
            let mut seen = Vec::with_capacity(cycle.len());
            for &v in cycle {
                seen.push(q);
                q = self.step(q, v);
            }
            visits.push(seen);
        }
    }

    pub fn accepts_valuations(&self, prefix: &[u64], cycle: &[u64]) -> bool {
        let inf = self.infinity_set(prefix, cycle);
        self.pairs.iter().any(|p| p.accepts(&inf))
    }

    /// Merges states with identical transitions and pair membership until
    /// nothing changes; with few propositions, computes the coarsest
    /// pair-respecting bisimulation instead.
    pub fn minimize(&self) -> Dra {
        let reach = self.restrict_reachable();
        if reach.aps.len() <= MINIMIZE_MAX_APS {
            reach.minimize_concrete()
        } else {
            reach.merge_duplicates()
        }
    }

    fn restrict_reachable(&self) -> Dra {
        let mut map = vec![usize::MAX; self.num_states()];
        let mut order = vec![self.init];
        map[self.init] = 0;
        let mut i = 0;
        while i < order.len() {
            for &(_, t) in &self.trans[order[i]] {
                if map[t] == usize::MAX {
                    map[t] = order.len();
                    order.push(t);
                }
            }
            i += 1;
        }
        let trans = order
            .iter()
            .map(|&q| self.trans[q].iter().map(|&(c, t)| (c, map[t])).collect())
            .collect();
        let pairs = self
            .pairs
            .iter()
            .map(|p| RabinPair {
                l: order.iter().map(|&q| p.l[q]).collect(),
                k: order.iter().map(|&q| p.k[q]).collect(),
            })
            .collect();
        Dra { aps: self.aps.clone(), init: 0, trans, pairs }
    }

    fn membership(&self, q: usize) -> Vec<(bool, bool)> {
        self.pairs.iter().map(|p| (p.l[q], p.k[q])).collect()
    }

    fn minimize_concrete(&self) -> Dra {
        let n = self.num_states();
        let letters = 1usize << self.aps.len();
        let table: Vec<Vec<usize>> = (0..n)
            .map(|q| (0..letters as u64).map(|v| self.step(q, v)).collect())
            .collect();
        let mut block: Vec<usize> = {
            let mut ids: BTreeMap<Vec<(bool, bool)>, usize> = BTreeMap::new();
            (0..n)
                .map(|q| {
                    let len = ids.len();
                    *ids.entry(self.membership(q)).or_insert(len)
                })
                .collect()
        };
        loop {
            let mut ids: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
            let next: Vec<usize> = (0..n)
                .map(|q| {
                    let sig = (block[q], table[q].iter().map(|&t| block[t]).collect());
                    let len = ids.len();
                    *ids.entry(sig).or_insert(len)
                })
                .collect();
            let stable = ids.len() == block.iter().max().map_or(0, |m| m + 1);
            block = next;
            if stable {
                break;
            }
        }
        self.quotient(&block, |this, rep, blocks| {
            let mut targets: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
            for (v, &t) in table[rep].iter().enumerate() {
                targets.entry(blocks[t]).or_insert_with(|| vec![false; letters])[v] = true;
            }
            targets
                .into_iter()
                .flat_map(|(b, tab)| {
                    table_to_cubes(&tab, this.aps.len()).into_iter().map(move |c| (c, b))
                })
                .collect()
        })
    }

    fn merge_duplicates(&self) -> Dra {
        let n = self.num_states();
        let mut block: Vec<usize> = (0..n).collect();
        loop {
            let mut ids: HashMap<(Vec<(bool, bool)>, Vec<(Cube, usize)>), usize> = HashMap::new();
            let next: Vec<usize> = (0..n)
                .map(|q| {
                    let mut edges: Vec<(Cube, usize)> =
                        self.trans[q].iter().map(|&(c, t)| (c, block[t])).collect();
                    edges.sort();
                    let len = ids.len();
                    *ids.entry((self.membership(q), edges)).or_insert(len)
                })
                .collect();
            let count = ids.len();
            let prev = block.iter().max().map_or(0, |m| m + 1);
            block = next;
            if count == prev {
                break;
            }
        }
        self.quotient(&block, |this, rep, blocks| {
            this.trans[rep].iter().map(|&(c, t)| (c, blocks[t])).collect()
        })
    }

    /// Builds the quotient automaton; blocks are renumbered in BFS order.
    fn quotient(
        &self,
        block: &[usize],
        edges_of: impl Fn(&Dra, usize, &[usize]) -> Vec<(Cube, usize)>,
    ) -> Dra {
        let nb = block.iter().max().map_or(0, |m| m + 1);
        let mut rep = vec![usize::MAX; nb];
        for (q, &b) in block.iter().enumerate() {
            if rep[b] == usize::MAX {
                rep[b] = q;
            }
        }
        let raw: Vec<Vec<(Cube, usize)>> = (0..nb).map(|b| edges_of(self, rep[b], block)).collect();
        // renumber by BFS from the initial block
        let mut map = vec![usize::MAX; nb];
        let mut order = vec![block[self.init]];
        map[block[self.init]] = 0;
        let mut i = 0;
        while i < order.len() {
            for &(_, t) in &raw[order[i]] {
                if map[t] == usize::MAX {
                    map[t] = order.len();
                    order.push(t);
                }
            }
            i += 1;
        }
        let trans = order
            .iter()
            .map(|&b| raw[b].iter().map(|&(c, t)| (c, map[t])).collect())
            .collect();
        let pairs = self
            .pairs
            .iter()
            .map(|p| RabinPair {
                l: order.iter().map(|&b| p.l[rep[b]]).collect(),
                k: order.iter().map(|&b| p.k[rep[b]]).collect(),
            })
            .collect();
        Dra { aps: self.aps.clone(), init: 0, trans, pairs }
    }

    /// Re-expresses the automaton over a superset of its propositions.
    pub fn with_aps(&self, aps: &[TaggedAp]) -> Result<Dra, AutomataError> {
        let map: Vec<usize> = self
            .aps
            .iter()
            .map(|a| aps.iter().position(|b| b == a).ok_or_else(|| AutomataError::Hoa(format!("missing proposition {a}"))))
            .collect::<Result<_, _>>()?;
        let remap = |c: Cube| {
            let mut out = Cube::TRUE;
            for (i, &j) in map.iter().enumerate() {
                if c.pos >> i & 1 == 1 {
                    out.pos |= 1 << j;
                }
                if c.neg >> i & 1 == 1 {
                    out.neg |= 1 << j;
                }
            }
            out
        };
        Ok(Dra {
            aps: aps.to_vec(),
            init: self.init,
            trans: self.trans.iter().map(|es| es.iter().map(|&(c, t)| (remap(c), t)).collect()).collect(),
            pairs: self.pairs.clone(),
        })
    }
}

/// Runs the automaton on a lasso word and checks the Rabin condition on the
/// states its loop visits forever.
pub fn dra_accepts_lasso(d: &Dra, w: &LassoWord) -> Result<bool, AutomataError> {
    if d.arity() > w.arity() {
        return Err(AutomataError::Arity { automaton: d.arity(), word: w.arity() });
    }
    let prefix: Vec<u64> = w.prefix().iter().map(|l| d.valuation(l)).collect();
    let cycle: Vec<u64> = w.cycle().iter().map(|l| d.valuation(l)).collect();
    Ok(d.accepts_valuations(&prefix, &cycle))
}

/// Structural isomorphism (same proposition list, same pair order).
pub fn dra_isomorphic(a: &Dra, b: &Dra) -> bool {
    if a.aps != b.aps || a.num_states() != b.num_states() || a.pairs.len() != b.pairs.len() {
        return false;
    }
    let mut fwd = vec![usize::MAX; a.num_states()];
    let mut bwd = vec![usize::MAX; b.num_states()];
    let mut queue = VecDeque::new();
    fwd[a.init] = b.init;
    bwd[b.init] = a.init;
    queue.push_back((a.init, b.init));
    while let Some((p, q)) = queue.pop_front() {
        if a.membership(p) != b.membership(q) {
            return false;
        }
        let regions = partition(a.trans[p].iter().chain(&b.trans[q]).map(|e| e.0));
        for r in regions {
            let v = r.representative();
            let (tp, tq) = (a.step(p, v), b.step(q, v));
            match (fwd[tp], bwd[tq]) {
                (usize::MAX, usize::MAX) => {
                    fwd[tp] = tq;
                    bwd[tq] = tp;
                    queue.push_back((tp, tq));
                }
                (x, y) if x == tq && y == tp => {}
                _ => return false,
            }
        }
    }
    fwd.iter().all(|&x| x != usize::MAX)
}
