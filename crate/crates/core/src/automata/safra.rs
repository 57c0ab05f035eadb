//! Safra's determinization of Büchi automata into Rabin automata.

use std::collections::HashMap;

use super::cube::{partition, Cube};
use super::dra::{Dra, RabinPair};
use super::nba::Nba;
use super::AutomataError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct BitSet(Vec<u64>);

impl BitSet {
    fn empty(n: usize) -> Self {
        BitSet(vec![0; n.div_ceil(64)])
    }
    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }
    fn and(&self, o: &BitSet) -> BitSet {
        BitSet(self.0.iter().zip(&o.0).map(|(a, b)| a & b).collect())
    }
    fn or_assign(&mut self, o: &BitSet) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a |= b;
        }
    }
    fn minus_assign(&mut self, o: &BitSet) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a &= !b;
        }
    }
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64).filter(move |b| bits >> b & 1 == 1).map(move |b| w * 64 + b)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct SafraNode {
    name: usize,
    label: BitSet,
    marked: bool,
    /// Oldest first.
    children: Vec<SafraNode>,
}

impl SafraNode {
    fn names(&self, out: &mut Vec<usize>) {
        out.push(self.name);
        for c in &self.children {
            c.names(out);
        }
    }

    fn unmark(&mut self) {
        self.marked = false;
        for c in &mut self.children {
            c.unmark();
        }
    }

    fn branch_accepting(&mut self, acc: &BitSet, used: &mut Vec<bool>) {
        for c in &mut self.children {
            c.branch_accepting(acc, used);
        }
        let l = self.label.and(acc);
        if !l.is_empty() {
            let name = used.iter().position(|u| !u).expect("at most 2n names in use");
            used[name] = true;
            self.children.push(SafraNode { name, label: l, marked: false, children: vec![] });
        }
    }

    fn step(&mut self, succ: &dyn Fn(&BitSet) -> BitSet) {
        self.label = succ(&self.label);
        for c in &mut self.children {
            c.step(succ);
        }
    }

    fn remove_states(&mut self, s: &BitSet) {
        self.label.minus_assign(s);
        for c in &mut self.children {
            c.remove_states(s);
        }
    }

    fn horizontal_merge(&mut self) {
        let mut seen = BitSet::empty(self.label.0.len() * 64);
        for c in &mut self.children {
            c.remove_states(&seen);
            seen.or_assign(&c.label);
        }
        for c in &mut self.children {
            c.horizontal_merge();
        }
    }

    fn remove_empty(&mut self) {
        self.children.retain(|c| !c.label.is_empty());
        for c in &mut self.children {
            c.remove_empty();
        }
    }

    fn vertical_merge(&mut self) {
        if self.children.is_empty() {
            return;
        }
        let mut union = BitSet::empty(self.label.0.len() * 64);
        for c in &self.children {
            union.or_assign(&c.label);
        }
        if union == self.label {
            self.children.clear();
            self.marked = true;
        } else {
            for c in &mut self.children {
                c.vertical_merge();
            }
        }
    }

    fn collect(&self, present: &mut [bool], marked: &mut [bool]) {
        present[self.name] = true;
        marked[self.name] = self.marked;
        for c in &self.children {
            c.collect(present, marked);
        }
    }
}

/// `None` is the empty tree (the rejecting sink).
type Tree = Option<SafraNode>;

fn safra_step(tree: &Tree, succ: &dyn Fn(&BitSet) -> BitSet, acc: &BitSet, names: usize) -> Tree {
    let mut root = tree.clone()?;
    let mut used = vec![false; names];
    let mut in_use = Vec::new();
    root.names(&mut in_use);
    for n in in_use {
        used[n] = true;
    }
    root.unmark();
    root.branch_accepting(acc, &mut used);
    root.step(succ);
    root.horizontal_merge();
    if root.label.is_empty() {
        return None;
    }
    root.remove_empty();
    root.vertical_merge();
    Some(root)
}

/// Determinizes an NBA. Deterministic inputs are converted directly.
pub fn determinize(nba: &Nba, cap: usize) -> Result<Dra, AutomataError> {
    if nba.is_deterministic() {
        return Ok(from_deterministic(nba));
    }
    let n = nba.num_states();
    let names = 2 * n.max(1);
    let mut acc = BitSet::empty(n);
    let mut init = BitSet::empty(n);
    for q in 0..n {
        if nba.accepting[q] {
            acc.insert(q);
        }
    }
    for &q in &nba.initial {
        init.insert(q);
    }
    let start: Tree = Some(SafraNode { name: 0, label: init, marked: false, children: vec![] });

    let mut ids: HashMap<Tree, usize> = HashMap::new();
    let mut trees: Vec<Tree> = vec![start.clone()];
    ids.insert(start, 0);
    let mut trans: Vec<Vec<(Cube, usize)>> = Vec::new();
    let mut i = 0;
    while i < trees.len() {
        let tree = trees[i].clone();
        let mut edges = Vec::new();
        match &tree {
            None => edges.push((Cube::TRUE, i)),
            Some(root) => {
                let members: Vec<usize> = root.label.iter().collect();
                let regions =
                    partition(members.iter().flat_map(|&q| nba.edges[q].iter().map(|e| e.0)));
                for r in regions {
                    let succ = |set: &BitSet| {
                        let mut out = BitSet::empty(n);
                        for q in set.iter() {
                            for &(g, t) in &nba.edges[q] {
                                if g.intersects(r) {
                                    out.insert(t);
                                }
                            }
                        }
                        out
                    };
                    let next = safra_step(&tree, &succ, &acc, names);
                    let id = match ids.get(&next) {
                        Some(&id) => id,
                        None => {
                            let id = trees.len();
                            if id >= cap {
                                return Err(AutomataError::DraCap(cap));
                            }
                            ids.insert(next.clone(), id);
                            trees.push(next);
                            id
                        }
                    };
                    edges.push((r, id));
                }
            }
        }
        trans.push(edges);
        i += 1;
    }

    let flags: Vec<(Vec<bool>, Vec<bool>)> = trees
        .iter()
        .map(|t| {
            let mut present = vec![false; names];
            let mut marked = vec![false; names];
            if let Some(root) = t {
                root.collect(&mut present, &mut marked);
            }
            (present, marked)
        })
        .collect();
    let mut pairs = Vec::new();
    for name in 0..names {
        let l: Vec<usize> = (0..trees.len()).filter(|&q| !flags[q].0[name]).collect();
        let k: Vec<usize> = (0..trees.len()).filter(|&q| flags[q].1[name]).collect();
        if !k.is_empty() {
            pairs.push(RabinPair::new(trees.len(), &l, &k));
        }
    }
    if pairs.is_empty() {
        pairs.push(RabinPair::new(trees.len(), &[], &[]));
    }
    Ok(Dra::new(nba.aps.clone(), 0, trans, pairs))
}

fn from_deterministic(nba: &Nba) -> Dra {
    let n = nba.num_states();
    let mut trans: Vec<Vec<(Cube, usize)>> = nba.edges.clone();
    let mut needs_sink = false;
    for es in trans.iter_mut() {
        let mut rest = vec![Cube::TRUE];
        for &(g, _) in es.iter() {
            rest = rest.into_iter().flat_map(|r| r.minus(g)).collect();
        }
        if !rest.is_empty() {
            needs_sink = true;
            es.extend(rest.into_iter().map(|r| (r, n)));
        }
    }
    let total = if needs_sink {
        trans.push(vec![(Cube::TRUE, n)]);
        n + 1
    } else {
        n
    };
    let k: Vec<usize> = (0..n).filter(|&q| nba.accepting[q]).collect();
    let pair = RabinPair::new(total, &[], &k);
    Dra::new(nba.aps.clone(), nba.initial[0], trans, vec![pair])
}
