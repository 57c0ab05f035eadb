//! Direct DRAs for conjunctions of propositional untils and invariants.
//!
//! A formula `(p1 U q1) & ... & (pn U qn) & G r1 & ... & G rm` (with `F q`
//! read as `true U q`) is recognized after NNF. Its automaton tracks which
//! untils are already fulfilled; violating a pending until or an invariant
//! leads to a rejecting sink.

use std::collections::HashMap;

use super::cube::{eval_prop, partition, prop_to_cubes, Cube, TaggedAp};
use super::dra::{Dra, RabinPair};
use crate::ltl::Ltl;

pub(crate) struct Pattern {
    untils: Vec<(Ltl, Ltl)>,
    invariants: Vec<Ltl>,
}

fn flatten<'a>(f: &'a Ltl, out: &mut Vec<&'a Ltl>) {
    if let Ltl::And(a, b) = f {
        flatten(a, out);
        flatten(b, out);
    } else {
        out.push(f);
    }
}

/// Recognizes the pattern on an NNF formula.
pub(crate) fn match_pattern(nnf: &Ltl) -> Option<Pattern> {
    let mut terms = Vec::new();
    flatten(nnf, &mut terms);
    let mut p = Pattern { untils: Vec::new(), invariants: Vec::new() };
    for t in terms {
        match t {
            Ltl::Eventually(q) if q.is_propositional() => p.untils.push((Ltl::True, (**q).clone())),
            Ltl::Until(a, b) if a.is_propositional() && b.is_propositional() => {
                p.untils.push(((**a).clone(), (**b).clone()))
            }
            Ltl::Globally(r) if r.is_propositional() => p.invariants.push((**r).clone()),
            _ => return None,
        }
    }
    (p.untils.len() <= 32).then_some(p)
}

/// Builds the automaton; only reachable states are materialized.
pub(crate) fn build(p: &Pattern, aps: Vec<TaggedAp>) -> Dra {
    let guards: Vec<Cube> = p
        .untils
        .iter()
        .flat_map(|(a, b)| [a, b])
        .chain(&p.invariants)
        .flat_map(|f| prop_to_cubes(f, &aps))
        .collect();
    let regions = partition(guards);
    let all: u64 = if p.untils.is_empty() { 0 } else { (1u64 << p.untils.len()) - 1 };

    // Per region: which untils are fulfilled, which may continue, and
    // whether all invariants hold.
    let info: Vec<(u64, u64, bool)> = regions
        .iter()
        .map(|r| {
            let v = r.representative();
            let mut done = 0u64;
            let mut wait = 0u64;
            for (i, (a, b)) in p.untils.iter().enumerate() {
                if eval_prop(b, &aps, v) {
                    done |= 1 << i;
                } else if eval_prop(a, &aps, v) {
                    wait |= 1 << i;
                }
            }
            (done, wait, p.invariants.iter().all(|f| eval_prop(f, &aps, v)))
        })
        .collect();

    const SINK: u64 = u64::MAX;
    let mut ids: HashMap<u64, usize> = HashMap::new();
    let mut states: Vec<u64> = vec![0];
    ids.insert(0, 0);
    let mut trans = Vec::new();
    let mut i = 0;
    while i < states.len() {
        let d = states[i];
        let mut edges: Vec<(Cube, usize)> = Vec::new();
        for (r, &(done, wait, inv)) in regions.iter().zip(&info) {
            let next = if d == SINK {
                SINK
            } else {
                let pending = all & !d;
                if !inv || pending & !(done | wait) != 0 {
                    SINK
                } else {
                    d | (pending & done)
                }
            };
            let id = *ids.entry(next).or_insert_with(|| {
                states.push(next);
                states.len() - 1
            });
            edges.push((*r, id));
        }
        trans.push(edges);
        i += 1;
    }
    let k: Vec<usize> = (0..states.len()).filter(|&q| states[q] == all).collect();
    let l: Vec<usize> = (0..states.len()).filter(|&q| states[q] == SINK).collect();
    let pair = RabinPair::new(states.len(), &l, &k);
    Dra::new(aps, 0, trans, vec![pair])
}

/// The DRA state reached once every until is fulfilled, if the formula
/// is a single `F ψ` shortcut.
pub(crate) fn reach_target_state(d: &Dra) -> Option<usize> {
    let pair = d.pairs().first()?;
    let k: Vec<usize> = (0..d.num_states()).filter(|&q| pair.k[q]).collect();
    (d.pairs().len() == 1 && k.len() == 1).then(|| k[0])
}
