//! Conjunctions of literals over an automaton's proposition list.

use std::fmt;

use crate::ltl::{Ltl, StateVar};

/// A proposition read from one agent's label: `name@agent`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaggedAp {
    pub name: String,
    pub agent: usize,
}

impl fmt::Display for TaggedAp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.agent + 1)
    }
}

/// A cube: the letters whose valuation has every `pos` bit set and every
/// `neg` bit clear. `pos & neg == 0` for every cube that is constructed
/// through [`Cube::and`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cube {
    pub pos: u64,
    pub neg: u64,
}

impl Cube {
    pub const TRUE: Cube = Cube { pos: 0, neg: 0 };

    pub fn literal(var: usize, positive: bool) -> Cube {
        if positive {
            Cube { pos: 1 << var, neg: 0 }
        } else {
            Cube { pos: 0, neg: 1 << var }
        }
    }

    pub fn matches(self, valuation: u64) -> bool {
        valuation & self.pos == self.pos && valuation & self.neg == 0
    }

    pub fn and(self, other: Cube) -> Option<Cube> {
        let c = Cube { pos: self.pos | other.pos, neg: self.neg | other.neg };
        (c.pos & c.neg == 0).then_some(c)
    }

    pub fn intersects(self, other: Cube) -> bool {
        self.and(other).is_some()
    }

    /// True if every letter of `self` is a letter of `other`.
    pub fn implies(self, other: Cube) -> bool {
        other.pos & !self.pos == 0 && other.neg & !self.neg == 0
    }

    pub fn vars(self) -> u64 {
        self.pos | self.neg
    }

    /// Number of letters over `k` propositions.
    pub fn volume(self, k: usize) -> u128 {
        1u128 << (k - self.vars().count_ones() as usize)
    }

    /// The valuation with exactly the `pos` bits set; it belongs to the cube.
    pub fn representative(self) -> u64 {
        self.pos
    }

    /// `self ∧ ¬other` as a list of pairwise disjoint cubes.
    pub fn minus(self, other: Cube) -> Vec<Cube> {
        if !self.intersects(other) {
            return vec![self];
        }
        let mut out = Vec::new();
        let mut cur = self;
        for var in 0..64 {
            let bit = 1u64 << var;
            if other.vars() & bit == 0 || cur.vars() & bit != 0 {
                continue;
            }
            let positive = other.pos & bit != 0;
            out.push(cur.and(Cube::literal(var, !positive)).unwrap());
            cur = cur.and(Cube::literal(var, positive)).unwrap();
        }
        out
    }

    pub fn fmt_with(self, aps: &[TaggedAp]) -> String {
        if self == Cube::TRUE {
            return "true".into();
        }
        let mut lits = Vec::new();
        for (i, ap) in aps.iter().enumerate() {
            if self.pos >> i & 1 == 1 {
                lits.push(ap.to_string());
            } else if self.neg >> i & 1 == 1 {
                lits.push(format!("!{ap}"));
            }
        }
        lits.join(" & ")
    }
}

/// Refines a list of pairwise disjoint regions so that each resulting
/// region is either inside `guard` or disjoint from it.
pub fn refine(regions: Vec<Cube>, guard: Cube) -> Vec<Cube> {
    let mut out = Vec::with_capacity(regions.len() + 1);
    for r in regions {
        match r.and(guard) {
            None => out.push(r),
            Some(inside) => {
                if inside == r {
                    out.push(r);
                } else {
                    out.push(inside);
                    out.extend(r.minus(guard));
                }
            }
        }
    }
    out
}

/// Partition of the whole letter space induced by a set of guards.
pub fn partition(guards: impl IntoIterator<Item = Cube>) -> Vec<Cube> {
    let mut regions = vec![Cube::TRUE];
    let mut seen = std::collections::HashSet::new();
    for g in guards {
        if seen.insert(g) {
            regions = refine(regions, g);
        }
    }
    regions
}

/// Evaluates a propositional formula under a total valuation.
///
/// Atoms are resolved against `aps`; atoms not in the list are false.
pub fn eval_prop(f: &Ltl, aps: &[TaggedAp], valuation: u64) -> bool {
    eval_partial(f, aps, valuation, u64::MAX) == Some(true)
}

/// Three-valued evaluation where only the variables in `known` are assigned.
fn eval_partial(f: &Ltl, aps: &[TaggedAp], val: u64, known: u64) -> Option<bool> {
    let e = |x: &Ltl| eval_partial(x, aps, val, known);
    match f {
        Ltl::True => Some(true),
        Ltl::False => Some(false),
        Ltl::Atom(a) => {
            let StateVar::Index(agent) = a.var else { return Some(false) };
            match aps.iter().position(|t| t.name == a.ap && t.agent == agent) {
                None => Some(false),
                Some(i) if known >> i & 1 == 1 => Some(val >> i & 1 == 1),
                Some(_) => None,
            }
        }
        Ltl::Not(x) => e(x).map(|b| !b),
        Ltl::And(x, y) => match (e(x), e(y)) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        Ltl::Or(x, y) => match (e(x), e(y)) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
        Ltl::Implies(x, y) => e(&Ltl::or(Ltl::not((**x).clone()), (**y).clone())),
        Ltl::Xor(x, y) => match (e(x), e(y)) {
            (Some(a), Some(b)) => Some(a != b),
            _ => None,
        },
        _ => panic!("eval_prop on temporal formula {f}"),
    }
}

/// Shannon expansion of a propositional formula into disjoint cubes.
pub fn prop_to_cubes(f: &Ltl, aps: &[TaggedAp]) -> Vec<Cube> {
    let vars: Vec<usize> = f
        .atoms()
        .iter()
        .filter_map(|a| match a.var {
            StateVar::Index(agent) => aps.iter().position(|t| t.name == a.ap && t.agent == agent),
            StateVar::Name(_) => None,
        })
        .collect();
    let mut out = Vec::new();
    shannon(&|val, known| eval_partial(f, aps, val, known), &vars, Cube::TRUE, &mut out);
    out
}

/// Disjoint cube cover of the letters accepted by `pred` (a three-valued
/// predicate on partial valuations), branching on `vars` in order.
pub fn shannon(
    pred: &dyn Fn(u64, u64) -> Option<bool>,
    vars: &[usize],
    cur: Cube,
    out: &mut Vec<Cube>,
) {
    match pred(cur.pos, cur.vars()) {
        Some(true) => out.push(cur),
        Some(false) => {}
        None => {
            let (&v, rest) = vars.split_first().expect("predicate undetermined on total valuation");
            shannon(pred, rest, cur.and(Cube::literal(v, true)).unwrap(), out);
            shannon(pred, rest, cur.and(Cube::literal(v, false)).unwrap(), out);
        }
    }
}

/// Disjoint cubes covering exactly the valuations (over `k` variables)
/// whose entry in `table` is true.
pub fn table_to_cubes(table: &[bool], k: usize) -> Vec<Cube> {
    let vars: Vec<usize> = (0..k).collect();
    let pred = |val: u64, known: u64| -> Option<bool> {
        let free: Vec<usize> = (0..k).filter(|i| known >> i & 1 == 0).collect();
        let first = table[val as usize];
        for m in 0..(1u64 << free.len()) {
            let mut v = val;
            for (j, &i) in free.iter().enumerate() {
                if m >> j & 1 == 1 {
                    v |= 1 << i;
                }
            }
            if table[v as usize] != first {
                return None;
            }
        }
        Some(first)
    };
    let mut out = Vec::new();
    shannon(&pred, &vars, Cube::TRUE, &mut out);
    merge_adjacent(out)
}

/// Merges pairs of cubes that differ in the sign of exactly one literal.
pub fn merge_adjacent(mut cubes: Vec<Cube>) -> Vec<Cube> {
    loop {
        let mut merged = false;
        'outer: for i in 0..cubes.len() {
            for j in i + 1..cubes.len() {
                let (a, b) = (cubes[i], cubes[j]);
                if a.vars() != b.vars() {
                    continue;
                }
                let diff = a.pos ^ b.pos;
                if diff.count_ones() == 1 {
                    cubes[i] = Cube { pos: a.pos & !diff, neg: a.neg & !diff };
                    cubes.swap_remove(j);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            return cubes;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::parse_ltl;
    use proptest::prelude::*;

    fn arb_cube(k: usize) -> impl Strategy<Value = Cube> {
        (0u64..1 << k, 0u64..1 << k).prop_map(|(p, n)| Cube { pos: p & !n, neg: n })
    }

    proptest! {
        #[test]
        fn minus_is_exact(a in arb_cube(4), b in arb_cube(4)) {
            let parts = a.minus(b);
            for v in 0..16u64 {
                let hits = parts.iter().filter(|c| c.matches(v)).count();
                let expected = a.matches(v) && !b.matches(v);
                prop_assert_eq!(hits, expected as usize);
            }
        }

        #[test]
        fn partition_is_partition(gs in proptest::collection::vec(arb_cube(4), 0..6)) {
            let regions = partition(gs.iter().copied());
            for v in 0..16u64 {
                prop_assert_eq!(regions.iter().filter(|c| c.matches(v)).count(), 1);
            }
            for r in &regions {
                for g in &gs {
                    prop_assert!(!r.intersects(*g) || r.implies(*g));
                }
            }
        }

        #[test]
        fn table_cover_exact(bits in 0u64..1 << 16) {
            let table: Vec<bool> = (0..16).map(|i| bits >> i & 1 == 1).collect();
            let cubes = table_to_cubes(&table, 4);
            for (v, &t) in table.iter().enumerate() {
                prop_assert_eq!(cubes.iter().filter(|c| c.matches(v as u64)).count(), t as usize);
            }
        }
    }

    #[test]
    fn prop_cubes_of_implication() {
        let aps = vec![
            TaggedAp { name: "T".into(), agent: 0 },
            TaggedAp { name: "T".into(), agent: 1 },
        ];
        let f = parse_ltl("T@1 -> T@2").unwrap();
        let cubes = prop_to_cubes(&f, &aps);
        for v in 0..4u64 {
            let expected = v & 1 == 0 || v & 2 != 0;
            assert_eq!(cubes.iter().any(|c| c.matches(v)), expected);
            assert_eq!(eval_prop(&f, &aps, v), expected);
        }
    }
}
