//! Exact evaluation of LTL on ultimately periodic words.

use std::collections::BTreeSet;

use super::{Ltl, LtlError, StateVar};

/// One set of propositions per agent.
pub type Letter = Vec<BTreeSet<String>>;

/// The word `prefix · loop^ω`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LassoWord {
    prefix: Vec<Letter>,
    cycle: Vec<Letter>,
}

impl LassoWord {
    pub fn new(prefix: Vec<Letter>, cycle: Vec<Letter>) -> Result<Self, LtlError> {
        if cycle.is_empty() {
            return Err(LtlError::Lasso("loop must be non-empty".into()));
        }
        let arity = cycle[0].len();
        if prefix.iter().chain(&cycle).any(|l| l.len() != arity) {
            return Err(LtlError::Lasso("letters differ in arity".into()));
        }
        Ok(LassoWord { prefix, cycle })
    }

    pub fn prefix(&self) -> &[Letter] {
        &self.prefix
    }

    pub fn cycle(&self) -> &[Letter] {
        &self.cycle
    }

    pub fn arity(&self) -> usize {
        self.cycle[0].len()
    }

    /// Number of distinct positions (prefix plus one loop copy).
    pub fn len(&self) -> usize {
        self.prefix.len() + self.cycle.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn letter(&self, i: usize) -> &Letter {
        if i < self.prefix.len() {
            &self.prefix[i]
        } else {
            &self.cycle[(i - self.prefix.len()) % self.cycle.len()]
        }
    }

    fn succ(&self, i: usize) -> usize {
        if i + 1 < self.len() {
            i + 1
        } else {
            self.prefix.len()
        }
    }
}

/// Truth value of `f` at position 0 of `w`.
///
/// Every subformula is evaluated on all `|prefix| + |loop|` positions; `U`
/// is the least and `R` the greatest fixpoint of its one-step unfolding.
pub fn eval_on_lasso(f: &Ltl, w: &LassoWord) -> Result<bool, LtlError> {
    for atom in f.atoms() {
        match atom.var {
            StateVar::Index(i) if i >= w.arity() => {
                return Err(LtlError::Arity(atom.to_string(), i + 1, w.arity()))
            }
            StateVar::Name(n) => return Err(LtlError::Unresolved(atom.ap.clone(), n)),
            _ => {}
        }
    }
    Ok(eval(f, w)[0])
}

fn fixpoint(w: &LassoWord, init: bool, step: impl Fn(usize, bool) -> bool) -> Vec<bool> {
    let n = w.len();
    let mut v = vec![init; n];
    loop {
        let mut changed = false;
        for i in (0..n).rev() {
            let nv = step(i, v[w.succ(i)]);
            if nv != v[i] {
                v[i] = nv;
                changed = true;
            }
        }
        if !changed {
            return v;
        }
    }
}

fn eval(f: &Ltl, w: &LassoWord) -> Vec<bool> {
    let n = w.len();
    match f {
        Ltl::True => vec![true; n],
        Ltl::False => vec![false; n],
        Ltl::Atom(a) => {
            let StateVar::Index(k) = a.var else { unreachable!("checked by caller") };
            (0..n).map(|i| w.letter(i)[k].contains(&a.ap)).collect()
        }
        Ltl::Not(x) => eval(x, w).into_iter().map(|b| !b).collect(),
        Ltl::And(x, y) => zip(eval(x, w), eval(y, w), |a, b| a && b),
        Ltl::Or(x, y) => zip(eval(x, w), eval(y, w), |a, b| a || b),
        Ltl::Implies(x, y) => zip(eval(x, w), eval(y, w), |a, b| !a || b),
        Ltl::Xor(x, y) => zip(eval(x, w), eval(y, w), |a, b| a != b),
        Ltl::Next(x) => {
            let v = eval(x, w);
            (0..n).map(|i| v[w.succ(i)]).collect()
        }
        Ltl::Until(x, y) => {
            let (a, b) = (eval(x, w), eval(y, w));
            fixpoint(w, false, |i, nxt| b[i] || (a[i] && nxt))
        }
        Ltl::Release(x, y) => {
            let (a, b) = (eval(x, w), eval(y, w));
            fixpoint(w, true, |i, nxt| b[i] && (a[i] || nxt))
        }
        Ltl::Eventually(x) => {
            let b = eval(x, w);
            fixpoint(w, false, |i, nxt| b[i] || nxt)
        }
        Ltl::Globally(x) => {
            let b = eval(x, w);
            fixpoint(w, true, |i, nxt| b[i] && nxt)
        }
    }
}

fn zip(a: Vec<bool>, b: Vec<bool>, op: impl Fn(bool, bool) -> bool) -> Vec<bool> {
    a.into_iter().zip(b).map(|(x, y)| op(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::parse_ltl;

    fn letter(aps: &[&str]) -> Letter {
        vec![aps.iter().map(|s| s.to_string()).collect()]
    }

    #[test]
    fn globally_on_constant_loop() {
        let w = LassoWord::new(vec![], vec![letter(&["a"])]).unwrap();
        assert!(eval_on_lasso(&parse_ltl("G a@1").unwrap(), &w).unwrap());
    }

    #[test]
    fn eventually_never_occurs() {
        let w = LassoWord::new(vec![letter(&["a"])], vec![letter(&[])]).unwrap();
        assert!(!eval_on_lasso(&parse_ltl("F b@1").unwrap(), &w).unwrap());
    }

    #[test]
    fn until_inside_loop() {
        let w = LassoWord::new(vec![letter(&[])], vec![letter(&["a"]), letter(&["a", "b"])]).unwrap();
        assert!(eval_on_lasso(&parse_ltl("X (a@1 U b@1)").unwrap(), &w).unwrap());
        assert!(!eval_on_lasso(&parse_ltl("a@1 U b@1").unwrap(), &w).unwrap());
        assert!(eval_on_lasso(&parse_ltl("G F b@1 & F G a@1").unwrap(), &w).unwrap());
    }

    #[test]
    fn arity_mismatch() {
        let w = LassoWord::new(vec![], vec![letter(&[])]).unwrap();
        assert_eq!(
            eval_on_lasso(&parse_ltl("F a@2").unwrap(), &w),
            Err(LtlError::Arity("a@2".into(), 2, 1))
        );
        assert!(LassoWord::new(vec![], vec![]).is_err());
    }
}
