//! LTL over atomic propositions tagged with state variables.

mod lasso;
mod parser;

pub use lasso::{eval_on_lasso, LassoWord, Letter};
pub use parser::{parse_ltl, parse_ltl_with_aps};

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LtlError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown atomic proposition `{0}`")]
    UnknownAp(String),
    #[error("atom `{0}` refers to agent {1} but the word has arity {2}")]
    Arity(String, usize, usize),
    #[error("atom `{0}` is tagged with unresolved state variable `{1}`")]
    Unresolved(String, String),
    #[error("malformed lasso word: {0}")]
    Lasso(String),
}

/// The tag of an atom: a positional agent index (0-based) or a named state variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateVar {
    Index(usize),
    Name(String),
}

impl fmt::Display for StateVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateVar::Index(i) => write!(f, "{}", i + 1),
            StateVar::Name(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub ap: String,
    pub var: StateVar,
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.ap, self.var)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Ltl {
    True,
    False,
    Atom(Atom),
    Not(Box<Ltl>),
    And(Box<Ltl>, Box<Ltl>),
    Or(Box<Ltl>, Box<Ltl>),
    Implies(Box<Ltl>, Box<Ltl>),
    Xor(Box<Ltl>, Box<Ltl>),
    Next(Box<Ltl>),
    Until(Box<Ltl>, Box<Ltl>),
    Release(Box<Ltl>, Box<Ltl>),
    Eventually(Box<Ltl>),
    Globally(Box<Ltl>),
}

#[allow(clippy::should_implement_trait)]
impl Ltl {
    pub fn atom(ap: &str, agent: usize) -> Ltl {
        Ltl::Atom(Atom { ap: ap.to_string(), var: StateVar::Index(agent) })
    }

    pub fn not(a: Ltl) -> Ltl {
        Ltl::Not(Box::new(a))
    }
    pub fn and(a: Ltl, b: Ltl) -> Ltl {
        Ltl::And(Box::new(a), Box::new(b))
    }
    pub fn or(a: Ltl, b: Ltl) -> Ltl {
        Ltl::Or(Box::new(a), Box::new(b))
    }
    pub fn implies(a: Ltl, b: Ltl) -> Ltl {
        Ltl::Implies(Box::new(a), Box::new(b))
    }
    pub fn xor(a: Ltl, b: Ltl) -> Ltl {
        Ltl::Xor(Box::new(a), Box::new(b))
    }
    pub fn next(a: Ltl) -> Ltl {
        Ltl::Next(Box::new(a))
    }
    pub fn until(a: Ltl, b: Ltl) -> Ltl {
        Ltl::Until(Box::new(a), Box::new(b))
    }
    pub fn release(a: Ltl, b: Ltl) -> Ltl {
        Ltl::Release(Box::new(a), Box::new(b))
    }
    pub fn eventually(a: Ltl) -> Ltl {
        Ltl::Eventually(Box::new(a))
    }
    pub fn globally(a: Ltl) -> Ltl {
        Ltl::Globally(Box::new(a))
    }

    pub fn children(&self) -> Vec<&Ltl> {
        match self {
            Ltl::True | Ltl::False | Ltl::Atom(_) => vec![],
            Ltl::Not(a) | Ltl::Next(a) | Ltl::Eventually(a) | Ltl::Globally(a) => vec![a],
            Ltl::And(a, b)
            | Ltl::Or(a, b)
            | Ltl::Implies(a, b)
            | Ltl::Xor(a, b)
            | Ltl::Until(a, b)
            | Ltl::Release(a, b) => vec![a, b],
        }
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            if let Ltl::Atom(a) = f {
                out.insert(a.clone());
            }
        });
        out
    }

    /// State variables occurring in the formula.
    pub fn state_vars(&self) -> BTreeSet<StateVar> {
        self.atoms().into_iter().map(|a| a.var).collect()
    }

    fn visit(&self, f: &mut impl FnMut(&Ltl)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Rewrites every atom tag.
    pub fn map_tags<E>(&self, f: &mut dyn FnMut(&Atom) -> Result<StateVar, E>) -> Result<Ltl, E> {
        let mut r = |x: &Ltl| -> Result<Box<Ltl>, E> { Ok(Box::new(x.map_tags(f)?)) };
        Ok(match self {
            Ltl::True => Ltl::True,
            Ltl::False => Ltl::False,
            Ltl::Atom(a) => Ltl::Atom(Atom { ap: a.ap.clone(), var: f(a)? }),
            Ltl::Not(a) => Ltl::Not(r(a)?),
            Ltl::Next(a) => Ltl::Next(r(a)?),
            Ltl::Eventually(a) => Ltl::Eventually(r(a)?),
            Ltl::Globally(a) => Ltl::Globally(r(a)?),
            Ltl::And(a, b) => Ltl::And(r(a)?, r(b)?),
            Ltl::Or(a, b) => Ltl::Or(r(a)?, r(b)?),
            Ltl::Implies(a, b) => Ltl::Implies(r(a)?, r(b)?),
            Ltl::Xor(a, b) => Ltl::Xor(r(a)?, r(b)?),
            Ltl::Until(a, b) => Ltl::Until(r(a)?, r(b)?),
            Ltl::Release(a, b) => Ltl::Release(r(a)?, r(b)?),
        })
    }

    /// True if the formula has no temporal operator.
    pub fn is_propositional(&self) -> bool {
        match self {
            Ltl::True | Ltl::False | Ltl::Atom(_) => true,
            Ltl::Not(a) => a.is_propositional(),
            Ltl::And(a, b) | Ltl::Or(a, b) | Ltl::Implies(a, b) | Ltl::Xor(a, b) => {
                a.is_propositional() && b.is_propositional()
            }
            _ => false,
        }
    }

    /// Largest positional agent index plus one (0 if there are no indexed atoms).
    pub fn arity(&self) -> usize {
        self.atoms()
            .iter()
            .filter_map(|a| match a.var {
                StateVar::Index(i) => Some(i + 1),
                StateVar::Name(_) => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    fn precedence(&self) -> u8 {
        match self {
            Ltl::Implies(..) => 1,
            Ltl::Xor(..) => 2,
            Ltl::Or(..) => 3,
            Ltl::And(..) => 4,
            Ltl::Until(..) | Ltl::Release(..) => 5,
            _ => 6,
        }
    }
}

/// Negation normal form: negations only in front of atoms; `->` and `xor`
/// are expanded, `F`/`G`/`R` are kept.
pub fn to_nnf(f: &Ltl) -> Ltl {
    nnf(f, false)
}

fn nnf(f: &Ltl, neg: bool) -> Ltl {
    let b = |x: &Ltl, n: bool| Box::new(nnf(x, n));
    match (f, neg) {
        (Ltl::True, false) | (Ltl::False, true) => Ltl::True,
        (Ltl::True, true) | (Ltl::False, false) => Ltl::False,
        (Ltl::Atom(_), false) => f.clone(),
        (Ltl::Atom(_), true) => Ltl::Not(Box::new(f.clone())),
        (Ltl::Not(a), n) => nnf(a, !n),
        (Ltl::And(x, y), false) => Ltl::And(b(x, false), b(y, false)),
        (Ltl::And(x, y), true) => Ltl::Or(b(x, true), b(y, true)),
        (Ltl::Or(x, y), false) => Ltl::Or(b(x, false), b(y, false)),
        (Ltl::Or(x, y), true) => Ltl::And(b(x, true), b(y, true)),
        (Ltl::Implies(x, y), false) => Ltl::Or(b(x, true), b(y, false)),
        (Ltl::Implies(x, y), true) => Ltl::And(b(x, false), b(y, true)),
        (Ltl::Xor(x, y), n) => {
            // x xor y = (x & !y) | (!x & y); its negation pairs equal signs
            Ltl::Or(
                Box::new(Ltl::And(b(x, false), b(y, !n))),
                Box::new(Ltl::And(b(x, true), b(y, n))),
            )
        }
        (Ltl::Next(a), n) => Ltl::Next(b(a, n)),
        (Ltl::Until(x, y), false) => Ltl::Until(b(x, false), b(y, false)),
        (Ltl::Until(x, y), true) => Ltl::Release(b(x, true), b(y, true)),
        (Ltl::Release(x, y), false) => Ltl::Release(b(x, false), b(y, false)),
        (Ltl::Release(x, y), true) => Ltl::Until(b(x, true), b(y, true)),
        (Ltl::Eventually(a), false) => Ltl::Eventually(b(a, false)),
        (Ltl::Eventually(a), true) => Ltl::Globally(b(a, true)),
        (Ltl::Globally(a), false) => Ltl::Globally(b(a, false)),
        (Ltl::Globally(a), true) => Ltl::Eventually(b(a, true)),
    }
}

impl fmt::Display for Ltl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Operands of lower or equal precedence are parenthesized, so the
        // printed form parses back to the same tree.
        let sub = |x: &Ltl, f: &mut fmt::Formatter<'_>, min: u8| {
            if x.precedence() < min {
                write!(f, "({x})")
            } else {
                write!(f, "{x}")
            }
        };
        let bin = |a: &Ltl, op: &str, b: &Ltl, p: u8, f: &mut fmt::Formatter<'_>| {
            sub(a, f, p + 1)?;
            write!(f, " {op} ")?;
            sub(b, f, p + 1)
        };
        match self {
            Ltl::True => write!(f, "true"),
            Ltl::False => write!(f, "false"),
            Ltl::Atom(a) => write!(f, "{a}"),
            Ltl::Not(a) => {
                write!(f, "!")?;
                sub(a, f, 6)
            }
            Ltl::Next(a) => {
                write!(f, "X ")?;
                sub(a, f, 6)
            }
            Ltl::Eventually(a) => {
                write!(f, "F ")?;
                sub(a, f, 6)
            }
            Ltl::Globally(a) => {
                write!(f, "G ")?;
                sub(a, f, 6)
            }
            Ltl::And(a, b) => bin(a, "&", b, 4, f),
            Ltl::Or(a, b) => bin(a, "|", b, 3, f),
            Ltl::Xor(a, b) => bin(a, "xor", b, 2, f),
            Ltl::Implies(a, b) => bin(a, "->", b, 1, f),
            Ltl::Until(a, b) => bin(a, "U", b, 5, f),
            Ltl::Release(a, b) => bin(a, "R", b, 5, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a() -> Ltl {
        Ltl::atom("a", 0)
    }
    fn b() -> Ltl {
        Ltl::atom("b", 0)
    }

    #[test]
    fn nnf_dualities() {
        assert_eq!(to_nnf(&Ltl::not(Ltl::eventually(a()))), Ltl::globally(Ltl::not(a())));
        assert_eq!(
            to_nnf(&Ltl::not(Ltl::until(a(), b()))),
            Ltl::release(Ltl::not(a()), Ltl::not(b()))
        );
        assert_eq!(to_nnf(&Ltl::not(Ltl::not(a()))), a());
    }

    #[test]
    fn display_parenthesizes() {
        let f = Ltl::and(Ltl::or(a(), b()), Ltl::until(a(), Ltl::next(b())));
        assert_eq!(f.to_string(), "(a@1 | b@1) & a@1 U X b@1");
        let g = Ltl::until(Ltl::until(a(), b()), a());
        assert_eq!(g.to_string(), "(a@1 U b@1) U a@1");
    }

    #[test]
    fn state_vars_by_traversal() {
        let f = parse_ltl("F (T@1 & T@x2) | G S@1").unwrap();
        let vars: Vec<StateVar> = f.state_vars().into_iter().collect();
        assert_eq!(vars, vec![StateVar::Index(0), StateVar::Name("x2".into())]);
    }
}
