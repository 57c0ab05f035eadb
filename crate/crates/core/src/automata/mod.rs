//! LTL to deterministic Rabin automata, HOA exchange, lasso acceptance.

pub mod cube;
mod dra;
mod hoa;
mod nba;
mod safra;
mod shortcut;

pub use cube::{Cube, TaggedAp};
pub use dra::{dra_accepts_lasso, dra_isomorphic, Dra, RabinPair};
pub use hoa::{emit_hoa, parse_hoa};
pub use nba::{formula_aps, ltl_to_nba, Nba};

use thiserror::Error;

use crate::ltl::{to_nnf, Ltl};

pub const DEFAULT_NBA_CAP: usize = 4096;
pub const DEFAULT_DRA_CAP: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutomataError {
    #[error("Büchi automaton exceeds {0} states")]
    NbaCap(usize),
    #[error("Rabin automaton exceeds {0} states; formula too large for the built-in translator")]
    DraCap(usize),
    #[error("formula uses {0} propositions (at most 64)")]
    TooManyAps(usize),
    #[error("formula is not in negation normal form")]
    NotNnf,
    #[error("atom `{0}` is not tagged with an agent index")]
    UnresolvedTag(String),
    #[error("automaton reads {automaton} agents but the word has arity {word}")]
    Arity { automaton: usize, word: usize },
    #[error("unsupported acceptance `{0}` (only Rabin)")]
    UnsupportedAcceptance(String),
    #[error("malformed HOA: {0}")]
    Hoa(String),
}

#[derive(Debug, Clone)]
pub struct TranslationOptions {
    pub nba_cap: usize,
    pub dra_cap: usize,
    /// Build conjunctions of propositional untils and invariants directly.
    pub shortcuts: bool,
    pub minimize: bool,
}

impl Default for TranslationOptions {
    fn default() -> Self {
        TranslationOptions {
            nba_cap: DEFAULT_NBA_CAP,
            dra_cap: DEFAULT_DRA_CAP,
            shortcuts: true,
            minimize: true,
        }
    }
}

/// Determinizes an NBA with the default state cap.
pub fn determinize_to_dra(n: &Nba) -> Result<Dra, AutomataError> {
    safra::determinize(n, DEFAULT_DRA_CAP)
}

pub fn ltl_to_dra(f: &Ltl) -> Result<Dra, AutomataError> {
    ltl_to_dra_with(f, &TranslationOptions::default())
}

pub fn ltl_to_dra_with(f: &Ltl, opts: &TranslationOptions) -> Result<Dra, AutomataError> {
    let aps = formula_aps(f)?;
    let nnf = to_nnf(f);
    if opts.shortcuts {
        if let Some(p) = shortcut::match_pattern(&nnf) {
            let d = shortcut::build(&p, aps);
            return Ok(if opts.minimize { d.minimize() } else { d });
        }
    }
    let nba = nba::ltl_to_nba_over(&nnf, aps, opts.nba_cap)?;
    let d = safra::determinize(&nba, opts.dra_cap)?;
    Ok(if opts.minimize { d.minimize() } else { d })
}

/// For a formula `F ψ` with propositional `ψ`: the DRA together with its
/// absorbing state entered when `ψ` first holds.
pub fn reachability_dra(f: &Ltl) -> Option<(Dra, usize)> {
    let Ltl::Eventually(psi) = f else { return None };
    if !psi.is_propositional() {
        return None;
    }
    let aps = formula_aps(f).ok()?;
    let p = shortcut::match_pattern(&to_nnf(f))?;
    let d = shortcut::build(&p, aps);
    let target = shortcut::reach_target_state(&d)?;
    Some((d, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::{eval_on_lasso, parse_ltl, LassoWord, Letter};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_word(rng: &mut ChaCha8Rng, aps: &[&str], arity: usize) -> LassoWord {
        let letter = |rng: &mut ChaCha8Rng| -> Letter {
            (0..arity)
                .map(|_| aps.iter().filter(|_| rng.gen_bool(0.5)).map(|s| s.to_string()).collect())
                .collect()
        };
        let p = rng.gen_range(0..4);
        let l = rng.gen_range(1..4);
        let prefix = (0..p).map(|_| letter(rng)).collect();
        let cycle = (0..l).map(|_| letter(rng)).collect();
        LassoWord::new(prefix, cycle).unwrap()
    }

    fn check_agreement(text: &str, opts: &TranslationOptions, samples: usize) -> Dra {
        let f = parse_ltl(text).unwrap();
        let d = ltl_to_dra_with(&f, opts).unwrap();
        assert!(d.is_deterministic(), "{text}");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..samples {
            let w = random_word(&mut rng, &["a", "b"], 2);
            assert_eq!(
                dra_accepts_lasso(&d, &w).unwrap(),
                eval_on_lasso(&f, &w).unwrap(),
                "{text} on {w:?}"
            );
        }
        d
    }

    fn safra_only() -> TranslationOptions {
        TranslationOptions { shortcuts: false, ..Default::default() }
    }

    #[test]
    fn eventually_two_states() {
        let d = ltl_to_dra(&parse_ltl("F (a@1 & a@2)").unwrap()).unwrap();
        assert_eq!(d.num_states(), 2);
        let d = ltl_to_dra_with(&parse_ltl("F a@1").unwrap(), &safra_only()).unwrap();
        assert_eq!(d.num_states(), 2);
        assert_eq!(d.pairs().len(), 1);
        assert!(d.pairs()[0].l.iter().all(|&x| !x));
        assert_eq!(d.pairs()[0].k.iter().filter(|&&x| x).count(), 1);
    }

    #[test]
    fn shortcut_sizes() {
        assert_eq!(ltl_to_dra(&parse_ltl("G a@1").unwrap()).unwrap().num_states(), 2);
        assert_eq!(ltl_to_dra(&parse_ltl("a@1 U b@1").unwrap()).unwrap().num_states(), 3);
    }

    #[test]
    fn lasso_examples() {
        let fa = ltl_to_dra(&parse_ltl("F a@1").unwrap()).unwrap();
        let w: LassoWord = LassoWord::new(vec![], vec![vec![["a".to_string()].into()]]).unwrap();
        assert!(dra_accepts_lasso(&fa, &w).unwrap());
        let ga = ltl_to_dra(&parse_ltl("G a@1").unwrap()).unwrap();
        let w = LassoWord::new(vec![vec![["a".to_string()].into()]], vec![vec![Default::default()]]).unwrap();
        assert!(!dra_accepts_lasso(&ga, &w).unwrap());
    }

    #[test]
    fn safra_agrees_with_semantics() {
        for text in [
            "G F a@1",
            "F G a@1",
            "G F a@1 & G F b@2",
            "F G a@1 | G F b@1",
            "a@1 U (b@1 U a@2)",
            "X (a@1 R b@2)",
            "G (a@1 -> F b@2)",
            "(F a@1) & (F a@2) & G (a@1 -> a@2)",
            "!(a@1 U b@1) xor G a@2",
        ] {
            check_agreement(text, &safra_only(), 300);
            check_agreement(text, &TranslationOptions::default(), 300);
        }
    }

    #[test]
    fn fg_has_stable_pair() {
        let d = check_agreement("F G a@1", &safra_only(), 200);
        assert!(d.pairs().iter().any(|p| p.l.iter().any(|&x| x)));
    }

    #[test]
    fn dra_cap() {
        let opts = TranslationOptions { dra_cap: 2, shortcuts: false, ..Default::default() };
        let f = parse_ltl("G F a@1 & G F b@1 & F G a@2").unwrap();
        assert_eq!(ltl_to_dra_with(&f, &opts), Err(AutomataError::DraCap(2)));
    }

    #[test]
    fn nba_language_matches_semantics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = parse_ltl("a@1 U b@1").unwrap();
        let n = ltl_to_nba(&to_nnf(&f), DEFAULT_NBA_CAP).unwrap();
        let d = determinize_to_dra(&n).unwrap();
        for _ in 0..200 {
            let w = random_word(&mut rng, &["a", "b"], 1);
            let expected = eval_on_lasso(&f, &w).unwrap();
            let pre: Vec<u64> = w.prefix().iter().map(|l| d.valuation(l)).collect();
            let cyc: Vec<u64> = w.cycle().iter().map(|l| d.valuation(l)).collect();
            assert_eq!(n.accepts_valuations(&pre, &cyc), expected);
            assert_eq!(dra_accepts_lasso(&d, &w).unwrap(), expected);
        }
    }
}
