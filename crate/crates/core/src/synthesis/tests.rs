use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::automata::ltl_to_dra;
use crate::hyperspec::parse_spec;
use crate::ltl::parse_ltl;
use crate::mdp::{ActionSet, MdpBuilder};
use crate::probcheck::tests::random_mdp;

fn two_agent_spec(shared: bool, body: &str) -> HyperFormula {
    let text = if shared {
        format!("exists (s)\nforall x1 in {{0}} (s)\nforall x2 in {{1}} (s)\nPmax [{body}]")
    } else {
        format!("exists (s1 s2)\nforall x1 in {{0}} (s1)\nforall x2 in {{1}} (s2)\nPmax [{body}]")
    };
    parse_spec(&text).unwrap()
}

fn random_tuple(p: &ProductMdp, rng: &mut ChaCha8Rng) -> PolicyTuple {
    let vars = p.bindings.policy_agents.len();
    PolicyTuple {
        policies: (0..vars)
            .map(|_| {
                MemorylessPolicy::total(
                    (0..p.agent.num_states())
                        .map(|s| {
                            let en: Vec<_> = p.agent.enabled(s).iter().collect();
                            en[rng.gen_range(0..en.len())]
                        })
                        .collect(),
                )
            })
            .collect(),
    }
}

fn random_centralized(p: &ProductMdp, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..p.num_states())
        .map(|s| {
            let r = p.mdp.choice_range(s);
            rng.gen_range(r)
        })
        .collect()
}

fn product_for(m: &Mdp, h: &HyperFormula) -> ProductMdp {
    Problem::new(m, h, 0, None).unwrap().products[0][0].clone()
}

/// Conflicting holes by a direct scan over every reachable (state, agent).
fn conflicting_holes(p: &ProductMdp, policy: &[usize]) -> BTreeSet<Hole> {
    let reach = reachable_under(p, policy);
    let mut acts: BTreeMap<Hole, BTreeSet<usize>> = BTreeMap::new();
    for s in (0..p.num_states()).filter(|&s| reach[s]) {
        for i in 0..p.num_agents() {
            acts.entry(p.hole(s, i)).or_default().insert(p.agent_action(policy[s], i));
        }
    }
    acts.into_iter().filter(|(_, a)| a.len() > 1).map(|(h, _)| h).collect()
}

#[test]
fn split_two_actions_drops_empty_child() {
    let h = Hole { policy_var: 0, local_state: 1 };
    let c = Conflict { hole: h, a: 0, b: 1, states: (0, 1), agents: (0, 0), kind: ConflictKind::LocalObservability };
    let enabled: ActionSet = [0, 1].into_iter().collect();
    let kids = split(&ActionRestriction::new(), &c, enabled).unwrap();
    assert_eq!(kids.len(), 2);
    assert_eq!(kids[0].allowed(h, enabled), ActionSet::singleton(0));
    assert_eq!(kids[1].allowed(h, enabled), ActionSet::singleton(1));
}

#[test]
fn split_four_actions_keeps_rest() {
    let h = Hole { policy_var: 0, local_state: 0 };
    let c = Conflict { hole: h, a: 2, b: 0, states: (0, 1), agents: (0, 1), kind: ConflictKind::PolicyBinding };
    let enabled: ActionSet = [0, 1, 2, 3].into_iter().collect();
    let kids = split(&ActionRestriction::new(), &c, enabled).unwrap();
    let sets: Vec<ActionSet> = kids.iter().map(|k| k.allowed(h, enabled)).collect();
    assert_eq!(sets, vec![ActionSet::singleton(2), ActionSet::singleton(0), [1, 3].into_iter().collect()]);
    let other = Hole { policy_var: 0, local_state: 1 };
    assert!(kids.iter().all(|k| !k.is_restricted(other)));
}

#[test]
fn split_rejects_disallowed_pair() {
    let h = Hole { policy_var: 0, local_state: 0 };
    let mut r = ActionRestriction::new();
    r.restrict(h, ActionSet::singleton(0));
    let c = Conflict { hole: h, a: 0, b: 1, states: (0, 0), agents: (0, 0), kind: ConflictKind::LocalObservability };
    assert!(split(&r, &c, [0, 1].into_iter().collect()).is_err());
}

fn shared_line() -> Mdp {
    // two states, actions stay/go; a labels state 1
    let mut b = MdpBuilder::new(2, vec!["stay".into(), "go".into()], vec!["a".into()]);
    b.transition(0, 0, 0, 1.0).transition(0, 1, 1, 1.0).transition(1, 0, 1, 1.0).transition(1, 1, 0, 1.0);
    b.label(1, 0);
    b.build().unwrap()
}

#[test]
fn shared_variable_disagreement_is_policy_binding_conflict() {
    let m = shared_line();
    // both agents start in state 0 under one policy variable
    let h = parse_spec("exists (s)\nforall x1 in {0} (s)\nforall x2 in {0} (s)\nPmax [F a@x1]").unwrap();
    let p = product_for(&m, &h);
    let mut policy: Vec<usize> = (0..p.num_states()).map(|s| p.mdp.choice_range(s).start).collect();
    policy[p.initial] = p.joint_choice(p.initial, &[0, 1]).unwrap();
    let report = check_consistency(&p, &policy);
    assert_eq!(report.conflicts.len(), 1);
    let c = &report.conflicts[0];
    assert_eq!(c.kind, ConflictKind::PolicyBinding);
    assert_eq!(c.hole, Hole { policy_var: 0, local_state: 0 });
    assert_eq!(c.agents, (0, 1));
    assert_ne!(c.a, c.b);
}

#[test]
fn single_agent_trivial_automaton_is_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_mdp(&mut rng, 4, 3, &["a"]);
    let h = parse_spec("exists (s)\nforall x in {0} (s)\nPmax [a@x | !a@x]").unwrap();
    let p = product_for(&m, &h);
    for _ in 0..50 {
        let pol = random_centralized(&p, &mut rng);
        let reach = reachable_under(&p, &pol);
        // every reachable product state has a distinct local state
        let locals: BTreeSet<_> = (0..p.num_states()).filter(|&s| reach[s]).map(|s| p.local_state(s, 0)).collect();
        if locals.len() == (0..p.num_states()).filter(|&s| reach[s]).count() {
            assert!(check_consistency(&p, &pol).is_consistent());
        }
    }
}

#[test]
fn conflicts_match_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for round in 0..40 {
        let m = random_mdp(&mut rng, 4, 3, &["a", "b"]);
        let h = two_agent_spec(round % 2 == 0, "F (a@x1 & b@x2)");
        let p = product_for(&m, &h);
        let pol = random_centralized(&p, &mut rng);
        let report = check_consistency(&p, &pol);
        let holes: BTreeSet<Hole> = report.conflicts.iter().map(|c| c.hole).collect();
        assert_eq!(holes, conflicting_holes(&p, &pol));
        for c in &report.conflicts {
            assert_ne!(c.a, c.b);
            assert_eq!(p.hole(c.states.0, c.agents.0), c.hole);
            assert_eq!(p.hole(c.states.1, c.agents.1), c.hole);
            assert_eq!(p.agent_action(pol[c.states.0], c.agents.0), c.a);
            assert_eq!(p.agent_action(pol[c.states.1], c.agents.1), c.b);
            assert_eq!(c.kind == ConflictKind::PolicyBinding, c.agents.0 != c.agents.1);
        }
    }
}

#[test]
fn factorize_lift_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for round in 0..40 {
        let m = random_mdp(&mut rng, 4, 3, &["a", "b"]);
        let h = two_agent_spec(round % 2 == 1, "(!a@x1) U b@x2");
        let p = product_for(&m, &h);
        let lifted = lift(&random_tuple(&p, &mut rng), &p);
        assert!(check_consistency(&p, &lifted).is_consistent());
        let t = factorize(&p, &lifted, &ActionRestriction::new()).unwrap();
        let back = lift(&t, &p);
        let reach = reachable_under(&p, &lifted);
        for s in (0..p.num_states()).filter(|&s| reach[s]) {
            assert_eq!(back[s], lifted[s]);
        }
    }
}

#[test]
fn factorize_rejects_inconsistent() {
    let m = shared_line();
    let h = parse_spec("exists (s)\nforall x1 in {0} (s)\nforall x2 in {0} (s)\nPmax [F a@x1]").unwrap();
    let p = product_for(&m, &h);
    let mut policy: Vec<usize> = (0..p.num_states()).map(|s| p.mdp.choice_range(s).start).collect();
    policy[p.initial] = p.joint_choice(p.initial, &[1, 0]).unwrap();
    assert!(matches!(factorize(&p, &policy, &ActionRestriction::new()), Err(SynthesisError::Inconsistent(_))));
}

#[test]
fn resolve_randomly_is_seeded_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for round in 0..15 {
        let m = random_mdp(&mut rng, 4, 3, &["a", "b"]);
        let h = two_agent_spec(round % 2 == 0, "F (a@x1 & b@x2)");
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        let (ub, pol) = problem.solve(0, 0, None, Direction::Max);
        let p = &problem.products[0][0];
        let r = ActionRestriction::new();
        let t1 = resolve_randomly(p, &pol, &r, &mut ChaCha8Rng::seed_from_u64(9));
        let t2 = resolve_randomly(p, &pol, &r, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(t1, t2);
        let v = problem.evaluate_policy_tuple(&t1).unwrap().objective.unwrap();
        assert!(v <= ub + 1e-7, "resolved {v} above bound {ub}");
        if check_consistency(p, &pol).is_consistent() {
            assert_eq!(t1, factorize(p, &pol, &r).unwrap());
        }
    }
}

#[test]
fn classification_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = random_mdp(&mut rng, 4, 2, &["a"]);
    for (op, expect) in [("P [F a@x] >= 0", Tri::True), ("P [F a@x] > 1", Tri::False)] {
        let h = parse_spec(&format!("exists (s)\nforall x in {{0}} (s)\n{op}")).unwrap();
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        assert_eq!(classify_constraint(&problem, 0, 0, None).0, expect);
    }
}

#[test]
fn classification_agrees_with_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..20 {
        let m = random_mdp(&mut rng, 4, 2, &["a", "b"]);
        let c: f64 = [0.2, 0.5, 0.8][rng.gen_range(0..3)];
        let h = parse_spec(&format!("exists (s1 s2)\nforall x1 in {{0}} (s1)\nforall x2 in {{1}} (s2)\nP [F (a@x1 & b@x2)] >= {c}")).unwrap();
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        let (class, _) = classify_constraint(&problem, 0, 0, None);
        let p = &problem.products[0][0];
        let (lo, _) = rabin_optimal_policy(p, None, Direction::Min);
        let (hi, _) = rabin_optimal_policy(p, None, Direction::Max);
        match class {
            Tri::True => assert!(lo >= c - 1e-6),
            Tri::False => assert!(hi < c + 1e-6),
            Tri::Unknown => assert!(lo < c + 1e-6 && hi >= c - 1e-6),
        }
    }
}

#[test]
fn single_agent_matches_product_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for f in ["F a@x", "G F a@x", "F G !a@x", "(!a@x) U b@x"] {
        let m = random_mdp(&mut rng, 5, 3, &["a", "b"]);
        let h = parse_spec(&format!("exists (s)\nforall x in {{0}} (s)\nPmax [{f}]")).unwrap();
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        let (ub, _) = problem.solve(0, 0, None, Direction::Max);
        let res = synthesize(&m, &h, &SynthesisOptions::default()).unwrap();
        assert_eq!(res.status, Status::OptimumFound);
        assert!((res.best_value.unwrap() - ub).abs() < 1e-6, "{f}: {} vs {ub}", res.best_value.unwrap());
    }
}

#[test]
fn single_agent_trivial_automaton_needs_no_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = random_mdp(&mut rng, 5, 3, &["a"]);
    let h = parse_spec("exists (s)\nforall x in {0} (s)\nPmax [a@x]").unwrap();
    let res = synthesize(&m, &h, &SynthesisOptions::default()).unwrap();
    assert_eq!(res.stats.splits, 0);
    assert_eq!(res.status, Status::OptimumFound);
}

#[test]
fn synthesis_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let bodies = ["F (a@x1 & a@x2)", "(!a@x1) U a@x2", "G !a@x1 & F b@x2", "F a@x1 & G (a@x1 -> a@x2)"];
    for round in 0..24 {
        let m = random_mdp(&mut rng, 4, 2, &["a", "b"]);
        let h = two_agent_spec(round % 2 == 0, bodies[round % 4]);
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        let oracle = brute_force(&problem, 1 << 20).unwrap();
        let res = problem.run(&SynthesisOptions::default()).unwrap();
        let (a, b) = (res.best_value.unwrap(), oracle.best_value().unwrap());
        assert!((a - b).abs() < 1e-6, "round {round}: synth {a} vs oracle {b}");
        let check = problem.evaluate_policy_tuple(res.best.as_ref().unwrap()).unwrap();
        assert!((check.objective.unwrap() - a).abs() < 1e-6);
    }
}

#[test]
fn threshold_synthesis_is_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    for round in 0..16 {
        let m = random_mdp(&mut rng, 4, 2, &["a", "b"]);
        let c = [0.3, 0.6, 0.9, 0.99][round % 4];
        let h = parse_spec(&format!(
            "exists (s1 s2)\nforall x1 in {{0}} (s1)\nforall x2 in {{1}} (s2)\nP [F (a@x1 & b@x2)] >= {c} & P [G !b@x1] < 0.5"
        ))
        .unwrap();
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        let oracle = brute_force(&problem, 1 << 20).unwrap();
        let res = problem.run(&SynthesisOptions::default()).unwrap();
        match res.status {
            Status::ThresholdSatisfied => {
                assert!(problem.evaluate_policy_tuple(res.best.as_ref().unwrap()).unwrap().satisfied);
            }
            Status::Infeasible => assert!(oracle.best.is_none(), "round {round}: oracle found a tuple"),
            s => panic!("unexpected status {s}"),
        }
        assert_eq!(res.status == Status::ThresholdSatisfied, oracle.best.is_some(), "round {round}");
    }
}

#[test]
fn minimizing_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..12 {
        let m = random_mdp(&mut rng, 4, 2, &["a"]);
        let h = parse_spec("exists (s1 s2)\nforall x1 in {0} (s1)\nforall x2 in {1} (s2)\nPmin [F (a@x1 & a@x2)]").unwrap();
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        let oracle = brute_force(&problem, 1 << 20).unwrap();
        let res = problem.run(&SynthesisOptions::default()).unwrap();
        let (a, b) = (res.best_value.unwrap(), oracle.best_value().unwrap());
        assert!((a - b).abs() < 1e-6, "round {round}: synth {a} vs oracle {b}");
    }
}

#[test]
fn trace_is_deterministic_and_incumbent_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let m = random_mdp(&mut rng, 5, 3, &["a", "b"]);
    let h = two_agent_spec(true, "F (a@x1 & b@x2)");
    let opts = SynthesisOptions { seed: 4, ..Default::default() };
    let r1 = synthesize(&m, &h, &opts).unwrap();
    let r2 = synthesize(&m, &h, &opts).unwrap();
    assert_eq!(r1.trace, r2.trace);
    assert!(r1.anytime.windows(2).all(|w| w[1].1 > w[0].1 && w[1].0 >= w[0].0));
}

#[test]
fn parallel_workers_find_the_same_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let m = random_mdp(&mut rng, 5, 3, &["a", "b"]);
    let h = two_agent_spec(false, "F (a@x1 & b@x2)");
    let seq = synthesize(&m, &h, &SynthesisOptions::default()).unwrap();
    let par = synthesize(&m, &h, &SynthesisOptions { workers: 4, ..Default::default() }).unwrap();
    assert!((seq.best_value.unwrap() - par.best_value.unwrap()).abs() < 1e-6);
}

#[test]
fn node_budget_reports_exhaustion() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let m = random_mdp(&mut rng, 5, 3, &["a", "b"]);
    let h = two_agent_spec(false, "F (a@x1 & b@x2)");
    let res = synthesize(&m, &h, &SynthesisOptions { max_nodes: Some(0), ..Default::default() }).unwrap();
    assert_eq!(res.status, Status::BudgetExhausted);
    assert!(res.best.is_none());
}

#[test]
fn memory_never_hurts() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..4 {
        let m = random_mdp(&mut rng, 3, 2, &["a", "b"]);
        let h = two_agent_spec(false, "F (a@x1 & b@x2)");
        let v0 = synthesize(&m, &h, &SynthesisOptions::default()).unwrap().best_value.unwrap();
        let v1 = synthesize(&m, &h, &SynthesisOptions { memory_bits: 1, ..Default::default() }).unwrap().best_value.unwrap();
        assert!(v1 >= v0 - 1e-6, "memory lowered the value: {v1} < {v0}");
    }
}

#[test]
fn tuple_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let m = random_mdp(&mut rng, 4, 3, &["a", "b"]);
    let h = two_agent_spec(false, "F (a@x1 & b@x2)");
    for bits in [0, 1] {
        let problem = Problem::new(&m, &h, bits, None).unwrap();
        let t = random_tuple(&problem.products[0][0], &mut rng);
        let names = problem.spec.policy_vars.clone();
        let text = write_tuple(&t, &m, bits, &names);
        assert_eq!(parse_tuple(&text, &m, bits, &names).unwrap(), t);
    }
}

#[test]
fn tuple_file_errors_carry_line_numbers() {
    let m = shared_line();
    let names = vec!["s".to_string()];
    let e = parse_tuple("policy s\n0 fly\n", &m, 0, &names).unwrap_err();
    assert!(matches!(e, SynthesisError::TupleFormat { line: 2, .. }));
    let e = parse_tuple("policy t\n", &m, 0, &names).unwrap_err();
    assert!(matches!(e, SynthesisError::TupleFormat { line: 1, .. }));
}

#[test]
fn reward_objective_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for _ in 0..8 {
        let m = random_mdp(&mut rng, 4, 2, &["a"]);
        let h = parse_spec("exists (s1 s2)\nforall x1 in {0} (s1)\nforall x2 in {1} (s2)\nRmin{default} [F (a@x1 | a@x2)]").unwrap();
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        let oracle = brute_force(&problem, 1 << 20).unwrap();
        let res = problem.run(&SynthesisOptions::default()).unwrap();
        match (res.best_value, oracle.best_value()) {
            (Some(a), Some(b)) if a.is_finite() || b.is_finite() => assert!((a - b).abs() < 1e-6, "{a} vs {b}"),
            (Some(_), Some(_)) | (None, None) => {}
            (a, b) => panic!("synth {a:?} vs oracle {b:?}"),
        }
    }
}

#[test]
fn hoa_override_replaces_automaton() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let m = random_mdp(&mut rng, 4, 2, &["a", "b"]);
    let h = two_agent_spec(false, "F (a@x1 & b@x2)");
    let d = ltl_to_dra(&parse_ltl("F (a@1 & b@2)").unwrap()).unwrap();
    let plain = synthesize(&m, &h, &SynthesisOptions::default()).unwrap();
    let over = synthesize(&m, &h, &SynthesisOptions { hoa: Some(d), ..Default::default() }).unwrap();
    assert!((plain.best_value.unwrap() - over.best_value.unwrap()).abs() < 1e-9);
}

#[test]
fn products_share_the_agent_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let m = random_mdp(&mut rng, 3, 2, &["a"]);
    let h = parse_spec("exists (s)\nforall x in {0} (s)\nP [F a@x] >= 0.5 & P [G F a@x] >= 0.2").unwrap();
    let problem = Problem::new(&m, &h, 0, None).unwrap();
    assert!(Arc::ptr_eq(&problem.products[0][0].agent, &problem.products[0][1].agent));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn abstraction_bounds_every_tuple(seed in 0u64..1000, shared in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_mdp(&mut rng, 3, 2, &["a", "b"]);
        let h = two_agent_spec(shared, "F (a@x1 & b@x2)");
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        let (ub, _) = problem.solve(0, 0, None, Direction::Max);
        for _ in 0..10 {
            let t = random_tuple(&problem.products[0][0], &mut rng);
            let v = problem.evaluate_policy_tuple(&t).unwrap().objective.unwrap();
            prop_assert!(v <= ub + 1e-7);
        }
    }

    #[test]
    fn split_children_shrink_the_hole(allowed in 3u64..16, pick in 0usize..4) {
        let enabled = ActionSet(allowed | 0b11);
        let acts: Vec<usize> = enabled.iter().collect();
        let a = acts[pick % acts.len()];
        let b = acts[(pick + 1) % acts.len()];
        let h = Hole { policy_var: 0, local_state: 0 };
        let c = Conflict { hole: h, a, b, states: (0, 0), agents: (0, 0), kind: ConflictKind::LocalObservability };
        let kids = split(&ActionRestriction::new(), &c, enabled).unwrap();
        let sizes: usize = kids.iter().map(|k| k.allowed(h, enabled).len()).sum();
        prop_assert_eq!(sizes, enabled.len());
        for k in &kids {
            let s = k.allowed(h, enabled);
            prop_assert!(!(s.contains(a) && s.contains(b)));
        }
    }
}
