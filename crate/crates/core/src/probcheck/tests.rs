use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::chain::infinite_or_goal;
use super::*;
use crate::automata::{ltl_to_dra, reachability_dra};
use crate::hyperspec::Bindings;
use crate::ltl::{eval_on_lasso, parse_ltl, LassoWord, Letter};
use crate::mdp::{MdpBuilder, MemorylessPolicy};
use crate::product::{sync_product, ProductMdp};

pub(crate) fn random_mdp(rng: &mut ChaCha8Rng, n: usize, actions: usize, aps: &[&str]) -> Mdp {
    crate::benchgen::random_mdp(rng, n, actions, aps)
}

/// All deterministic memoryless policies as choice vectors.
fn all_policies(view: &MdpView) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for s in 0..view.num_states() {
        let cs: Vec<usize> = view.choices(s).collect();
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                cs.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    out
}

fn induced(m: &Mdp, pol: &[usize]) -> Vec<Vec<(usize, f64)>> {
    pol.iter().map(|&c| m.choice(c).dist.entries().to_vec()).collect()
}

/// Reachability probabilities of an induced chain.
fn chain_reach(succ: &[Vec<(usize, f64)>], targets: &[bool]) -> Vec<f64> {
    let n = succ.len();
    // states that cannot reach a target get 0
    let mut reach = targets.to_vec();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !reach[s] && succ[s].iter().any(|&(t, _)| reach[t]) {
                reach[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let fixed: Vec<Option<f64>> = (0..n)
        .map(|s| if targets[s] { Some(1.0) } else if !reach[s] { Some(0.0) } else { None })
        .collect();
    solve_chain(succ, &vec![0.0; n], &fixed)
}

/// Exact Rabin acceptance of an induced chain via bottom SCCs.
fn chain_rabin(succ: &[Vec<(usize, f64)>], acc: &Acceptance) -> Vec<f64> {
    let n = succ.len();
    let mut good = vec![false; n];
    for b in bottom_sccs(succ) {
        let ok = acc.pairs.iter().any(|(l, k)| b.iter().all(|&s| !l[s]) && b.iter().any(|&s| k[s]));
        for &s in &b {
            good[s] = ok;
        }
    }
    chain_reach(succ, &good)
}

fn is_ec(m: &Mdp, set: &[bool]) -> bool {
    let n = m.num_states();
    let stay: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            if !set[s] {
                return vec![];
            }
            m.choice_range(s).filter(|&c| m.choice(c).dist.support().all(|t| set[t])).collect()
        })
        .collect();
    if (0..n).any(|s| set[s] && stay[s].is_empty()) || !set.iter().any(|&x| x) {
        return false;
    }
    let sccs = tarjan_scc(n, set, |s, out| {
        for &c in &stay[s] {
            out.extend(m.choice(c).dist.support());
        }
    });
    sccs.len() == 1
}

#[test]
fn absorbing_state_is_one_mec() {
    let mut b = MdpBuilder::with_counts(1, 1, &[]);
    b.transition(0, 0, 0, 1.0);
    let mecs = mec_decomposition(&b.build().unwrap());
    assert_eq!(mecs, vec![Mec { states: vec![0], choices: vec![vec![0]] }]);
}

#[test]
fn bridged_cycles_are_two_mecs() {
    let mut b = MdpBuilder::with_counts(4, 1, &[]);
    b.transition(0, 0, 1, 1.0).transition(1, 0, 0, 0.5).transition(1, 0, 2, 0.5);
    b.transition(2, 0, 3, 1.0).transition(3, 0, 2, 1.0);
    let mecs = mec_decomposition(&b.build().unwrap());
    // 0 <-> 1 leaks to 2 with probability 1/2, so only {2,3} is an end component
    assert_eq!(mecs.len(), 1);
    let mut b = MdpBuilder::with_counts(4, 2, &[]);
    b.transition(0, 0, 1, 1.0).transition(1, 0, 0, 1.0).transition(1, 1, 2, 1.0);
    b.transition(2, 0, 3, 1.0).transition(3, 0, 2, 1.0);
    let mecs = mec_decomposition(&b.build().unwrap());
    assert_eq!(mecs.iter().map(|m| m.states.clone()).collect::<Vec<_>>(), vec![vec![0, 1], vec![2, 3]]);
}

#[test]
fn mecs_match_subset_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let m = random_mdp(&mut rng, 8, 2, &[]);
        let ecs: Vec<u32> = (1u32..256)
            .filter(|&mask| is_ec(&m, &(0..8).map(|i| mask >> i & 1 == 1).collect::<Vec<_>>()))
            .collect();
        let mut maximal: Vec<Vec<usize>> = ecs
            .iter()
            .filter(|&&a| !ecs.iter().any(|&b| b != a && b & a == a))
            .map(|&a| (0..8).filter(|i| a >> i & 1 == 1).collect())
            .collect();
        maximal.sort();
        let got: Vec<Vec<usize>> = mec_decomposition(&m).into_iter().map(|mec| mec.states).collect();
        assert_eq!(got, maximal);
    }
}

#[test]
fn reachability_examples() {
    let mut b = MdpBuilder::with_counts(3, 1, &[]);
    b.transition(0, 0, 1, 0.5).transition(0, 0, 2, 0.5).transition(1, 0, 1, 1.0).transition(2, 0, 2, 1.0);
    let m = b.build().unwrap();
    let sol = optimal_reachability(MdpView::from(&m), &[false, true, false], Direction::Max);
    assert!((sol.values[0] - 0.5).abs() < 1e-9);
    let sol = optimal_reachability(MdpView::from(&m), &[true, false, false], Direction::Min);
    assert_eq!(sol.values[0], 1.0);
}

#[test]
fn reachability_matches_policy_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..80 {
        let m = random_mdp(&mut rng, 6, 2, &[]);
        let targets: Vec<bool> = (0..6).map(|_| rng.gen_bool(0.25)).collect();
        let view = MdpView::from(&m);
        let evals: Vec<Vec<f64>> = all_policies(&view).iter().map(|p| chain_reach(&induced(&m, p), &targets)).collect();
        for dir in [Direction::Max, Direction::Min] {
            let sol = optimal_reachability(view, &targets, dir);
            let own = chain_reach(&induced(&m, &sol.policy), &targets);
            for s in 0..6 {
                let best = evals.iter().map(|v| v[s]).fold(
                    if dir == Direction::Max { 0.0f64 } else { 1.0 },
                    |a: f64, b| if dir == Direction::Max { a.max(b) } else { a.min(b) },
                );
                assert!((sol.values[s] - best).abs() < 1e-6, "{dir:?} s{s}: {} vs {best}", sol.values[s]);
                assert!((own[s] - best).abs() < 1e-6, "policy of {dir:?} at s{s}");
            }
        }
    }
}

fn chain_reward(succ: &[Vec<(usize, f64)>], r: &[f64], goal: &[bool]) -> Vec<f64> {
    solve_chain(succ, r, &infinite_or_goal(succ, goal))
}

#[test]
fn reward_examples() {
    let mut b = MdpBuilder::with_counts(3, 1, &[]);
    b.transition(0, 0, 1, 1.0).transition(1, 0, 2, 1.0).transition(2, 0, 2, 1.0);
    let m = b.build().unwrap();
    let goal = [false, false, true];
    for dir in [Direction::Min, Direction::Max] {
        let sol = expected_total_reward(MdpView::from(&m), &[1.0; 3], &goal, dir);
        assert_eq!(sol.values, vec![2.0, 1.0, 0.0]);
        let sol = expected_total_reward(MdpView::from(&m), &[1.0; 3], &[true, false, false], dir);
        assert_eq!(sol.values[0], 0.0);
    }
}

#[test]
fn reward_matches_policy_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..80 {
        let m = random_mdp(&mut rng, 6, 2, &[]);
        let r = &m.reward("default").unwrap().per_choice;
        let goal: Vec<bool> = (0..6).map(|_| rng.gen_bool(0.3)).collect();
        let view = MdpView::from(&m);
        let evals: Vec<Vec<f64>> = all_policies(&view)
            .iter()
            .map(|p| {
                let rs: Vec<f64> = p.iter().map(|&c| r[c]).collect();
                chain_reward(&induced(&m, p), &rs, &goal)
            })
            .collect();
        for dir in [Direction::Max, Direction::Min] {
            let sol = expected_total_reward(view, r, &goal, dir);
            let rs: Vec<f64> = sol.policy.iter().map(|&c| r[c]).collect();
            let own = chain_reward(&induced(&m, &sol.policy), &rs, &goal);
            for s in 0..6 {
                let vals = evals.iter().map(|v| v[s]);
                let best = match dir {
                    Direction::Max => vals.fold(0.0, f64::max),
                    Direction::Min => vals.fold(f64::INFINITY, f64::min),
                };
                let close = |a: f64, b: f64| a == b || (a - b).abs() < 1e-6 * (1.0 + b.abs());
                assert!(close(sol.values[s], best), "{dir:?} s{s}: {} vs {best}", sol.values[s]);
                assert!(close(own[s], best), "policy {dir:?} s{s}: {} vs {best}", own[s]);
            }
        }
    }
}

fn single_agent(m: Mdp, formula: &str, init: usize) -> ProductMdp {
    let d = ltl_to_dra(&parse_ltl(formula).unwrap()).unwrap();
    let b = Bindings { agent_policy: vec![0], initial: vec![init], policy_agents: vec![vec![0]] };
    sync_product(Arc::new(m), Arc::new(d), &b).unwrap()
}

#[test]
fn gf_on_alternating_cycle() {
    let mut b = MdpBuilder::with_counts(2, 1, &["a"]);
    b.transition(0, 0, 1, 1.0).transition(1, 0, 0, 1.0).label(0, 0);
    let p = single_agent(b.build().unwrap(), "G F a@1", 0);
    let ss = accepting_success_set(MdpView::from(&p.mdp), &Acceptance::of_product(&p));
    assert!(ss.members.iter().all(|&x| x));
    assert_eq!(rabin_optimal_policy(&p, None, Direction::Max).0, 1.0);
}

#[test]
fn eventually_goal_success_set_is_absorbing_part() {
    let mut b = MdpBuilder::with_counts(3, 2, &["goal"]);
    b.transition(0, 0, 1, 1.0).transition(0, 1, 2, 1.0).transition(1, 0, 1, 1.0).transition(2, 0, 2, 1.0);
    b.label(1, 0);
    let p = single_agent(b.build().unwrap(), "F goal@1", 0);
    let acc = Acceptance::of_product(&p);
    let ss = accepting_success_set(MdpView::from(&p.mdp), &acc);
    for s in 0..p.num_states() {
        assert_eq!(ss.members[s], p.local_state(s, 0) == 1, "state {s}");
    }
    let (v, pol) = rabin_optimal_policy(&p, None, Direction::Max);
    assert_eq!(v, 1.0);
    assert_eq!(p.agent_action(pol[p.initial], 0), 0);
    assert_eq!(rabin_optimal_policy(&p, None, Direction::Min).0, 0.0);
}

const FORMULAS: [&str; 6] = ["G F a@1", "F G a@1", "a@1 U b@1", "G (a@1 -> X b@1)", "F G a@1 | G F b@1", "X X a@1"];

#[test]
fn rabin_matches_policy_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 60 {
        let m = random_mdp(&mut rng, 4, 2, &["a", "b"]);
        let f = FORMULAS[checked % FORMULAS.len()];
        let p = single_agent(m, f, 0);
        let view = MdpView::from(&p.mdp);
        let pols = all_policies(&view);
        if pols.len() > 4096 {
            continue;
        }
        checked += 1;
        let acc = Acceptance::of_product(&p);
        let evals: Vec<f64> = pols.iter().map(|q| chain_rabin(&induced(&p.mdp, q), &acc)[p.initial]).collect();
        let max = evals.iter().copied().fold(0.0, f64::max);
        let min = evals.iter().copied().fold(1.0, f64::min);
        let (v, pol) = rabin_optimal_policy(&p, None, Direction::Max);
        assert!((v - max).abs() < 1e-6, "{f}: max {v} vs {max}");
        let own = chain_rabin(&induced(&p.mdp, &pol), &acc)[p.initial];
        assert!((own - v).abs() < 1e-6, "{f}: stitched policy {own} vs {v}");
        let (v, _) = rabin_optimal_policy(&p, None, Direction::Min);
        assert!(v <= min + 1e-6, "{f}: min {v} vs {min}");
        if p.dra.pairs().len() == 1 {
            assert!((v - min).abs() < 1e-6, "{f}: min {v} vs {min}");
        }
    }
}

#[test]
fn success_set_matches_recurrent_classes() {
    // a state is in U_Acc iff some memoryless policy has an accepting bottom SCC containing it
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 40 {
        let m = random_mdp(&mut rng, 3, 2, &["a", "b"]);
        let p = single_agent(m, FORMULAS[checked % 3], 0);
        let view = MdpView::from(&p.mdp);
        let pols = all_policies(&view);
        if pols.len() > 4096 {
            continue;
        }
        checked += 1;
        let acc = Acceptance::of_product(&p);
        let mut expect = vec![false; p.num_states()];
        for q in &pols {
            for b in bottom_sccs(&induced(&p.mdp, q)) {
                if acc.pairs.iter().any(|(l, k)| b.iter().all(|&s| !l[s]) && b.iter().any(|&s| k[s])) {
                    for &s in &b {
                        expect[s] = true;
                    }
                }
            }
        }
        assert_eq!(accepting_success_set(view, &acc).members, expect);
    }
}

fn policy_chain_value(m: &Mdp, f: &str, pol: &[usize], init: usize) -> f64 {
    let d = ltl_to_dra(&parse_ltl(f).unwrap()).unwrap();
    let beh: Behaviour = pol.iter().map(|&c| vec![(c, 1.0)]).collect();
    let c = joint_chain(m, &[&beh], &[init], 1000).unwrap();
    mc_satisfaction_probability(&c, m, &d).unwrap()
}

#[test]
fn chain_route_agrees_with_product_route() {
    // for Markov chains both routes compute the same probability
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..60 {
        let m = random_mdp(&mut rng, 5, 1, &["a", "b"]);
        let f = FORMULAS[i % FORMULAS.len()];
        let p = single_agent(m.clone(), f, 0);
        let (v, _) = rabin_optimal_policy(&p, None, Direction::Max);
        let pol: Vec<usize> = (0..5).map(|s| m.choice_range(s).start).collect();
        let w = policy_chain_value(&m, f, &pol, 0);
        assert!((v - w).abs() < 1e-8, "{f}: {v} vs {w}");
    }
}

#[test]
fn deterministic_chains_follow_lasso_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..80 {
        let n = 5;
        let mut b = MdpBuilder::with_counts(n, 1, &["a", "b"]);
        let succ: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        for s in 0..n {
            b.transition(s, 0, succ[s], 1.0);
            for ap in 0..2 {
                if rng.gen_bool(0.5) {
                    b.label(s, ap);
                }
            }
        }
        let m = b.build().unwrap();
        // unroll the lasso from state 0
        let mut seen = vec![usize::MAX; n];
        let mut path = Vec::new();
        let mut s = 0;
        while seen[s] == usize::MAX {
            seen[s] = path.len();
            path.push(s);
            s = succ[s];
        }
        let letter = |s: usize| -> Letter { vec![m.label(s).iter().map(|ap| m.ap_names()[ap].clone()).collect()] };
        let w = LassoWord::new(
            path[..seen[s]].iter().map(|&x| letter(x)).collect(),
            path[seen[s]..].iter().map(|&x| letter(x)).collect(),
        )
        .unwrap();
        let f = FORMULAS[i % FORMULAS.len()];
        let expected = if eval_on_lasso(&parse_ltl(f).unwrap(), &w).unwrap() { 1.0 } else { 0.0 };
        let p = single_agent(m.clone(), f, 0);
        assert_eq!(rabin_optimal_policy(&p, None, Direction::Max).0, expected, "{f}");
        assert_eq!(policy_chain_value(&m, f, &[0, 1, 2, 3, 4], 0), expected, "{f}");
    }
}

#[test]
fn reward_chain_route_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..40 {
        let m = random_mdp(&mut rng, 5, 1, &["g"]);
        let f = parse_ltl("F g@1").unwrap();
        let (d, target) = reachability_dra(&f).unwrap();
        let b = Bindings { agent_policy: vec![0], initial: vec![0], policy_agents: vec![vec![0]] };
        let p = sync_product(Arc::new(m.clone()), Arc::new(d.clone()), &b).unwrap();
        let r = p.reward_vector("default", None).unwrap();
        let goal = p.states_where(|q| q == target);
        let sol = expected_total_reward(MdpView::from(&p.mdp), &r, &goal, Direction::Min);
        let pol = MemorylessPolicy::lowest(&m);
        let beh = policy_behaviour(&m, &pol).unwrap();
        let c = joint_chain(&m, &[&beh], &[0], 100).unwrap();
        let rs: Vec<f64> = (0..c.num_states())
            .map(|s| m.reward("default").unwrap().per_choice[m.choice_range(c.tuple(s)[0]).start])
            .collect();
        let w = chain_expected_reward(&c, &m, &d, target, &rs).unwrap();
        let v = sol.values[p.initial];
        assert!(v == w || (v - w).abs() < 1e-8 * (1.0 + w), "{v} vs {w}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn restriction_is_monotone(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_mdp(&mut rng, 5, 3, &["a", "b"]);
        let p = single_agent(m, FORMULAS[(seed % 6) as usize], 0);
        let mut mask = crate::mdp::ChoiceMask::full(&p.mdp);
        for s in 0..p.num_states() {
            let r = p.mdp.choice_range(s);
            if r.len() > 1 && rng.gen_bool(0.5) {
                mask.set(r.start + rng.gen_range(0..r.len()), false);
            }
        }
        let (full_max, _) = rabin_optimal_policy(&p, None, Direction::Max);
        let (res_max, _) = rabin_optimal_policy(&p, Some(&mask), Direction::Max);
        let (full_min, _) = rabin_optimal_policy(&p, None, Direction::Min);
        let (res_min, _) = rabin_optimal_policy(&p, Some(&mask), Direction::Min);
        prop_assert!(res_max <= full_max + 1e-9);
        prop_assert!(res_min >= full_min - 1e-9);
        prop_assert!((0.0..=1.0).contains(&res_max) && res_min <= res_max + 1e-9);
    }

    #[test]
    fn stitched_policy_reproduces_value(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_mdp(&mut rng, 6, 2, &["a", "b"]);
        let p = single_agent(m, FORMULAS[(seed % 6) as usize], 0);
        let (v, pol) = rabin_optimal_policy(&p, None, Direction::Max);
        let own = chain_rabin(&induced(&p.mdp, &pol), &Acceptance::of_product(&p))[p.initial];
        prop_assert!((own - v).abs() < 1e-6);
    }
}
