//! MDP model checking: end components, reachability, Rabin acceptance and
//! expected total reward, with memoryless policy extraction.

mod chain;

pub use chain::{
    bottom_sccs, chain_dra, chain_expected_reward, joint_chain, mc_satisfaction_probability,
    policy_behaviour, solve_chain, uniform_behaviour, Behaviour, ChainDra, JointChain,
};

use crate::graph::tarjan_scc;
pub use crate::hyperspec::Direction;
use crate::mdp::{ChoiceMask, Mdp, MdpView, StateId};
use crate::product::ProductMdp;

/// Value-iteration convergence threshold.
pub const EPSILON: f64 = 1e-8;
/// Slack under which a choice counts as optimal during policy extraction.
const OPT_SLACK: f64 = 1e-7;
const MAX_SWEEPS: usize = 10_000_000;
const MAX_POLICY_ROUNDS: usize = 10_000;

/// A maximal end component with its retained choices (parallel to `states`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mec {
    pub states: Vec<StateId>,
    pub choices: Vec<Vec<usize>>,
}

pub fn mec_decomposition(m: &Mdp) -> Vec<Mec> {
    mecs_within(MdpView::from(m), &vec![true; m.num_states()])
}

/// MECs of the sub-MDP induced by `subset` (choices leaving it are dropped).
pub fn mecs_within(view: MdpView, subset: &[bool]) -> Vec<Mec> {
    let m = view.mdp;
    let n = m.num_states();
    let mut alive = subset.to_vec();
    let mut ok: Vec<bool> = (0..m.num_choices()).map(|c| view.allows(c)).collect();
    let mut comp = vec![usize::MAX; n];
    loop {
        loop {
            let mut changed = false;
            for s in 0..n {
                if !alive[s] {
                    continue;
                }
                let mut any = false;
                for c in m.choice_range(s) {
                    if ok[c] {
                        if m.choice(c).dist.support().any(|t| !alive[t]) {
                            ok[c] = false;
                        } else {
                            any = true;
                        }
                    }
                }
                if !any {
                    alive[s] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let sccs = tarjan_scc(n, &alive, |s, out| {
            for c in m.choice_range(s) {
                if ok[c] {
                    out.extend(m.choice(c).dist.support());
                }
            }
        });
        for (i, scc) in sccs.iter().enumerate() {
            for &s in scc {
                comp[s] = i;
            }
        }
        let mut changed = false;
        for s in 0..n {
            if !alive[s] {
                continue;
            }
            for c in m.choice_range(s) {
                if ok[c] && m.choice(c).dist.support().any(|t| comp[t] != comp[s]) {
                    ok[c] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            let mut out: Vec<Mec> = sccs
                .into_iter()
                .map(|states| {
                    let choices = states.iter().map(|&s| m.choice_range(s).filter(|&c| ok[c]).collect()).collect();
                    Mec { states, choices }
                })
                .collect();
            out.sort_by_key(|mec| mec.states[0]);
            return out;
        }
    }
}

/// Rabin pairs `(L, K)` as state sets of an MDP.
#[derive(Debug, Clone)]
pub struct Acceptance {
    pub pairs: Vec<(Vec<bool>, Vec<bool>)>,
}

impl Acceptance {
    pub fn of_product(p: &ProductMdp) -> Self {
        let pairs = p
            .dra
            .pairs()
            .iter()
            .map(|pair| (p.states_where(|q| pair.l[q]), p.states_where(|q| pair.k[q])))
            .collect();
        Acceptance { pairs }
    }
}

/// The success set `U_Acc` with an in-MEC strategy for each member.
#[derive(Debug, Clone)]
pub struct SuccessSet {
    pub members: Vec<bool>,
    pub strategy: Vec<Option<usize>>,
}

/// Memoryless strategy inside `mec` reaching `goal` (shortest path) from
/// every state, staying inside the MEC. Goal states take their lowest
/// retained choice.
fn attractor(m: &Mdp, mec: &Mec, goal: impl Fn(StateId) -> bool) -> Vec<usize> {
    let k = mec.states.len();
    let mut picked: Vec<Option<usize>> = (0..k).map(|i| goal(mec.states[i]).then(|| mec.choices[i][0])).collect();
    let mut done: std::collections::HashSet<StateId> =
        (0..k).filter(|&i| picked[i].is_some()).map(|i| mec.states[i]).collect();
    loop {
        let mut layer = Vec::new();
        for i in 0..k {
            if picked[i].is_some() {
                continue;
            }
            if let Some(&c) = mec.choices[i].iter().find(|&&c| m.choice(c).dist.support().any(|t| done.contains(&t))) {
                layer.push((i, c));
            }
        }
        if layer.is_empty() {
            break;
        }
        for (i, c) in layer {
            picked[i] = Some(c);
            done.insert(mec.states[i]);
        }
    }
    picked.into_iter().enumerate().map(|(i, c)| c.unwrap_or(mec.choices[i][0])).collect()
}

pub fn accepting_success_set(view: MdpView, acc: &Acceptance) -> SuccessSet {
    let n = view.num_states();
    let mut members = vec![false; n];
    let mut strategy = vec![None; n];
    for (l, k) in &acc.pairs {
        let subset: Vec<bool> = l.iter().map(|x| !x).collect();
        for mec in mecs_within(view, &subset) {
            if !mec.states.iter().any(|&s| k[s]) {
                continue;
            }
            let strat = attractor(view.mdp, &mec, |s| k[s]);
            for (i, &s) in mec.states.iter().enumerate() {
                if !members[s] {
                    members[s] = true;
                    strategy[s] = Some(strat[i]);
                }
            }
        }
    }
    SuccessSet { members, strategy }
}

/// States of end components satisfying the complemented (Streett)
/// condition: every pair whose `K` is visited also visits `L`.
pub fn streett_success_set(view: MdpView, acc: &Acceptance) -> SuccessSet {
    let n = view.num_states();
    let mut members = vec![false; n];
    let mut strategy = vec![None; n];
    let mut stack = mecs_within(view, &vec![true; n]);
    while let Some(mec) = stack.pop() {
        let bad = acc.pairs.iter().find(|(l, k)| {
            mec.states.iter().any(|&s| k[s]) && !mec.states.iter().any(|&s| l[s])
        });
        match bad {
            Some((_, k)) => {
                let mut sub = vec![false; n];
                for &s in &mec.states {
                    sub[s] = !k[s];
                }
                stack.extend(mecs_within(view, &sub));
            }
            None => {
                // recurrence through the L states (or any state when no pair is touched)
                let hits: Vec<StateId> = mec
                    .states
                    .iter()
                    .copied()
                    .filter(|&s| acc.pairs.iter().any(|(l, _)| l[s]))
                    .collect();
                let first = mec.states[0];
                let strat = if hits.is_empty() {
                    attractor(view.mdp, &mec, |s| s == first)
                } else {
                    attractor(view.mdp, &mec, |s| hits.contains(&s))
                };
                for (i, &s) in mec.states.iter().enumerate() {
                    members[s] = true;
                    strategy[s] = Some(strat[i]);
                }
            }
        }
    }
    SuccessSet { members, strategy }
}

/// Values and a memoryless policy (one choice index per state).
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
}

fn first_choice(view: &MdpView, s: StateId) -> usize {
    view.choices(s).next().unwrap_or_else(|| view.mdp.choice_range(s).start)
}

fn q_value(view: &MdpView, c: usize, v: &[f64]) -> f64 {
    view.dist(c).expect(v)
}

/// States that can reach `targets` with positive probability.
/// Also returns, for each newly reached state, a choice moving closer.
fn can_reach(
    view: &MdpView,
    targets: &[bool],
    within: &[bool],
    pred: &[Vec<usize>],
    src: &[StateId],
) -> (Vec<bool>, Vec<Option<usize>>) {
    let mut seen = targets.to_vec();
    let mut via = vec![None; seen.len()];
    let mut queue: std::collections::VecDeque<StateId> = (0..seen.len()).filter(|&s| seen[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &c in &pred[t] {
            let s = src[c];
            if !seen[s] && within[s] && view.allows(c) {
                seen[s] = true;
                via[s] = Some(c);
                queue.push_back(s);
            }
        }
    }
    (seen, via)
}

/// Prob-1 set for the maximizer with a strategy reaching `targets` almost surely.
fn prob1e(view: &MdpView, targets: &[bool], pred: &[Vec<usize>], src: &[StateId]) -> (Vec<bool>, Vec<Option<usize>>) {
    let n = view.num_states();
    let m = view.mdp;
    let mut u = vec![true; n];
    loop {
        // backward BFS from targets using choices that stay in u
        let mut layer_of: Vec<Option<usize>> = vec![None; n];
        let mut strat: Vec<Option<usize>> = vec![None; n];
        let mut frontier: Vec<StateId> = (0..n).filter(|&s| targets[s] && u[s]).collect();
        for &s in &frontier {
            layer_of[s] = Some(0);
            strat[s] = Some(first_choice(view, s));
        }
        let mut depth = 0;
        while !frontier.is_empty() {
            depth += 1;
            let mut cands: Vec<StateId> = Vec::new();
            for &t in &frontier {
                for &c in &pred[t] {
                    let s = src[c];
                    if u[s] && layer_of[s].is_none() && view.allows(c) {
                        cands.push(s);
                    }
                }
            }
            cands.sort_unstable();
            cands.dedup();
            let mut next = Vec::new();
            for s in cands {
                let pick = view.choices(s).find(|&c| {
                    let d = &m.choice(c).dist;
                    d.support().all(|t| u[t]) && d.support().any(|t| layer_of[t].is_some_and(|l| l < depth))
                });
                if let Some(c) = pick {
                    strat[s] = Some(c);
                    next.push(s);
                }
            }
            for &s in &next {
                layer_of[s] = Some(depth);
            }
            frontier = next;
        }
        let r: Vec<bool> = layer_of.iter().map(|l| l.is_some()).collect();
        if r == u {
            return (u, strat);
        }
        u = r;
    }
}

/// States from which some strategy avoids `targets` forever, with the strategy.
fn prob0e(view: &MdpView, targets: &[bool]) -> (Vec<bool>, Vec<Option<usize>>) {
    let n = view.num_states();
    let m = view.mdp;
    let mut z: Vec<bool> = targets.iter().map(|t| !t).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if z[s] && !view.choices(s).any(|c| m.choice(c).dist.support().all(|t| z[t])) {
                z[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let strat = (0..n)
        .map(|s| {
            if z[s] {
                view.choices(s).find(|&c| m.choice(c).dist.support().all(|t| z[t]))
            } else {
                None
            }
        })
        .collect();
    (z, strat)
}

/// Optimal probability of reaching `targets`, with a memoryless policy
/// attaining it.
pub fn optimal_reachability(view: MdpView, targets: &[bool], dir: Direction) -> Solution {
    let m = view.mdp;
    let n = m.num_states();
    let pred = m.predecessors();
    let src = m.choice_sources();
    let mut v: Vec<f64> = targets.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let mut policy: Vec<usize> = (0..n).map(|s| first_choice(&view, s)).collect();
    match dir {
        Direction::Max => {
            let (reach, _) = can_reach(&view, targets, &vec![true; n], &pred, &src);
            let (one, strat1) = prob1e(&view, targets, &pred, &src);
            let maybe: Vec<StateId> = (0..n).filter(|&s| reach[s] && !one[s]).collect();
            for s in 0..n {
                if one[s] {
                    v[s] = 1.0;
                    policy[s] = strat1[s].unwrap_or(policy[s]);
                }
            }
            iterate(&view, &maybe, &mut v, |a, b| a > b, &|_| 0.0);
            extract_max(&view, &maybe, &one, &v, &mut policy, &pred, &src);
        }
        Direction::Min => {
            let (zero, strat0) = prob0e(&view, targets);
            let maybe: Vec<StateId> = (0..n).filter(|&s| !zero[s] && !targets[s]).collect();
            for s in 0..n {
                if zero[s] {
                    policy[s] = strat0[s].unwrap_or(policy[s]);
                }
            }
            iterate(&view, &maybe, &mut v, |a, b| a < b, &|_| 0.0);
            extract_greedy(&view, &maybe, &v, &mut policy, |a, b| a < b, &|_| 0.0);
        }
    }
    Solution { values: v, policy }
}

/// Gauss-Seidel sweeps over `states` (in reverse order) until the largest
/// change drops below `EPSILON`.
fn iterate(view: &MdpView, states: &[StateId], v: &mut [f64], better: impl Fn(f64, f64) -> bool, reward: &dyn Fn(usize) -> f64) {
    for _ in 0..MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        for &s in states.iter().rev() {
            let mut best: Option<f64> = None;
            for c in view.choices(s) {
                let q = reward(c) + q_value(view, c, v);
                if best.is_none_or(|b| better(q, b)) {
                    best = Some(q);
                }
            }
            let nv = best.unwrap_or(0.0);
            delta = delta.max((nv - v[s]).abs() / (1.0 + nv.abs()));
            v[s] = nv;
        }
        if delta < EPSILON {
            return;
        }
    }
}

fn extract_greedy(
    view: &MdpView,
    states: &[StateId],
    v: &[f64],
    policy: &mut [usize],
    better: impl Fn(f64, f64) -> bool,
    reward: &dyn Fn(usize) -> f64,
) {
    for &s in states {
        let mut best: Option<(f64, usize)> = None;
        for c in view.choices(s) {
            let q = reward(c) + q_value(view, c, v);
            let tol = 1e-12 * (1.0 + q.abs());
            if best.is_none_or(|(b, _)| better(q, b) && (q - b).abs() > tol) {
                best = Some((q, c));
            }
        }
        if let Some((_, c)) = best {
            policy[s] = c;
        }
    }
}

/// Max-policy extraction that also guarantees progress: backward layers from
/// the prob-1 states over near-optimal choices; within a layer prefer the
/// largest Q-value, then the lowest choice.
fn extract_max(
    view: &MdpView,
    maybe: &[StateId],
    one: &[bool],
    v: &[f64],
    policy: &mut [usize],
    pred: &[Vec<usize>],
    src: &[StateId],
) {
    let n = view.num_states();
    let mut in_maybe = vec![false; n];
    for &s in maybe {
        in_maybe[s] = true;
    }
    let mut assigned: Vec<bool> = one.to_vec();
    let mut frontier: Vec<StateId> = (0..n).filter(|&s| one[s]).collect();
    while !frontier.is_empty() {
        let mut cands: Vec<StateId> = frontier
            .iter()
            .flat_map(|&t| pred[t].iter().map(|&c| src[c]))
            .filter(|&s| in_maybe[s] && !assigned[s])
            .collect();
        cands.sort_unstable();
        cands.dedup();
        let mut next = Vec::new();
        for s in cands {
            let mut best: Option<(f64, usize)> = None;
            for c in view.choices(s) {
                let q = q_value(view, c, v);
                if q < v[s] - OPT_SLACK || !view.dist(c).support().any(|t| assigned[t]) {
                    continue;
                }
                if best.is_none_or(|(b, _)| q > b + 1e-12) {
                    best = Some((q, c));
                }
            }
            if let Some((_, c)) = best {
                policy[s] = c;
                next.push(s);
            }
        }
        for &s in &next {
            assigned[s] = true;
        }
        frontier = next;
    }
    let rest: Vec<StateId> = maybe.iter().copied().filter(|&s| !assigned[s]).collect();
    extract_greedy(view, &rest, v, policy, |a, b| a > b, &|_| 0.0);
}

/// Optimal Rabin acceptance probability per state with a policy attaining it
/// (for `Min`, the policy maximizes the complemented condition).
pub fn rabin_values(view: MdpView, acc: &Acceptance, dir: Direction) -> Solution {
    let ss = match dir {
        Direction::Max => accepting_success_set(view, acc),
        Direction::Min => streett_success_set(view, acc),
    };
    let mut sol = optimal_reachability(view, &ss.members, Direction::Max);
    for (s, c) in ss.strategy.iter().enumerate() {
        if let Some(c) = c {
            sol.policy[s] = *c;
        }
    }
    if dir == Direction::Min {
        for x in sol.values.iter_mut() {
            *x = 1.0 - *x;
        }
    }
    sol
}

/// Value at the initial state and policy of the product for its DRA.
pub fn rabin_optimal_policy(p: &ProductMdp, mask: Option<&ChoiceMask>, dir: Direction) -> (f64, Vec<usize>) {
    let sol = rabin_values(MdpView::new(&p.mdp, mask), &Acceptance::of_product(p), dir);
    (sol.values[p.initial], sol.policy)
}

/// Expected total reward until `goal`; `∞` where the goal is not reached
/// almost surely (under the best policy for `Min`, under some policy for `Max`).
pub fn expected_total_reward(view: MdpView, reward: &[f64], goal: &[bool], dir: Direction) -> Solution {
    let m = view.mdp;
    let n = m.num_states();
    let pred = m.predecessors();
    let src = m.choice_sources();
    let mut policy: Vec<usize> = (0..n).map(|s| first_choice(&view, s)).collect();
    let mut v = vec![0.0; n];
    match dir {
        Direction::Min => {
            let (ok, strat) = prob1e(&view, goal, &pred, &src);
            for s in 0..n {
                if !ok[s] {
                    v[s] = f64::INFINITY;
                } else if !goal[s] {
                    policy[s] = strat[s].unwrap_or(policy[s]);
                }
            }
            let free: Vec<StateId> = (0..n).filter(|&s| ok[s] && !goal[s]).collect();
            policy_iteration(&view, reward, &free, &mut v, &mut policy);
        }
        Direction::Max => {
            let (avoid, stay) = prob0e(&view, goal);
            let not_goal: Vec<bool> = goal.iter().map(|g| !g).collect();
            let (bad, via) = can_reach(&view, &avoid, &not_goal, &pred, &src);
            let free: Vec<StateId> = (0..n).filter(|&s| !bad[s] && !goal[s]).collect();
            for s in 0..n {
                if bad[s] {
                    v[s] = f64::INFINITY;
                    policy[s] = stay[s].or(via[s]).unwrap_or(policy[s]);
                }
            }
            iterate(&view, &free, &mut v, |a, b| a > b, &|c| reward[c]);
            extract_greedy(&view, &free, &v, &mut policy, |a, b| a > b, &|c| reward[c]);
        }
    }
    Solution { values: v, policy }
}

/// Min-reward policy iteration from a proper policy; switches only on strict
/// improvement so the policy stays proper.
fn policy_iteration(view: &MdpView, reward: &[f64], free: &[StateId], v: &mut [f64], policy: &mut [usize]) {
    let n = view.num_states();
    let mut is_free = vec![false; n];
    for &s in free {
        is_free[s] = true;
    }
    for _ in 0..MAX_POLICY_ROUNDS {
        let succ: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|s| if is_free[s] { view.dist(policy[s]).entries().to_vec() } else { Vec::new() })
            .collect();
        let b: Vec<f64> = (0..n).map(|s| if is_free[s] { reward[policy[s]] } else { 0.0 }).collect();
        let fixed: Vec<Option<f64>> = (0..n).map(|s| if is_free[s] { None } else { Some(v[s]) }).collect();
        let sol = solve_chain(&succ, &b, &fixed);
        v.copy_from_slice(&sol);
        let mut changed = false;
        for &s in free {
            let cur = reward[policy[s]] + q_value(view, policy[s], v);
            let mut best = (cur, policy[s]);
            for c in view.choices(s) {
                let q = reward[c] + q_value(view, c, v);
                if q < best.0 - 1e-9 * (1.0 + cur.abs()) {
                    best = (q, c);
                }
            }
            if best.1 != policy[s] {
                policy[s] = best.1;
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

#[cfg(test)]
pub(crate) mod tests;
