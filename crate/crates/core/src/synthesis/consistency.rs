//! Consistency of centralized product policies, factorization into policy
//! tuples, lifting, random conflict resolution and splitting.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{ActionId, ActionRestriction, ActionSet, Hole, MemorylessPolicy, StateId};
use crate::product::ProductMdp;

use super::{PolicyTuple, SynthesisError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConflictKind {
    /// One agent, two product states with the same local component.
    LocalObservability,
    /// Two agents bound to the same policy variable.
    PolicyBinding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub hole: Hole,
    pub a: ActionId,
    pub b: ActionId,
    /// Product states where `a` and `b` are chosen.
    pub states: (StateId, StateId),
    pub agents: (usize, usize),
    pub kind: ConflictKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsistencyReport {
    pub conflicts: Vec<Conflict>,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.conflicts.is_empty()
    }
}

/// Product states reachable from the initial state under `policy`.
pub fn reachable_under(p: &ProductMdp, policy: &[usize]) -> Vec<bool> {
    decision_states(p, policy, &[])
}

/// States reachable under `policy` without passing through a `settled`
/// state (one whose value no policy can change); settled states themselves
/// are excluded. An empty `settled` means none.
pub fn decision_states(p: &ProductMdp, policy: &[usize], settled: &[bool]) -> Vec<bool> {
    let is_settled = |s: usize| settled.get(s).copied().unwrap_or(false);
    let mut seen = vec![false; p.num_states()];
    if is_settled(p.initial) {
        return seen;
    }
    seen[p.initial] = true;
    let mut queue = VecDeque::from([p.initial]);
    while let Some(s) = queue.pop_front() {
        for t in p.mdp.choice(policy[s]).dist.support() {
            if !seen[t] && !is_settled(t) {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    seen
}

/// Scans the product states reachable under `policy` (ascending ids, agents
/// ascending) and reports the first conflict of every hole.
pub fn check_consistency(p: &ProductMdp, policy: &[usize]) -> ConsistencyReport {
    check_consistency_in(p, policy, &[])
}

/// [`check_consistency`] restricted to [`decision_states`].
pub fn check_consistency_in(p: &ProductMdp, policy: &[usize], settled: &[bool]) -> ConsistencyReport {
    let reach = decision_states(p, policy, settled);
    let mut first: BTreeMap<Hole, (ActionId, StateId, usize)> = BTreeMap::new();
    let mut reported: BTreeSet<Hole> = BTreeSet::new();
    let mut conflicts = Vec::new();
    for s in (0..p.num_states()).filter(|&s| reach[s]) {
        for i in 0..p.num_agents() {
            let h = p.hole(s, i);
            let b = p.agent_action(policy[s], i);
            match first.get(&h) {
                None => {
                    first.insert(h, (b, s, i));
                }
                Some(&(a, s0, i0)) => {
                    if a != b && reported.insert(h) {
                        conflicts.push(Conflict {
                            hole: h,
                            a,
                            b,
                            states: (s0, s),
                            agents: (i0, i),
                            kind: if i0 == i { ConflictKind::LocalObservability } else { ConflictKind::PolicyBinding },
                        });
                    }
                }
            }
        }
    }
    ConsistencyReport { conflicts }
}

/// Actions assigned to each hole over the states reachable under `policy`.
fn assignments(p: &ProductMdp, policy: &[usize], settled: &[bool]) -> BTreeMap<Hole, BTreeSet<ActionId>> {
    let reach = decision_states(p, policy, settled);
    let mut out: BTreeMap<Hole, BTreeSet<ActionId>> = BTreeMap::new();
    for s in (0..p.num_states()).filter(|&s| reach[s]) {
        for i in 0..p.num_agents() {
            out.entry(p.hole(s, i)).or_default().insert(p.agent_action(policy[s], i));
        }
    }
    out
}

/// Completes per-hole choices into a total tuple, using the lowest action
/// allowed by `r` for unassigned holes.
pub(crate) fn complete(p: &ProductMdp, r: &ActionRestriction, chosen: &BTreeMap<Hole, ActionId>) -> PolicyTuple {
    let vars = p.bindings.policy_agents.len();
    let policies = (0..vars)
        .map(|v| {
            let actions = (0..p.agent.num_states())
                .map(|s| {
                    let h = Hole { policy_var: v, local_state: s };
                    chosen.get(&h).copied().unwrap_or_else(|| {
                        let en = p.agent.enabled(s);
                        r.allowed(h, en).first().or(en.first()).expect("every state has an action")
                    })
                })
                .collect();
            MemorylessPolicy::total(actions)
        })
        .collect();
    PolicyTuple { policies }
}

/// The policy tuple whose lift reproduces a consistent `policy` on the
/// states it reaches.
pub fn factorize(p: &ProductMdp, policy: &[usize], r: &ActionRestriction) -> Result<PolicyTuple, SynthesisError> {
    factorize_in(p, policy, r, &[])
}

/// [`factorize`] restricted to [`decision_states`].
pub fn factorize_in(
    p: &ProductMdp,
    policy: &[usize],
    r: &ActionRestriction,
    settled: &[bool],
) -> Result<PolicyTuple, SynthesisError> {
    let mut chosen = BTreeMap::new();
    for (h, acts) in assignments(p, policy, settled) {
        if acts.len() > 1 {
            return Err(SynthesisError::Inconsistent(h));
        }
        chosen.insert(h, *acts.iter().next().unwrap());
    }
    Ok(complete(p, r, &chosen))
}

/// Centralized policy (one product choice per state) played by a tuple.
pub fn lift(t: &PolicyTuple, p: &ProductMdp) -> Vec<usize> {
    (0..p.num_states())
        .map(|s| {
            let acts: Vec<ActionId> = (0..p.num_agents())
                .map(|i| {
                    let h = p.hole(s, i);
                    t.policies[h.policy_var].get(h.local_state).expect("tuple is total")
                })
                .collect();
            p.joint_choice(s, &acts).expect("tuple actions are enabled")
        })
        .collect()
}

/// Picks, for every hole, one of the actions `policy` assigns to it
/// (uniformly, seeded).
pub fn resolve_randomly(
    p: &ProductMdp,
    policy: &[usize],
    r: &ActionRestriction,
    rng: &mut ChaCha8Rng,
) -> PolicyTuple {
    resolve_randomly_in(p, policy, r, &[], rng)
}

/// [`resolve_randomly`] restricted to [`decision_states`].
pub fn resolve_randomly_in(
    p: &ProductMdp,
    policy: &[usize],
    r: &ActionRestriction,
    settled: &[bool],
    rng: &mut ChaCha8Rng,
) -> PolicyTuple {
    let chosen = assignments(p, policy, settled)
        .into_iter()
        .map(|(h, acts)| {
            let acts: Vec<ActionId> = acts.into_iter().collect();
            let a = if acts.len() == 1 { acts[0] } else { acts[rng.gen_range(0..acts.len())] };
            (h, a)
        })
        .collect();
    complete(p, r, &chosen)
}

/// Discount of the occupancy measure used by [`resolve_by_occupancy`].
const OCCUPANCY_DISCOUNT: f64 = 0.99;
const OCCUPANCY_ROUNDS: usize = 300;

/// Picks, for every hole, the action `policy` plays with the largest
/// discounted occupancy over the decision states.
pub fn resolve_by_occupancy(p: &ProductMdp, policy: &[usize], r: &ActionRestriction, settled: &[bool]) -> PolicyTuple {
    let reach = decision_states(p, policy, settled);
    let n = p.num_states();
    let mut occ = vec![0.0; n];
    let mut next = vec![0.0; n];
    occ[p.initial] = if reach[p.initial] { 1.0 } else { 0.0 };
    let mut total = occ.clone();
    for _ in 0..OCCUPANCY_ROUNDS {
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in (0..n).filter(|&s| reach[s] && occ[s] > 0.0) {
            for &(t, q) in p.mdp.choice(policy[s]).dist.entries() {
                if reach[t] {
                    next[t] += OCCUPANCY_DISCOUNT * q * occ[s];
                }
            }
        }
        std::mem::swap(&mut occ, &mut next);
        for (t, x) in total.iter_mut().zip(&occ) {
            *t += x;
        }
    }
    let mut weight: BTreeMap<Hole, BTreeMap<ActionId, f64>> = BTreeMap::new();
    for s in (0..n).filter(|&s| reach[s]) {
        for i in 0..p.num_agents() {
            *weight.entry(p.hole(s, i)).or_default().entry(p.agent_action(policy[s], i)).or_default() += total[s];
        }
    }
    let chosen = weight
        .into_iter()
        .map(|(h, w)| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (a, x) in w {
                if x > best.0 {
                    best = (x, a);
                }
            }
            (h, best.1)
        })
        .collect();
    complete(p, r, &chosen)
}

/// Children of `r` for the conflict `(h, a, b)`: `h` fixed to `{a}`, to `{b}`,
/// and to the remaining allowed actions (dropped when empty).
pub fn split(r: &ActionRestriction, c: &Conflict, enabled: ActionSet) -> Result<Vec<ActionRestriction>, SynthesisError> {
    let allowed = r.allowed(c.hole, enabled);
    if !allowed.contains(c.a) || !allowed.contains(c.b) || c.a == c.b {
        return Err(SynthesisError::Internal(format!("conflict actions {} and {} not both allowed at {:?}", c.a, c.b, c.hole)));
    }
    let mut rest = allowed;
    rest.remove(c.a);
    rest.remove(c.b);
    let mut out = Vec::with_capacity(3);
    for set in [ActionSet::singleton(c.a), ActionSet::singleton(c.b), rest] {
        if !set.is_empty() {
            let mut child = r.clone();
            child.restrict(c.hole, set);
            out.push(child);
        }
    }
    Ok(out)
}

/// Splits a hole without a conflict: its first two allowed actions become
/// singletons, the rest a third child.
pub fn split_free(r: &ActionRestriction, h: Hole, enabled: ActionSet) -> Vec<ActionRestriction> {
    let allowed = r.allowed(h, enabled);
    let mut it = allowed.iter();
    let a = it.next().expect("free hole has two actions");
    let b = it.next().expect("free hole has two actions");
    let c = Conflict {
        hole: h,
        a,
        b,
        states: (0, 0),
        agents: (0, 0),
        kind: ConflictKind::LocalObservability,
    };
    split(r, &c, enabled).expect("both actions allowed")
}
