//! Markov chain analysis: joint chains of agent policies, MC × DRA
//! acceptance and linear solves. Independent of the product/VI route.

use std::collections::{HashMap, VecDeque};

use crate::automata::Dra;
use crate::graph::tarjan_scc;
use crate::mdp::{Distribution, Mdp, MemorylessPolicy, ModelError, StateId};
use crate::product::{bind_aps, ProductError};

/// Largest strongly connected block solved by dense elimination.
pub const DENSE_LIMIT: usize = 300;
const GS_TOLERANCE: f64 = 1e-15;
const GS_MAX_SWEEPS: usize = 200_000;

/// Per local state: agent-model choice indices with their weights.
pub type Behaviour = Vec<Vec<(usize, f64)>>;

pub fn policy_behaviour(m: &Mdp, p: &MemorylessPolicy) -> Result<Behaviour, ModelError> {
    Ok(p.to_choices(m)?.into_iter().map(|c| vec![(c, 1.0)]).collect())
}

/// Every enabled action with equal probability.
pub fn uniform_behaviour(m: &Mdp) -> Behaviour {
    (0..m.num_states())
        .map(|s| {
            let r = m.choice_range(s);
            let w = 1.0 / r.len() as f64;
            r.map(|c| (c, w)).collect()
        })
        .collect()
}

/// The reachable part of `M^m` under fixed per-agent behaviours.
#[derive(Debug, Clone)]
pub struct JointChain {
    agents: usize,
    tuples: Vec<StateId>,
    pub succ: Vec<Vec<(usize, f64)>>,
}

impl JointChain {
    pub fn num_states(&self) -> usize {
        self.succ.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agents
    }

    pub fn tuple(&self, s: usize) -> &[StateId] {
        &self.tuples[s * self.agents..(s + 1) * self.agents]
    }
}

pub fn joint_chain(
    agent: &Mdp,
    behaviours: &[&Behaviour],
    initial: &[StateId],
    budget: usize,
) -> Result<JointChain, ProductError> {
    let m = initial.len();
    assert_eq!(behaviours.len(), m);
    let mut local: Vec<HashMap<StateId, Distribution>> = vec![HashMap::new(); m];
    let mut ids: HashMap<Vec<StateId>, usize> = HashMap::new();
    let mut tuples = initial.to_vec();
    ids.insert(initial.to_vec(), 0);
    let mut succ = Vec::new();
    let mut s = 0;
    while s * m < tuples.len() {
        let cur: Vec<StateId> = tuples[s * m..(s + 1) * m].to_vec();
        let rows: Vec<Vec<(StateId, f64)>> = (0..m)
            .map(|i| {
                local[i]
                    .entry(cur[i])
                    .or_insert_with(|| {
                        let mut e = Vec::new();
                        for &(c, w) in &behaviours[i][cur[i]] {
                            e.extend(agent.choice(c).dist.entries().iter().map(|&(t, p)| (t, p * w)));
                        }
                        Distribution::new(e)
                    })
                    .entries()
                    .to_vec()
            })
            .collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; m];
        'outer: loop {
            let mut p = 1.0;
            let mut key = Vec::with_capacity(m);
            for i in 0..m {
                let (t, q) = rows[i][idx[i]];
                key.push(t);
                p *= q;
            }
            let id = match ids.get(&key) {
                Some(&id) => id,
                None => {
                    let id = ids.len();
                    if id >= budget {
                        return Err(ProductError::Budget { budget, explored: id });
                    }
                    tuples.extend(&key);
                    ids.insert(key, id);
                    id
                }
            };
            out.push((id, p));
            let mut i = m;
            loop {
                if i == 0 {
                    break 'outer;
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < rows[i].len() {
                    break;
                }
                idx[i] = 0;
            }
        }
        succ.push(out);
        s += 1;
    }
    Ok(JointChain { agents: m, tuples, succ })
}

/// A joint chain synchronized with a DRA.
#[derive(Debug, Clone)]
pub struct ChainDra {
    pub succ: Vec<Vec<(usize, f64)>>,
    /// Chain state of each product state.
    pub base: Vec<usize>,
    /// Automaton state after reading the base state's labels.
    pub q: Vec<usize>,
}

pub fn chain_dra(chain: &JointChain, agent: &Mdp, d: &Dra) -> Result<ChainDra, ProductError> {
    let binding = bind_aps(agent, d, chain.num_agents())?;
    let val = |s: usize| -> u64 {
        let t = chain.tuple(s);
        binding
            .iter()
            .enumerate()
            .filter(|(_, &(a, ap))| agent.label(t[a]).contains(ap))
            .fold(0, |v, (i, _)| v | 1 << i)
    };
    let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut base = vec![0];
    let mut q = vec![d.step(d.initial(), val(0))];
    ids.insert((0, q[0]), 0);
    let mut succ = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(x) = queue.pop_front() {
        let mut out = Vec::new();
        for &(t, p) in &chain.succ[base[x]] {
            let q2 = d.step(q[x], val(t));
            let id = *ids.entry((t, q2)).or_insert_with(|| {
                base.push(t);
                q.push(q2);
                queue.push_back(base.len() - 1);
                base.len() - 1
            });
            out.push((id, p));
        }
        succ.push(out);
    }
    Ok(ChainDra { succ, base, q })
}

/// Bottom SCCs of a chain.
pub fn bottom_sccs(succ: &[Vec<(usize, f64)>]) -> Vec<Vec<usize>> {
    let n = succ.len();
    let sccs = tarjan_scc(n, &vec![true; n], |s, out| out.extend(succ[s].iter().map(|e| e.0)));
    let mut comp = vec![0; n];
    for (i, c) in sccs.iter().enumerate() {
        for &s in c {
            comp[s] = i;
        }
    }
    sccs.into_iter()
        .enumerate()
        .filter(|(i, c)| c.iter().all(|&s| succ[s].iter().all(|&(t, _)| comp[t] == *i)))
        .map(|(_, c)| c)
        .collect()
}

/// Probability that the joint chain's trace is accepted by `d`.
pub fn mc_satisfaction_probability(chain: &JointChain, agent: &Mdp, d: &Dra) -> Result<f64, ProductError> {
    let p = chain_dra(chain, agent, d)?;
    let mut fixed = vec![None; p.succ.len()];
    for b in bottom_sccs(&p.succ) {
        let qs: Vec<usize> = b.iter().map(|&s| p.q[s]).collect();
        let acc = d.pairs().iter().any(|pair| pair.accepts(&qs));
        for &s in &b {
            fixed[s] = Some(if acc { 1.0 } else { 0.0 });
        }
    }
    let v = solve_chain(&p.succ, &vec![0.0; p.succ.len()], &fixed);
    Ok(v[0].clamp(0.0, 1.0))
}

/// Expected reward accumulated in the chain × reachability-DRA product before
/// entering automaton state `target`; `state_reward` is indexed by chain state.
pub fn chain_expected_reward(
    chain: &JointChain,
    agent: &Mdp,
    d: &Dra,
    target: usize,
    state_reward: &[f64],
) -> Result<f64, ProductError> {
    let p = chain_dra(chain, agent, d)?;
    let n = p.succ.len();
    let goal: Vec<bool> = p.q.iter().map(|&q| q == target).collect();
    let fixed = infinite_or_goal(&p.succ, &goal);
    let b: Vec<f64> = (0..n).map(|s| state_reward[p.base[s]]).collect();
    Ok(solve_chain(&p.succ, &b, &fixed)[0])
}

/// Goal states fixed to 0; states that miss the goal with positive
/// probability fixed to ∞.
pub(crate) fn infinite_or_goal(succ: &[Vec<(usize, f64)>], goal: &[bool]) -> Vec<Option<f64>> {
    let n = succ.len();
    let active: Vec<bool> = goal.iter().map(|g| !g).collect();
    let sccs = tarjan_scc(n, &active, |s, out| out.extend(succ[s].iter().map(|e| e.0)));
    let mut inf = vec![false; n];
    // sinks first: a component is infinite if it is closed or leads to an infinite one
    let mut comp = vec![usize::MAX; n];
    for (i, c) in sccs.iter().enumerate() {
        for &s in c {
            comp[s] = i;
        }
    }
    for (i, c) in sccs.iter().enumerate() {
        let mut closed = true;
        let mut bad = false;
        for &s in c {
            for &(t, _) in &succ[s] {
                if comp[t] != i {
                    closed = false;
                }
                if inf[t] {
                    bad = true;
                }
            }
        }
        if closed || bad {
            for &s in c {
                inf[s] = true;
            }
        }
    }
    (0..n)
        .map(|s| {
            if goal[s] {
                Some(0.0)
            } else if inf[s] {
                Some(f64::INFINITY)
            } else {
                None
            }
        })
        .collect()
}

/// Solves `v = b + P v` for the states not in `fixed`. Every free state must
/// reach a fixed state with probability 1.
pub fn solve_chain(succ: &[Vec<(usize, f64)>], b: &[f64], fixed: &[Option<f64>]) -> Vec<f64> {
    let n = succ.len();
    let mut v: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    let active: Vec<bool> = fixed.iter().map(|f| f.is_none()).collect();
    let sccs = tarjan_scc(n, &active, |s, out| out.extend(succ[s].iter().map(|e| e.0)));
    let mut pos = vec![usize::MAX; n];
    for comp in sccs {
        for (i, &s) in comp.iter().enumerate() {
            pos[s] = i;
        }
        let k = comp.len();
        let inside = |t: usize, pos: &[usize]| active[t] && pos[t] < k && comp[pos[t]] == t;
        if k == 1 && !succ[comp[0]].iter().any(|&(t, _)| t == comp[0]) {
            let s = comp[0];
            v[s] = b[s] + succ[s].iter().map(|&(t, p)| p * v[t]).sum::<f64>();
        } else if k <= DENSE_LIMIT {
            let mut a = vec![vec![0.0; k + 1]; k];
            for (i, &s) in comp.iter().enumerate() {
                a[i][i] = 1.0;
                a[i][k] = b[s];
                for &(t, p) in &succ[s] {
                    if inside(t, &pos) {
                        a[i][pos[t]] -= p;
                    } else {
                        a[i][k] += p * v[t];
                    }
                }
            }
            let x = gauss(a);
            for (i, &s) in comp.iter().enumerate() {
                v[s] = x[i];
            }
        } else {
            for _ in 0..GS_MAX_SWEEPS {
                let mut delta: f64 = 0.0;
                for &s in &comp {
                    let nv = b[s] + succ[s].iter().map(|&(t, p)| p * v[t]).sum::<f64>();
                    delta = delta.max((nv - v[s]).abs() / (1.0 + nv.abs()));
                    v[s] = nv;
                }
                if delta < GS_TOLERANCE {
                    break;
                }
            }
        }
        for &s in &comp {
            pos[s] = usize::MAX;
        }
    }
    v
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let k = a.len();
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        if d == 0.0 {
            continue;
        }
        for row in col + 1..k {
            let f = a[row][col] / d;
            if f != 0.0 {
                for c in col..=k {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let mut s = a[row][k];
        for c in row + 1..k {
            s -= a[row][c] * x[c];
        }
        x[row] = if a[row][row] == 0.0 { 0.0 } else { s / a[row][row] };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::ltl_to_dra;
    use crate::ltl::parse_ltl;
    use crate::mdp::MdpBuilder;

    fn coin() -> Mdp {
        // 0 -> 1 (accept) | 2 (reject), both absorbing
        let mut b = MdpBuilder::with_counts(3, 1, &["acc"]);
        b.transition(0, 0, 1, 0.5).transition(0, 0, 2, 0.5);
        b.transition(1, 0, 1, 1.0).transition(2, 0, 2, 1.0).label(1, 0);
        b.build().unwrap()
    }

    #[test]
    fn fair_coin_half() {
        let m = coin();
        let beh = uniform_behaviour(&m);
        let c = joint_chain(&m, &[&beh], &[0], 100).unwrap();
        let d = ltl_to_dra(&parse_ltl("F acc@1").unwrap()).unwrap();
        assert!((mc_satisfaction_probability(&c, &m, &d).unwrap() - 0.5).abs() < 1e-12);
        let c = joint_chain(&m, &[&beh], &[1], 100).unwrap();
        assert_eq!(mc_satisfaction_probability(&c, &m, &d).unwrap(), 1.0);
    }

    #[test]
    fn two_coins_quarter() {
        let m = coin();
        let beh = uniform_behaviour(&m);
        let c = joint_chain(&m, &[&beh, &beh], &[0, 0], 100).unwrap();
        assert_eq!(c.num_states(), 5);
        let d = ltl_to_dra(&parse_ltl("F (acc@1 & acc@2)").unwrap()).unwrap();
        assert!((mc_satisfaction_probability(&c, &m, &d).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn gauss_solves_cycle() {
        // geometric retry: v = 0.5 + 0.5 v
        let succ = vec![vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]];
        let v = solve_chain(&succ, &[1.0, 0.0], &[None, Some(0.0)]);
        assert!((v[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_seidel_for_large_blocks() {
        // a long cycle 0 -> 1 -> ... -> n-1 -> 0 leaking 1% to an absorbing target each step
        let n = DENSE_LIMIT + 50;
        let mut succ: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![((i + 1) % n, 0.99), (n, 0.01)]).collect();
        succ.push(vec![(n, 1.0)]);
        let mut fixed = vec![None; n];
        fixed.push(Some(1.0));
        let v = solve_chain(&succ, &vec![0.0; n + 1], &fixed);
        assert!(v[..n].iter().all(|x| (x - 1.0).abs() < 1e-9));
    }

    #[test]
    fn reward_infinite_when_goal_missed() {
        let succ = vec![vec![(1, 0.5), (2, 0.5)], vec![(1, 1.0)], vec![(2, 1.0)]];
        let f = infinite_or_goal(&succ, &[false, true, false]);
        assert_eq!(f, vec![Some(f64::INFINITY), Some(0.0), Some(f64::INFINITY)]);
    }
}
