//! Self-composition, DRA-synchronized products and memory unfolding.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::automata::Dra;
use crate::hyperspec::Bindings;
use crate::mdp::{
    ActionId, ActionRestriction, ApSet, Choice, ChoiceMask, Distribution, Hole, Mdp, MdpBuilder,
    RewardStructure, StateId,
};

/// Environment variable overriding the product state budget.
pub const STATE_BUDGET_ENV: &str = "HYPERSYNTH_STATE_BUDGET";
pub const DEFAULT_STATE_BUDGET: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProductError {
    #[error("product exceeds the state budget of {budget} states ({explored} explored so far)")]
    Budget { budget: usize, explored: usize },
    #[error("automaton proposition `{0}` is not a proposition of the model")]
    UnknownAp(String),
    #[error("automaton reads agent {needed} but only {agents} agents are bound")]
    Arity { needed: usize, agents: usize },
    #[error("restriction leaves no action in product state {0}")]
    EmptyRestriction(StateId),
    #[error("initial state {0} out of range")]
    BadInitial(StateId),
}

/// State budget from the environment, or the default.
pub fn state_budget() -> usize {
    std::env::var(STATE_BUDGET_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_STATE_BUDGET)
}

/// Mixed-radix joint action id; agent 0 is the most significant digit, so
/// numeric order is lexicographic order of the action tuple.
pub fn encode_joint(actions: &[ActionId], radix: usize) -> ActionId {
    actions.iter().fold(0, |acc, &a| acc * radix + a)
}

pub fn decode_joint(mut joint: ActionId, radix: usize, agents: usize) -> Vec<ActionId> {
    let mut out = vec![0; agents];
    for i in (0..agents).rev() {
        out[i] = joint % radix;
        joint /= radix;
    }
    out
}

fn joint_action_names(agent: &Mdp, count: usize) -> Vec<String> {
    let radix = agent.num_actions();
    (0..radix.pow(count as u32))
        .map(|j| {
            decode_joint(j, radix, count)
                .iter()
                .map(|&a| agent.action_names()[a].as_str())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect()
}

/// Enumerates the joint choices of a state tuple: for every tuple of
/// enabled actions (lexicographic), the per-agent choice indices.
fn joint_choices(agent: &Mdp, states: &[StateId], mut f: impl FnMut(&[usize])) {
    let m = states.len();
    let ranges: Vec<std::ops::Range<usize>> = states.iter().map(|&s| agent.choice_range(s)).collect();
    let mut cur: Vec<usize> = ranges.iter().map(|r| r.start).collect();
    loop {
        f(&cur);
        let mut i = m;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < ranges[i].end {
                break;
            }
            cur[i] = ranges[i].start;
        }
    }
}

/// Product of the component distributions of the given agent choices.
fn tensor(agent: &Mdp, choices: &[usize], mut f: impl FnMut(&[StateId], f64)) {
    let rows: Vec<&[(StateId, f64)]> = choices.iter().map(|&c| agent.choice(c).dist.entries()).collect();
    let m = rows.len();
    let mut idx = vec![0usize; m];
    let mut succ = vec![0; m];
    loop {
        let mut p = 1.0;
        for i in 0..m {
            let (t, q) = rows[i][idx[i]];
            succ[i] = t;
            p *= q;
        }
        f(&succ, p);
        let mut i = m;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < rows[i].len() {
                break;
            }
            idx[i] = 0;
        }
    }
}

/// Full `count`-fold self-composition over `S^count` (agent 0 most
/// significant in state and action ids). Propositions are renamed `ap@i`.
pub fn self_compose(m: &Mdp, count: usize) -> Result<Mdp, ProductError> {
    assert!(count >= 1);
    let n = m.num_states();
    let total = n
        .checked_pow(count as u32)
        .filter(|&t| t <= state_budget())
        .ok_or(ProductError::Budget { budget: state_budget(), explored: 0 })?;
    let radix = m.num_actions();
    let aps: Vec<String> = (0..count)
        .flat_map(|i| m.ap_names().iter().map(move |a| format!("{a}@{}", i + 1)))
        .collect();
    let mut b = MdpBuilder::new(total, joint_action_names(m, count), aps);
    let k = m.ap_names().len();
    let mut comps = vec![0; count];
    for s in 0..total {
        let mut x = s;
        for i in (0..count).rev() {
            comps[i] = x % n;
            x /= n;
        }
        for (i, &c) in comps.iter().enumerate() {
            for ap in m.label(c).iter() {
                b.label(s, i * k + ap);
            }
        }
        joint_choices(m, &comps, |choices| {
            let acts: Vec<ActionId> = choices.iter().map(|&c| m.choice(c).action).collect();
            let a = encode_joint(&acts, radix);
            tensor(m, choices, |succ, p| {
                let t = succ.iter().fold(0, |acc, &x| acc * n + x);
                b.transition(s, a, t, p);
            });
        });
    }
    Ok(b.build_unchecked())
}

/// Memory-unfolded agent model: state `(s, n)` has id `s·M + n` and action
/// `(a, n')` id `a·M + n'`, where `M = 2^bits`; taking `(a, n')` moves to
/// memory `n'`. Labels and rewards are copied from `s`.
pub fn unfold_memory(m: &Mdp, bits: u32) -> Mdp {
    let mem = 1usize << bits;
    let actions: Vec<String> = m
        .action_names()
        .iter()
        .flat_map(|a| (0..mem).map(move |n| if mem == 1 { a.clone() } else { format!("{a}/{n}") }))
        .collect();
    let mut b = MdpBuilder::new(m.num_states() * mem, actions, m.ap_names().to_vec());
    for s in 0..m.num_states() {
        for n in 0..mem {
            let u = s * mem + n;
            for ap in m.label(s).iter() {
                b.label(u, ap);
            }
            for (ci, ch) in m.choices(s).iter().enumerate() {
                let c = m.choice_range(s).start + ci;
                for n2 in 0..mem {
                    let a = ch.action * mem + n2;
                    for &(t, p) in ch.dist.entries() {
                        b.transition(u, a, t * mem + n2, p);
                    }
                    for r in m.rewards() {
                        if r.per_choice[c] != 0.0 {
                            b.reward(&r.name, u, a, r.per_choice[c]);
                        }
                    }
                }
            }
        }
    }
    let mut out = b.build_unchecked();
    // keep reward structures that are identically zero
    let missing: Vec<RewardStructure> = m
        .rewards()
        .iter()
        .filter(|r| out.reward(&r.name).is_none())
        .map(|r| RewardStructure { name: r.name.clone(), per_choice: vec![0.0; out.num_choices()] })
        .collect();
    if !missing.is_empty() {
        let mut all = out.rewards().to_vec();
        all.extend(missing);
        out = out.with_rewards(all);
    }
    out
}

/// The synchronized product of the self-composition with a DRA.
#[derive(Debug, Clone)]
pub struct ProductMdp {
    pub mdp: Mdp,
    pub agent: Arc<Mdp>,
    pub dra: Arc<Dra>,
    pub bindings: Bindings,
    /// Flattened `(s_1, ..., s_m, q)` tuples.
    tuples: Vec<u32>,
    /// Per product choice: the agent-model choice index of each agent.
    agent_choices: Vec<u32>,
    pub initial: StateId,
}

impl ProductMdp {
    pub fn num_agents(&self) -> usize {
        self.bindings.num_agents()
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    fn stride(&self) -> usize {
        self.num_agents() + 1
    }

    pub fn local_states(&self, s: StateId) -> Vec<StateId> {
        let k = self.stride();
        self.tuples[s * k..s * k + k - 1].iter().map(|&x| x as usize).collect()
    }

    pub fn local_state(&self, s: StateId, agent: usize) -> StateId {
        self.tuples[s * self.stride() + agent] as usize
    }

    pub fn dra_state(&self, s: StateId) -> usize {
        let k = self.stride();
        self.tuples[s * k + k - 1] as usize
    }

    /// Agent-model choice index of `agent` within product choice `c`.
    pub fn agent_choice(&self, c: usize, agent: usize) -> usize {
        self.agent_choices[c * self.num_agents() + agent] as usize
    }

    pub fn agent_action(&self, c: usize, agent: usize) -> ActionId {
        self.agent.choice(self.agent_choice(c, agent)).action
    }

    /// Hole of `agent` in product state `s`.
    pub fn hole(&self, s: StateId, agent: usize) -> Hole {
        Hole { policy_var: self.bindings.agent_policy[agent], local_state: self.local_state(s, agent) }
    }

    /// Product choice of `s` whose agent actions are `actions`, if enabled.
    pub fn joint_choice(&self, s: StateId, actions: &[ActionId]) -> Option<usize> {
        let radix = self.agent.num_actions();
        self.mdp.choice_index(s, encode_joint(actions, radix))
    }

    /// Mask enabling exactly the joint actions whose components obey `r`.
    pub fn apply_restriction(&self, r: &ActionRestriction) -> Result<ChoiceMask, ProductError> {
        let m = self.num_agents();
        let mut mask = vec![true; self.mdp.num_choices()];
        if r.is_empty() {
            return Ok(ChoiceMask::from_vec(mask));
        }
        for s in 0..self.num_states() {
            let allowed: Vec<_> = (0..m)
                .map(|i| {
                    let h = self.hole(s, i);
                    r.allowed(h, self.agent.enabled(h.local_state))
                })
                .collect();
            let mut any = false;
            for c in self.mdp.choice_range(s) {
                let ok = (0..m).all(|i| allowed[i].contains(self.agent_action(c, i)));
                mask[c] = ok;
                any |= ok;
            }
            if !any {
                return Err(ProductError::EmptyRestriction(s));
            }
        }
        Ok(ChoiceMask::from_vec(mask))
    }

    /// Product reward per choice: the agent reward summed over all agents,
    /// or only over `only_agent`.
    pub fn reward_vector(&self, name: &str, only_agent: Option<usize>) -> Option<Vec<f64>> {
        let r = self.agent.reward(name)?;
        let agents: Vec<usize> = match only_agent {
            Some(a) => vec![a],
            None => (0..self.num_agents()).collect(),
        };
        Some(
            (0..self.mdp.num_choices())
                .map(|c| agents.iter().map(|&i| r.per_choice[self.agent_choice(c, i)]).sum())
                .collect(),
        )
    }

    /// States whose DRA component satisfies `pred`.
    pub fn states_where(&self, pred: impl Fn(usize) -> bool) -> Vec<bool> {
        (0..self.num_states()).map(|s| pred(self.dra_state(s))).collect()
    }
}

/// Maps each DRA proposition to a model proposition index.
pub fn bind_aps(agent: &Mdp, dra: &Dra, agents: usize) -> Result<Vec<(usize, usize)>, ProductError> {
    dra.aps()
        .iter()
        .map(|ap| {
            if ap.agent >= agents {
                return Err(ProductError::Arity { needed: ap.agent + 1, agents });
            }
            let i = agent.ap_index(&ap.name).ok_or_else(|| ProductError::UnknownAp(ap.name.clone()))?;
            Ok((ap.agent, i))
        })
        .collect()
}

fn valuation(agent: &Mdp, binding: &[(usize, usize)], states: &[StateId]) -> u64 {
    let mut v = 0u64;
    for (i, &(a, ap)) in binding.iter().enumerate() {
        if agent.label(states[a]).contains(ap) {
            v |= 1 << i;
        }
    }
    v
}

/// Reachable fragment of `D(M, φ)` from `(s⃗₀, δ(q₀, L(s⃗₀)))`.
///
/// The automaton component of a state has already read that state's label
/// tuple, so a transition to `s⃗′` moves to `δ(q, L(s⃗′))`.
pub fn sync_product(agent: Arc<Mdp>, dra: Arc<Dra>, b: &Bindings) -> Result<ProductMdp, ProductError> {
    sync_product_with_budget(agent, dra, b, state_budget())
}

pub fn sync_product_with_budget(
    agent: Arc<Mdp>,
    dra: Arc<Dra>,
    b: &Bindings,
    budget: usize,
) -> Result<ProductMdp, ProductError> {
    let m = b.num_agents();
    for &s in &b.initial {
        if s >= agent.num_states() {
            return Err(ProductError::BadInitial(s));
        }
    }
    let binding = bind_aps(&agent, &dra, m)?;
    let radix = agent.num_actions();
    let mut step_cache: HashMap<(usize, u64), usize> = HashMap::new();
    let mut step = |q: usize, states: &[StateId]| -> usize {
        let v = valuation(&agent, &binding, states);
        *step_cache.entry((q, v)).or_insert_with(|| dra.step(q, v))
    };

    let mut ids: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut tuples: Vec<u32> = Vec::new();
    let q0 = step(dra.initial(), &b.initial);
    let mut key: Vec<u32> = b.initial.iter().map(|&s| s as u32).collect();
    key.push(q0 as u32);
    ids.insert(key.clone(), 0);
    tuples.extend(&key);

    let mut offsets = vec![0usize];
    let mut choices: Vec<Choice> = Vec::new();
    let mut agent_choices: Vec<u32> = Vec::new();
    let mut labels: Vec<ApSet> = Vec::new();
    let mut s = 0;
    let stride = m + 1;
    while s * stride < tuples.len() {
        let comps: Vec<StateId> = tuples[s * stride..s * stride + m].iter().map(|&x| x as usize).collect();
        let q = tuples[s * stride + m] as usize;
        labels.push(ApSet(valuation(&agent, &binding, &comps)));
        let mut err = None;
        joint_choices(&agent, &comps, |cs| {
            if err.is_some() {
                return;
            }
            let acts: Vec<ActionId> = cs.iter().map(|&c| agent.choice(c).action).collect();
            let mut entries = Vec::new();
            tensor(&agent, cs, |succ, p| {
                let mut k: Vec<u32> = succ.iter().map(|&x| x as u32).collect();
                k.push(step(q, succ) as u32);
                let id = match ids.get(&k) {
                    Some(&id) => id,
                    None => {
                        let id = ids.len();
                        if id >= budget {
                            err = Some(ProductError::Budget { budget, explored: id });
                        }
                        tuples.extend(&k);
                        ids.insert(k, id);
                        id
                    }
                };
                entries.push((id, p));
            });
            choices.push(Choice { action: encode_joint(&acts, radix), dist: Distribution::new(entries) });
            agent_choices.extend(cs.iter().map(|&c| c as u32));
        });
        if let Some(e) = err {
            return Err(e);
        }
        offsets.push(choices.len());
        s += 1;
    }
    let ap_names: Vec<String> = dra.aps().iter().map(|a| a.to_string()).collect();
    let mdp = Mdp::from_parts(joint_action_names(&agent, m), ap_names, labels, offsets, choices);
    Ok(ProductMdp { mdp, agent, dra, bindings: b.clone(), tuples, agent_choices, initial: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::ltl_to_dra;
    use crate::ltl::parse_ltl;
    use crate::mdp::validate_mdp;

    fn coin() -> Mdp {
        let mut b = MdpBuilder::with_counts(2, 1, &["a"]);
        b.transition(0, 0, 0, 0.5).transition(0, 0, 1, 0.5).transition(1, 0, 1, 1.0).label(1, 0);
        b.build().unwrap()
    }

    fn bindings(init: Vec<StateId>, policy: Vec<usize>) -> Bindings {
        let mut pa = vec![Vec::new(); policy.iter().max().unwrap() + 1];
        for (a, &p) in policy.iter().enumerate() {
            pa[p].push(a);
        }
        Bindings { agent_policy: policy, initial: init, policy_agents: pa }
    }

    #[test]
    fn compose_once_is_identity() {
        let m = coin();
        let c = self_compose(&m, 1).unwrap();
        assert_eq!(c.num_states(), 2);
        assert_eq!(c.choices(0)[0].dist, m.choices(0)[0].dist);
    }

    #[test]
    fn compose_twice_multiplies() {
        let c = self_compose(&coin(), 2).unwrap();
        assert_eq!(c.num_states(), 4);
        assert_eq!(c.choices(0)[0].dist.prob(3), 0.25);
        assert!(c.label(3).contains(0) && c.label(3).contains(1));
        assert!(validate_mdp(&c).is_empty());
    }

    #[test]
    fn trivial_product() {
        let mut b = MdpBuilder::with_counts(1, 1, &["a"]);
        b.transition(0, 0, 0, 1.0);
        let m = Arc::new(b.build().unwrap());
        let d = Arc::new(crate::automata::parse_hoa(
            "HOA: v1\nStates: 1\nStart: 0\nAP: 0\nacc-name: Rabin 1\nAcceptance: 2 (Fin(0)&Inf(1))\n--BODY--\nState: 0 {1}\n[t] 0\n--END--\n",
        ).unwrap());
        let p = sync_product(m, d, &bindings(vec![0, 0], vec![0, 1])).unwrap();
        assert_eq!(p.num_states(), 1);
    }

    #[test]
    fn initial_automaton_state_is_advanced() {
        // start in an `a` state: F a is already satisfied in the initial product state
        let m = Arc::new(coin());
        let d = Arc::new(ltl_to_dra(&parse_ltl("F a@1").unwrap()).unwrap());
        let p = sync_product(m, d.clone(), &bindings(vec![1], vec![0])).unwrap();
        assert_eq!(p.dra_state(0), d.step(d.initial(), 1));
        assert_eq!(p.num_states(), 1);
    }

    #[test]
    fn unfold_counts() {
        let mut b = MdpBuilder::with_counts(2, 2, &[]);
        b.transition(0, 0, 1, 1.0).transition(0, 1, 0, 1.0).transition(1, 0, 0, 1.0).transition(1, 1, 1, 1.0);
        let m = b.build().unwrap();
        let u = unfold_memory(&m, 1);
        assert_eq!(u.num_states(), 4);
        assert!((0..4).all(|s| u.choices(s).len() == 4));
        assert!(validate_mdp(&u).is_empty());
        assert_eq!(unfold_memory(&m, 0), m);
    }

    #[test]
    fn joint_codes_round_trip() {
        for j in 0..64 {
            assert_eq!(encode_joint(&decode_joint(j, 4, 3), 4), j);
        }
        assert!(encode_joint(&[0, 3], 4) < encode_joint(&[1, 0], 4));
    }

    #[test]
    fn unknown_ap_rejected() {
        let m = Arc::new(coin());
        let d = Arc::new(ltl_to_dra(&parse_ltl("F zz@1").unwrap()).unwrap());
        assert_eq!(
            sync_product(m, d, &bindings(vec![0], vec![0])).unwrap_err(),
            ProductError::UnknownAp("zz".into())
        );
    }
}
