//! Abstraction-refinement synthesis of policy tuples.

mod consistency;
mod engine;
mod io;
mod oracle;

pub use consistency::{
    check_consistency, check_consistency_in, decision_states, factorize, factorize_in, lift, reachable_under,
    resolve_by_occupancy, resolve_randomly, resolve_randomly_in, split, split_free, Conflict, ConflictKind, ConsistencyReport,
};
pub use engine::{synthesize, Stats, Status, SynthesisOptions, SynthesisResult, DEFAULT_EPSILON};
pub use io::{parse_tuple, write_tuple};
pub use oracle::{brute_force, tuple_count, OracleResult};

use std::sync::Arc;

use thiserror::Error;

use crate::automata::{ltl_to_dra, reachability_dra, AutomataError, Dra};
use crate::hyperspec::{expand_quantifiers, Body, Cmp, ConstraintKind, Direction, Elaborated, Expansion, HyperFormula, SpecError};
use crate::mdp::{ActionRestriction, ChoiceMask, Hole, Mdp, MdpView, MemorylessPolicy, ModelError, StateId};
use crate::probcheck::{
    optimal_reachability, rabin_values, Acceptance, chain_expected_reward, expected_total_reward, joint_chain, mc_satisfaction_probability, rabin_optimal_policy,
    uniform_behaviour, Behaviour, JointChain,
};
use crate::product::{state_budget, sync_product_with_budget, unfold_memory, ProductError, ProductMdp};

/// Slack applied to bounds from value iteration before pruning or
/// classifying, so that iteration error never prunes a real solution.
pub const BOUND_SLACK: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Automata(#[from] AutomataError),
    #[error(transparent)]
    Product(#[from] ProductError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("policy is inconsistent at hole {0:?}")]
    Inconsistent(Hole),
    #[error("{0}")]
    Unsupported(String),
    #[error("tuple file line {line}: {msg}")]
    TupleFormat { line: usize, msg: String },
    #[error("internal error: {0}")]
    Internal(String),
}

/// One memoryless policy per policy variable, over the (possibly
/// memory-unfolded) agent model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolicyTuple {
    pub policies: Vec<MemorylessPolicy>,
}

/// A constraint's automaton, with the goal state for reward objectives.
#[derive(Debug, Clone)]
pub struct ConstraintAutomaton {
    pub dra: Arc<Dra>,
    pub reward_target: Option<usize>,
}

/// Everything the engine needs: the unfolded agent model, the elaborated
/// specification and one product per (instance, constraint).
#[derive(Debug, Clone)]
pub struct Problem {
    pub base: Arc<Mdp>,
    pub agent: Arc<Mdp>,
    pub memory_bits: u32,
    pub spec: Elaborated,
    pub automata: Vec<ConstraintAutomaton>,
    /// `products[leaf][constraint]`
    pub products: Vec<Vec<ProductMdp>>,
    /// Per product, states whose value is the same under every policy;
    /// choices there and beyond never need to agree.
    pub settled: Vec<Vec<Vec<bool>>>,
}

impl Problem {
    pub fn new(m: &Mdp, h: &HyperFormula, memory_bits: u32, hoa: Option<Dra>) -> Result<Problem, SynthesisError> {
        Self::with_budget(m, h, memory_bits, hoa, state_budget())
    }

    pub fn with_budget(
        m: &Mdp,
        h: &HyperFormula,
        memory_bits: u32,
        hoa: Option<Dra>,
        budget: usize,
    ) -> Result<Problem, SynthesisError> {
        let mut spec = expand_quantifiers(h, m)?;
        let mem = 1usize << memory_bits;
        for inst in spec.instances.iter_mut() {
            for s in inst.iter_mut() {
                *s *= mem;
            }
        }
        let base = Arc::new(m.clone());
        let agent = Arc::new(unfold_memory(m, memory_bits));
        let probability: Vec<usize> = (0..spec.constraints.len())
            .filter(|&j| !matches!(spec.constraints[j].kind, ConstraintKind::Reward { .. }))
            .collect();
        if hoa.is_some() && probability.len() != 1 {
            return Err(SynthesisError::Unsupported(
                "an automaton override needs exactly one probability operator".into(),
            ));
        }
        let mut hoa = hoa;
        let automata = spec
            .constraints
            .iter()
            .map(|c| -> Result<ConstraintAutomaton, SynthesisError> {
                match &c.kind {
                    ConstraintKind::Reward { .. } => {
                        let (d, t) = reachability_dra(&c.formula).ok_or_else(|| {
                            SynthesisError::Unsupported("reward goal must be F of a propositional formula".into())
                        })?;
                        Ok(ConstraintAutomaton { dra: Arc::new(d), reward_target: Some(t) })
                    }
                    _ => {
                        let d = match hoa.take() {
                            Some(d) => d,
                            None => ltl_to_dra(&c.formula)?,
                        };
                        Ok(ConstraintAutomaton { dra: Arc::new(d), reward_target: None })
                    }
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut products = Vec::with_capacity(spec.instances.len());
        for leaf in 0..spec.instances.len() {
            let b = spec.bindings(leaf);
            let row = automata
                .iter()
                .map(|a| sync_product_with_budget(agent.clone(), a.dra.clone(), &b, budget))
                .collect::<Result<Vec<_>, _>>()?;
            products.push(row);
        }
        let settled = products
            .iter()
            .map(|row| row.iter().zip(&automata).map(|(p, a)| settled_states(p, a.reward_target)).collect())
            .collect();
        Ok(Problem { base, agent, memory_bits, spec, automata, products, settled })
    }

    pub fn num_policy_vars(&self) -> usize {
        self.spec.policy_vars.len()
    }

    /// Objective constraint index and whether it is maximized.
    pub fn objective(&self) -> Option<(usize, Direction)> {
        let j = self.spec.objective()?;
        match &self.spec.constraints[j].kind {
            ConstraintKind::Optimize(d) => Some((j, *d)),
            ConstraintKind::Reward { dir, .. } => Some((j, *dir)),
            ConstraintKind::Threshold(..) => None,
        }
    }

    /// Sizes of all products.
    pub fn product_sizes(&self) -> Vec<usize> {
        self.products.iter().flatten().map(|p| p.num_states()).collect()
    }

    fn reward_vector(&self, j: usize, p: &ProductMdp) -> Vec<f64> {
        let ConstraintKind::Reward { reward, .. } = &self.spec.constraints[j].kind else {
            unreachable!("not a reward constraint")
        };
        p.reward_vector(reward, self.spec.reward_agent[j]).expect("reward checked during well-formedness")
    }

    /// Optimal value and policy of constraint `j` on instance `leaf` within
    /// `mask`.
    pub fn solve(&self, leaf: usize, j: usize, mask: Option<&ChoiceMask>, dir: Direction) -> (f64, Vec<usize>) {
        let p = &self.products[leaf][j];
        match self.automata[j].reward_target {
            None => rabin_optimal_policy(p, mask, dir),
            Some(t) => {
                let goal = p.states_where(|q| q == t);
                let r = self.reward_vector(j, p);
                let sol = expected_total_reward(MdpView::new(&p.mdp, mask), &r, &goal, dir);
                (sol.values[p.initial], sol.policy)
            }
        }
    }

    /// Masks of every product under `r`.
    pub fn masks(&self, r: &ActionRestriction) -> Result<Vec<Vec<ChoiceMask>>, SynthesisError> {
        self.products
            .iter()
            .map(|row| row.iter().map(|p| p.apply_restriction(r).map_err(Into::into)).collect())
            .collect()
    }

    /// Evaluates one behaviour per policy variable through joint chains.
    pub fn evaluate_behaviours(&self, behaviours: &[Behaviour]) -> Result<Evaluation, SynthesisError> {
        let budget = state_budget();
        let mut values = Vec::with_capacity(self.spec.instances.len());
        for (leaf, init) in self.spec.instances.iter().enumerate() {
            let per_agent: Vec<&Behaviour> = self.spec.agent_policy.iter().map(|&v| &behaviours[v]).collect();
            let chain = joint_chain(&self.agent, &per_agent, init, budget)?;
            let row = (0..self.spec.constraints.len())
                .map(|j| self.chain_value(leaf, j, &chain, &per_agent))
                .collect::<Result<Vec<_>, _>>()?;
            values.push(row);
        }
        let satisfied = self.verdict(&values);
        let objective = self.objective().map(|(j, _)| values[0][j]);
        Ok(Evaluation { values, satisfied, objective })
    }

    fn chain_value(&self, _leaf: usize, j: usize, chain: &JointChain, per_agent: &[&Behaviour]) -> Result<f64, SynthesisError> {
        let a = &self.automata[j];
        match a.reward_target {
            None => Ok(mc_satisfaction_probability(chain, &self.agent, &a.dra)?),
            Some(t) => {
                let ConstraintKind::Reward { reward, .. } = &self.spec.constraints[j].kind else { unreachable!() };
                let r = &self.agent.reward(reward).expect("reward exists").per_choice;
                let agents: Vec<usize> = match self.spec.reward_agent[j] {
                    Some(i) => vec![i],
                    None => (0..chain.num_agents()).collect(),
                };
                let state_reward: Vec<f64> = (0..chain.num_states())
                    .map(|s| {
                        let tuple = chain.tuple(s);
                        agents
                            .iter()
                            .map(|&i| per_agent[i][tuple[i]].iter().map(|&(c, w)| w * r[c]).sum::<f64>())
                            .sum()
                    })
                    .collect();
                Ok(chain_expected_reward(chain, &self.agent, &a.dra, t, &state_reward)?)
            }
        }
    }

    /// Whether per-instance constraint values satisfy the specification
    /// (objectives count as satisfied).
    pub fn verdict(&self, values: &[Vec<f64>]) -> bool {
        self.combine(&|leaf, j| match &self.spec.constraints[j].kind {
            ConstraintKind::Threshold(cmp, c) => Tri::from(cmp.holds(values[leaf][j], *c)),
            _ => Tri::True,
        }) == Tri::True
    }

    /// Three-valued evaluation of the expansion tree over per-instance
    /// constraint classes.
    pub fn combine(&self, class: &dyn Fn(usize, usize) -> Tri) -> Tri {
        fn body(b: &Body, leaf: usize, class: &dyn Fn(usize, usize) -> Tri) -> Tri {
            match b {
                Body::Leaf(j) => class(leaf, *j),
                Body::And(x, y) => body(x, leaf, class).and(body(y, leaf, class)),
                Body::Or(x, y) => body(x, leaf, class).or(body(y, leaf, class)),
            }
        }
        fn tree(e: &Expansion, b: &Body, class: &dyn Fn(usize, usize) -> Tri) -> Tri {
            match e {
                Expansion::Leaf(l) => body(b, *l, class),
                Expansion::And(cs) => cs.iter().fold(Tri::True, |acc, c| acc.and(tree(c, b, class))),
                Expansion::Or(cs) => cs.iter().fold(Tri::False, |acc, c| acc.or(tree(c, b, class))),
            }
        }
        tree(&self.spec.tree, &self.spec.body, class)
    }

    /// Policies of the uniform random baseline.
    pub fn uniform_behaviours(&self) -> Vec<Behaviour> {
        vec![uniform_behaviour(&self.agent); self.num_policy_vars()]
    }

    pub fn tuple_behaviours(&self, t: &PolicyTuple) -> Result<Vec<Behaviour>, SynthesisError> {
        t.policies
            .iter()
            .map(|p| Ok(p.to_choices(&self.agent)?.into_iter().map(|c| vec![(c, 1.0)]).collect()))
            .collect()
    }

    pub fn evaluate_policy_tuple(&self, t: &PolicyTuple) -> Result<Evaluation, SynthesisError> {
        if t.policies.len() != self.num_policy_vars() {
            return Err(SynthesisError::Unsupported(format!(
                "tuple has {} policies, specification has {} policy variables",
                t.policies.len(),
                self.num_policy_vars()
            )));
        }
        self.evaluate_behaviours(&self.tuple_behaviours(t)?)
    }

    /// Agent-model states relevant to each policy variable (reachable from
    /// the initial states of its agents).
    pub fn relevant_states(&self) -> Vec<Vec<bool>> {
        let mut out = vec![vec![false; self.agent.num_states()]; self.num_policy_vars()];
        for inst in &self.spec.instances {
            for (i, &s) in inst.iter().enumerate() {
                let v = self.spec.agent_policy[i];
                for (t, &r) in self.agent.reachable_from(&[s], None).iter().enumerate() {
                    out[v][t] |= r;
                }
            }
        }
        out
    }
}

/// States of the unrestricted product where every policy wins almost surely
/// or loses almost surely (for reward goals: goal states and states that
/// cannot reach the goal). Restrictions only remove policies, so these stay
/// settled in every node.
fn settled_states(p: &ProductMdp, reward_target: Option<usize>) -> Vec<bool> {
    let view = MdpView::new(&p.mdp, None);
    match reward_target {
        None => {
            let acc = Acceptance::of_product(p);
            let hi = rabin_values(view, &acc, Direction::Max).values;
            let lo = rabin_values(view, &acc, Direction::Min).values;
            hi.iter().zip(&lo).map(|(&h, &l)| h <= 1e-12 || l >= 1.0 - 1e-12).collect()
        }
        Some(t) => {
            let goal = p.states_where(|q| q == t);
            let reach = optimal_reachability(view, &goal, Direction::Max).values;
            goal.iter().zip(&reach).map(|(&g, &r)| g || r <= 0.0).collect()
        }
    }
}

/// Re-expresses a tuple over `from` memory bits for `to >= from` bits. The
/// extra memory values are never entered; they copy memory value 0.
pub fn widen_memory(t: &PolicyTuple, base_states: usize, from: u32, to: u32) -> PolicyTuple {
    assert!(to >= from);
    let (mf, mt) = (1usize << from, 1usize << to);
    let policies = t
        .policies
        .iter()
        .map(|p| {
            let mut q = MemorylessPolicy::partial(Vec::new());
            for s in 0..base_states {
                for n in 0..mt {
                    let old = s * mf + if n < mf { n } else { 0 };
                    if let Some(a) = p.get(old) {
                        q.set(s * mt + n, (a / mf) * mt + a % mf);
                    }
                }
            }
            q
        })
        .collect();
    PolicyTuple { policies }
}

/// Evaluate a tuple on a model and a specification.
pub fn evaluate_policy_tuple(m: &Mdp, h: &HyperFormula, t: &PolicyTuple, memory_bits: u32) -> Result<Evaluation, SynthesisError> {
    Problem::new(m, h, memory_bits, None)?.evaluate_policy_tuple(t)
}

/// Values of every constraint on every instance, and the overall verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub values: Vec<Vec<f64>>,
    pub satisfied: bool,
    pub objective: Option<f64>,
}

/// Kleene truth values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl From<bool> for Tri {
    fn from(b: bool) -> Tri {
        if b {
            Tri::True
        } else {
            Tri::False
        }
    }
}

impl Tri {
    pub fn and(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::False, _) | (_, Tri::False) => Tri::False,
            (Tri::True, Tri::True) => Tri::True,
            _ => Tri::Unknown,
        }
    }

    pub fn or(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::True, _) | (_, Tri::True) => Tri::True,
            (Tri::False, Tri::False) => Tri::False,
            _ => Tri::Unknown,
        }
    }
}

/// Classification of a threshold constraint from its value range; the
/// range is widened by `BOUND_SLACK` so iteration error stays on the safe side.
pub fn classify(cmp: Cmp, c: f64, min: f64, max: f64) -> Tri {
    // values are probabilities, so the widened range never leaves [0, 1]
    let (lo, hi) = ((min - BOUND_SLACK).max(0.0), (max + BOUND_SLACK).min(1.0));
    let (pess, opt) = if cmp.is_lower_bound() { (lo, hi) } else { (hi, lo) };
    if cmp.holds(pess, c) {
        Tri::True
    } else if !cmp.holds(opt, c) {
        Tri::False
    } else {
        Tri::Unknown
    }
}

/// Constraint class of constraint `j` on instance `leaf` within a mask,
/// with the witness policy of the optimistic direction.
pub fn classify_constraint(
    problem: &Problem,
    leaf: usize,
    j: usize,
    mask: Option<&ChoiceMask>,
) -> (Tri, Option<Vec<usize>>) {
    let ConstraintKind::Threshold(cmp, c) = problem.spec.constraints[j].kind else {
        return (Tri::True, None);
    };
    let (opt_dir, pess_dir) = if cmp.is_lower_bound() { (Direction::Max, Direction::Min) } else { (Direction::Min, Direction::Max) };
    let (opt, witness) = problem.solve(leaf, j, mask, opt_dir);
    let opt_slack = if cmp.is_lower_bound() { (opt + BOUND_SLACK).min(1.0) } else { (opt - BOUND_SLACK).max(0.0) };
    if !cmp.holds(opt_slack, c) {
        return (Tri::False, Some(witness));
    }
    let (pess, _) = problem.solve(leaf, j, mask, pess_dir);
    let (min, max) = if cmp.is_lower_bound() { (pess, opt) } else { (opt, pess) };
    (classify(cmp, c, min, max), Some(witness))
}

pub fn holes_of(p: &ProductMdp, s: StateId) -> impl Iterator<Item = Hole> + '_ {
    (0..p.num_agents()).map(move |i| p.hole(s, i))
}

#[cfg(test)]
mod tests;
