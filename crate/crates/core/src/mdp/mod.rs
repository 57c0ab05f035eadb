//! Finite labeled Markov decision processes.
//!
//! Transitions are stored as sorted sparse rows, one per enabled
//! `(state, action)` pair ("choice"). Choices of a state are contiguous and
//! ordered by action id, so a choice index identifies both the state and the
//! action. Markov chains are the special case of exactly one choice per state.

mod format;

pub use format::{parse_model, write_model};

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use thiserror::Error;

pub type StateId = usize;
pub type ActionId = usize;

/// Row-sum tolerance for double-precision distributions.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Upper bound on the number of atomic propositions of a model.
pub const MAX_APS: usize = 64;
/// Upper bound on the size of the global action alphabet.
pub const MAX_ACTIONS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(ValidationReport),
    #[error("policy is undefined in state {0}")]
    PolicyUndefined(StateId),
    #[error("policy picks action {action} which is not enabled in state {state}")]
    PolicyDisabledAction { state: StateId, action: ActionId },
    #[error("too many atomic propositions ({0}, at most {MAX_APS})")]
    TooManyAps(usize),
    #[error("too many actions ({0}, at most {MAX_ACTIONS})")]
    TooManyActions(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown reward structure `{0}`")]
    UnknownReward(String),
}

/// Set of atomic propositions, as a bitmask over the model's AP indices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ApSet(pub u64);

impl ApSet {
    pub fn contains(self, ap: usize) -> bool {
        self.0 >> ap & 1 == 1
    }

    pub fn insert(&mut self, ap: usize) {
        self.0 |= 1 << ap;
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.contains(i))
    }
}

impl FromIterator<usize> for ApSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        let mut s = ApSet::default();
        for i in iter {
            s.insert(i);
        }
        s
    }
}

/// Set of global action ids.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionSet(pub u64);

impl ActionSet {
    pub fn singleton(a: ActionId) -> Self {
        ActionSet(1 << a)
    }

    pub fn contains(self, a: ActionId) -> bool {
        self.0 >> a & 1 == 1
    }

    pub fn insert(&mut self, a: ActionId) {
        self.0 |= 1 << a;
    }

    pub fn remove(&mut self, a: ActionId) {
        self.0 &= !(1 << a);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersect(self, other: ActionSet) -> ActionSet {
        ActionSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: ActionSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ActionId> {
        (0..64).filter(move |&i| self.contains(i))
    }

    pub fn first(self) -> Option<ActionId> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }
}

impl FromIterator<ActionId> for ActionSet {
    fn from_iter<T: IntoIterator<Item = ActionId>>(iter: T) -> Self {
        let mut s = ActionSet::default();
        for a in iter {
            s.insert(a);
        }
        s
    }
}

/// A discrete distribution over states with sorted, distinct support.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Distribution {
    entries: Vec<(StateId, f64)>,
}

impl Distribution {
    /// Builds a distribution, merging repeated successors and sorting the support.
    pub fn new(mut entries: Vec<(StateId, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(StateId, f64)> = Vec::with_capacity(entries.len());
        for (s, p) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == s => last.1 += p,
                _ => merged.push((s, p)),
            }
        }
        Distribution { entries: merged }
    }

    pub fn dirac(s: StateId) -> Self {
        Distribution {
            entries: vec![(s, 1.0)],
        }
    }

    pub fn entries(&self) -> &[(StateId, f64)] {
        &self.entries
    }

    pub fn support(&self) -> impl Iterator<Item = StateId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn prob(&self, s: StateId) -> f64 {
        self.entries
            .binary_search_by_key(&s, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn expect(&self, values: &[f64]) -> f64 {
        self.entries.iter().map(|&(s, p)| p * values[s]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub action: ActionId,
    pub dist: Distribution,
}

/// Non-negative reward per choice (enabled `(state, action)` pair).
#[derive(Debug, Clone, PartialEq)]
pub struct RewardStructure {
    pub name: String,
    pub per_choice: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    actions: Vec<String>,
    aps: Vec<String>,
    labels: Vec<ApSet>,
    offsets: Vec<usize>,
    choices: Vec<Choice>,
    rewards: Vec<RewardStructure>,
}

impl Mdp {
    /// Assembles a model from CSR parts; choices of a state must be sorted by action.
    pub(crate) fn from_parts(
        actions: Vec<String>,
        aps: Vec<String>,
        labels: Vec<ApSet>,
        offsets: Vec<usize>,
        choices: Vec<Choice>,
    ) -> Mdp {
        debug_assert_eq!(labels.len() + 1, offsets.len());
        Mdp { actions, aps, labels, offsets, choices, rewards: Vec::new() }
    }

    pub fn num_states(&self) -> usize {
        self.labels.len()
    }

    pub fn num_choices(&self) -> usize {
        self.choices.len()
    }

    pub fn action_names(&self) -> &[String] {
        &self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn ap_names(&self) -> &[String] {
        &self.aps
    }

    pub fn ap_index(&self, name: &str) -> Option<usize> {
        self.aps.iter().position(|a| a == name)
    }

    pub fn action_index(&self, name: &str) -> Option<ActionId> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn label(&self, s: StateId) -> ApSet {
        self.labels[s]
    }

    pub fn labels(&self) -> &[ApSet] {
        &self.labels
    }

    pub fn choice_range(&self, s: StateId) -> Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn choices(&self, s: StateId) -> &[Choice] {
        &self.choices[self.choice_range(s)]
    }

    pub fn choice(&self, c: usize) -> &Choice {
        &self.choices[c]
    }

    pub fn all_choices(&self) -> &[Choice] {
        &self.choices
    }

    /// Global index of the choice for `action` in state `s`, if enabled.
    pub fn choice_index(&self, s: StateId, action: ActionId) -> Option<usize> {
        let r = self.choice_range(s);
        self.choices[r.clone()]
            .binary_search_by_key(&action, |c| c.action)
            .ok()
            .map(|i| r.start + i)
    }

    pub fn enabled(&self, s: StateId) -> ActionSet {
        self.choices(s).iter().map(|c| c.action).collect()
    }

    pub fn is_mc(&self) -> bool {
        (0..self.num_states()).all(|s| self.choice_range(s).len() == 1)
    }

    pub fn rewards(&self) -> &[RewardStructure] {
        &self.rewards
    }

    pub fn reward(&self, name: &str) -> Option<&RewardStructure> {
        self.rewards.iter().find(|r| r.name == name)
    }

    /// Source state of every choice.
    pub fn choice_sources(&self) -> Vec<StateId> {
        let mut src = vec![0; self.choices.len()];
        for s in 0..self.num_states() {
            for c in self.choice_range(s) {
                src[c] = s;
            }
        }
        src
    }

    /// Predecessor lists: for every state, the choices that can reach it.
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut pred = vec![Vec::new(); self.num_states()];
        for (c, ch) in self.choices.iter().enumerate() {
            for t in ch.dist.support() {
                if pred[t].last() != Some(&c) {
                    pred[t].push(c);
                }
            }
        }
        pred
    }

    /// States reachable from `init`, in BFS order.
    pub fn reachable_from(&self, init: &[StateId], mask: Option<&ChoiceMask>) -> Vec<bool> {
        let mut seen = vec![false; self.num_states()];
        let mut queue: std::collections::VecDeque<StateId> = init.iter().copied().collect();
        for &s in init {
            seen[s] = true;
        }
        while let Some(s) = queue.pop_front() {
            for c in self.choice_range(s) {
                if mask.is_some_and(|m| !m.allows(c)) {
                    continue;
                }
                for t in self.choices[c].dist.support() {
                    if !seen[t] {
                        seen[t] = true;
                        queue.push_back(t);
                    }
                }
            }
        }
        seen
    }

    pub fn with_rewards(mut self, rewards: Vec<RewardStructure>) -> Self {
        self.rewards = rewards;
        self
    }
}

/// Incremental construction of an [`Mdp`].
#[derive(Debug, Clone, Default)]
pub struct MdpBuilder {
    num_states: usize,
    actions: Vec<String>,
    aps: Vec<String>,
    labels: Vec<ApSet>,
    rows: BTreeMap<(StateId, ActionId), Vec<(StateId, f64)>>,
    rewards: BTreeMap<String, BTreeMap<(StateId, ActionId), f64>>,
}

impl MdpBuilder {
    pub fn new(num_states: usize, actions: Vec<String>, aps: Vec<String>) -> Self {
        MdpBuilder {
            num_states,
            actions,
            aps,
            labels: vec![ApSet::default(); num_states],
            rows: BTreeMap::new(),
            rewards: BTreeMap::new(),
        }
    }

    /// Builder with actions named `a0, a1, ...` and APs given by name.
    pub fn with_counts(num_states: usize, num_actions: usize, aps: &[&str]) -> Self {
        Self::new(
            num_states,
            (0..num_actions).map(|a| format!("a{a}")).collect(),
            aps.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn transition(&mut self, s: StateId, a: ActionId, t: StateId, p: f64) -> &mut Self {
        self.rows.entry((s, a)).or_default().push((t, p));
        self
    }

    pub fn label(&mut self, s: StateId, ap: usize) -> &mut Self {
        self.labels[s].insert(ap);
        self
    }

    pub fn reward(&mut self, name: &str, s: StateId, a: ActionId, r: f64) -> &mut Self {
        *self
            .rewards
            .entry(name.to_string())
            .or_default()
            .entry((s, a))
            .or_default() += r;
        self
    }

    /// Assembles the model without checking any invariant.
    pub fn build_unchecked(self) -> Mdp {
        let n = self.num_states;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut choices = Vec::with_capacity(self.rows.len());
        let mut keys = Vec::with_capacity(self.rows.len());
        let mut rows = self.rows.into_iter().peekable();
        offsets.push(0);
        for s in 0..n {
            while let Some(((src, _), _)) = rows.peek() {
                if *src != s {
                    break;
                }
                let ((_, a), entries) = rows.next().unwrap();
                keys.push((s, a));
                choices.push(Choice {
                    action: a,
                    dist: Distribution::new(entries),
                });
            }
            offsets.push(choices.len());
        }
        // rows for out-of-range sources are dropped; validation reports them via
        // missing choices only, so keep them visible as a dead-state violation
        let rewards = self
            .rewards
            .into_iter()
            .map(|(name, map)| RewardStructure {
                name,
                per_choice: keys.iter().map(|k| map.get(k).copied().unwrap_or(0.0)).collect(),
            })
            .collect();
        Mdp {
            actions: self.actions,
            aps: self.aps,
            labels: self.labels,
            offsets,
            choices,
            rewards,
        }
    }

    pub fn build(self) -> Result<Mdp, ModelError> {
        if self.aps.len() > MAX_APS {
            return Err(ModelError::TooManyAps(self.aps.len()));
        }
        if self.actions.len() > MAX_ACTIONS {
            return Err(ModelError::TooManyActions(self.actions.len()));
        }
        let m = self.build_unchecked();
        let report = validate_mdp(&m);
        if report.is_empty() {
            Ok(m)
        } else {
            Err(ModelError::Invalid(report))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DeadState(StateId),
    RowSum { state: StateId, action: ActionId, sum: f64 },
    BadProbability { state: StateId, action: ActionId, target: StateId, prob: f64 },
    TargetOutOfRange { state: StateId, action: ActionId, target: StateId },
    UnknownAction { state: StateId, action: ActionId },
    UndeclaredAp { state: StateId, ap: usize },
    BadReward { name: String, state: StateId, action: ActionId, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DeadState(s) => write!(f, "dead state s{s}"),
            Violation::RowSum { state, action, sum } => {
                write!(f, "row-sum violation at (s{state},a{action}): {sum}")
            }
            Violation::BadProbability { state, action, target, prob } => {
                write!(f, "probability {prob} out of (0,1] at (s{state},a{action},s{target})")
            }
            Violation::TargetOutOfRange { state, action, target } => {
                write!(f, "successor s{target} out of range at (s{state},a{action})")
            }
            Violation::UnknownAction { state, action } => {
                write!(f, "undeclared action a{action} in state s{state}")
            }
            Violation::UndeclaredAp { state, ap } => {
                write!(f, "label of s{state} uses undeclared proposition #{ap}")
            }
            Violation::BadReward { name, state, action, value } => {
                write!(f, "reward `{name}` at (s{state},a{action}) is {value}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport(pub Vec<Violation>);

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Lists every violated model invariant. An empty report means the model is valid.
pub fn validate_mdp(m: &Mdp) -> ValidationReport {
    let mut out = Vec::new();
    let n = m.num_states();
    let ap_mask = if m.aps.len() >= 64 { u64::MAX } else { (1u64 << m.aps.len()) - 1 };
    for s in 0..n {
        if m.choice_range(s).is_empty() {
            out.push(Violation::DeadState(s));
        }
        for ap in ApSet(m.labels[s].0 & !ap_mask).iter() {
            out.push(Violation::UndeclaredAp { state: s, ap });
        }
        for ch in m.choices(s) {
            if ch.action >= m.actions.len() {
                out.push(Violation::UnknownAction { state: s, action: ch.action });
            }
            for &(t, p) in ch.dist.entries() {
                if t >= n {
                    out.push(Violation::TargetOutOfRange { state: s, action: ch.action, target: t });
                }
                if !(p > 0.0 && p <= 1.0 + ROW_SUM_TOLERANCE) {
                    out.push(Violation::BadProbability {
                        state: s,
                        action: ch.action,
                        target: t,
                        prob: p,
                    });
                }
            }
            let sum = ch.dist.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                out.push(Violation::RowSum { state: s, action: ch.action, sum });
            }
        }
    }
    let sources = m.choice_sources();
    for r in &m.rewards {
        for (c, &v) in r.per_choice.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                out.push(Violation::BadReward {
                    name: r.name.clone(),
                    state: sources[c],
                    action: m.choices[c].action,
                    value: v,
                });
            }
        }
    }
    ValidationReport(out)
}

/// Deterministic memoryless policy over states of a model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemorylessPolicy {
    choice: Vec<Option<ActionId>>,
}

impl MemorylessPolicy {
    pub fn total(actions: Vec<ActionId>) -> Self {
        MemorylessPolicy {
            choice: actions.into_iter().map(Some).collect(),
        }
    }

    pub fn partial(choice: Vec<Option<ActionId>>) -> Self {
        MemorylessPolicy { choice }
    }

    /// The policy that picks the lowest enabled action everywhere.
    pub fn lowest(m: &Mdp) -> Self {
        Self::total((0..m.num_states()).map(|s| m.choices(s)[0].action).collect())
    }

    pub fn get(&self, s: StateId) -> Option<ActionId> {
        self.choice.get(s).copied().flatten()
    }

    pub fn set(&mut self, s: StateId, a: ActionId) {
        if s >= self.choice.len() {
            self.choice.resize(s + 1, None);
        }
        self.choice[s] = Some(a);
    }

    pub fn len(&self) -> usize {
        self.choice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice.is_empty()
    }

    pub fn as_slice(&self) -> &[Option<ActionId>] {
        &self.choice
    }

    /// Resolves the policy to global choice indices of `m`.
    pub fn to_choices(&self, m: &Mdp) -> Result<Vec<usize>, ModelError> {
        (0..m.num_states())
            .map(|s| {
                let a = self.get(s).ok_or(ModelError::PolicyUndefined(s))?;
                m.choice_index(s, a)
                    .ok_or(ModelError::PolicyDisabledAction { state: s, action: a })
            })
            .collect()
    }

    pub fn from_choices(m: &Mdp, choices: &[usize]) -> Self {
        Self::total(choices.iter().map(|&c| m.choice(c).action).collect())
    }
}

/// The Markov chain induced by a memoryless policy.
pub fn induce_mc(m: &Mdp, p: &MemorylessPolicy) -> Result<Mdp, ModelError> {
    let picked = p.to_choices(m)?;
    let mut offsets = Vec::with_capacity(m.num_states() + 1);
    offsets.push(0);
    let mut choices = Vec::with_capacity(m.num_states());
    for (s, &c) in picked.iter().enumerate() {
        choices.push(m.choices[c].clone());
        offsets.push(s + 1);
    }
    let rewards = m
        .rewards
        .iter()
        .map(|r| RewardStructure {
            name: r.name.clone(),
            per_choice: picked.iter().map(|&c| r.per_choice[c]).collect(),
        })
        .collect();
    Ok(Mdp {
        actions: m.actions.clone(),
        aps: m.aps.clone(),
        labels: m.labels.clone(),
        offsets,
        choices,
        rewards,
    })
}

/// Overlay that disables some choices of a model without mutating it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceMask(Vec<bool>);

impl ChoiceMask {
    pub fn full(m: &Mdp) -> Self {
        ChoiceMask(vec![true; m.num_choices()])
    }

    pub fn from_vec(v: Vec<bool>) -> Self {
        ChoiceMask(v)
    }

    pub fn allows(&self, c: usize) -> bool {
        self.0[c]
    }

    pub fn set(&mut self, c: usize, allowed: bool) {
        self.0[c] = allowed;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// Allowed choices of `s`, as global indices.
    pub fn allowed_in<'a>(&'a self, m: &'a Mdp, s: StateId) -> impl Iterator<Item = usize> + 'a {
        m.choice_range(s).filter(move |&c| self.0[c])
    }

    pub fn intersect(&self, other: &ChoiceMask) -> ChoiceMask {
        ChoiceMask(self.0.iter().zip(&other.0).map(|(a, b)| *a && *b).collect())
    }
}

/// A model together with an optional choice mask.
#[derive(Debug, Clone, Copy)]
pub struct MdpView<'a> {
    pub mdp: &'a Mdp,
    pub mask: Option<&'a ChoiceMask>,
}

impl<'a> MdpView<'a> {
    pub fn new(mdp: &'a Mdp, mask: Option<&'a ChoiceMask>) -> Self {
        MdpView { mdp, mask }
    }

    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    pub fn allows(&self, c: usize) -> bool {
        self.mask.is_none_or(|m| m.allows(c))
    }

    /// Allowed choices of `s`, as global indices.
    pub fn choices(&self, s: StateId) -> impl Iterator<Item = usize> + 'a {
        let mask = self.mask;
        self.mdp
            .choice_range(s)
            .filter(move |&c| mask.is_none_or(|m| m.allows(c)))
    }

    pub fn dist(&self, c: usize) -> &'a Distribution {
        &self.mdp.choice(c).dist
    }
}

impl<'a> From<&'a Mdp> for MdpView<'a> {
    fn from(m: &'a Mdp) -> Self {
        MdpView { mdp: m, mask: None }
    }
}

/// A `(policy variable, local state)` decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hole {
    pub policy_var: usize,
    pub local_state: StateId,
}

/// Per-hole allowed action sets. Holes absent from the map allow every
/// enabled action.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ActionRestriction {
    allowed: BTreeMap<Hole, ActionSet>,
}

impl ActionRestriction {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allowed actions of `hole`, given the enabled set of its local state.
    pub fn allowed(&self, hole: Hole, enabled: ActionSet) -> ActionSet {
        self.allowed
            .get(&hole)
            .map(|a| a.intersect(enabled))
            .unwrap_or(enabled)
    }

    pub fn is_restricted(&self, hole: Hole) -> bool {
        self.allowed.contains_key(&hole)
    }

    pub fn restrict(&mut self, hole: Hole, actions: ActionSet) {
        self.allowed.insert(hole, actions);
    }

    pub fn holes(&self) -> impl Iterator<Item = (&Hole, &ActionSet)> {
        self.allowed.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    /// Pointwise intersection of two restrictions.
    pub fn intersect(&self, other: &ActionRestriction) -> ActionRestriction {
        let mut out = self.clone();
        for (h, a) in &other.allowed {
            out.allowed
                .entry(*h)
                .and_modify(|x| *x = x.intersect(*a))
                .or_insert(*a);
        }
        out
    }
}

impl fmt::Display for ActionRestriction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.allowed.is_empty() {
            return write!(f, "*");
        }
        let parts: Vec<String> = self
            .allowed
            .iter()
            .map(|(h, a)| {
                let acts: Vec<String> = a.iter().map(|x| x.to_string()).collect();
                format!("{}:{}={{{}}}", h.policy_var, h.local_state, acts.join(","))
            })
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}
