//! Depth-first abstraction-refinement loop with an anytime incumbent.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::automata::Dra;
use crate::hyperspec::{ConstraintKind, Direction, HyperFormula};
use crate::mdp::{ActionRestriction, ChoiceMask, Hole, Mdp};

use super::consistency::complete;
use super::{
    check_consistency_in, classify_constraint, factorize_in, resolve_by_occupancy, resolve_randomly_in, split, split_free, Evaluation, PolicyTuple,
    Problem, SynthesisError, Tri,
};

/// Default pruning margin.
pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub memory_bits: u32,
    pub time_budget: Option<Duration>,
    pub max_nodes: Option<usize>,
    pub seed: u64,
    pub workers: usize,
    /// A node is explored only if its bound beats the incumbent by more
    /// than this, so the result is within `epsilon` of the optimum.
    pub epsilon: f64,
    /// Improve every new incumbent by coordinate ascent before pruning
    /// against it.
    pub polish: bool,
    /// Tuple over the unfolded model to start from as the incumbent.
    pub initial: Option<PolicyTuple>,
    /// Replaces the built-in translation of the single probability operator.
    pub hoa: Option<Dra>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions { memory_bits: 0, time_budget: None, max_nodes: None, seed: 0, workers: 1, epsilon: DEFAULT_EPSILON, polish: true, initial: None, hoa: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    OptimumFound,
    ThresholdSatisfied,
    Infeasible,
    BudgetExhausted,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::OptimumFound => "optimum-found",
            Status::ThresholdSatisfied => "threshold-satisfied",
            Status::Infeasible => "infeasible",
            Status::BudgetExhausted => "budget-exhausted",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Stats {
    pub nodes: usize,
    pub splits: usize,
    pub pruned: usize,
    pub time_to_best: Option<Duration>,
    pub elapsed: Duration,
    pub agent_states: usize,
    pub product_states: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub status: Status,
    pub best_value: Option<f64>,
    pub best: Option<PolicyTuple>,
    pub evaluation: Option<Evaluation>,
    /// Objective bound of the unrestricted abstraction.
    pub upper_bound: Option<f64>,
    pub stats: Stats,
    /// One line per explored node.
    pub trace: Vec<String>,
    /// `(seconds, incumbent value)` at every improvement.
    pub anytime: Vec<(f64, f64)>,
}

pub fn synthesize(m: &Mdp, h: &HyperFormula, opts: &SynthesisOptions) -> Result<SynthesisResult, SynthesisError> {
    let problem = Problem::new(m, h, opts.memory_bits, opts.hoa.clone())?;
    problem.run(opts)
}

struct Node {
    r: ActionRestriction,
    path: Vec<usize>,
}

struct Outcome {
    line: String,
    candidates: Vec<(PolicyTuple, Evaluation)>,
    children: Vec<ActionRestriction>,
    bound: Option<f64>,
    pruned: bool,
}

fn node_seed(seed: u64, path: &[usize]) -> u64 {
    // FNV-1a over the path, mixed with the run seed
    let mut h: u64 = 0xcbf29ce484222325 ^ seed;
    for &x in path {
        for b in (x as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

fn better(a: f64, b: f64, dir: Direction) -> bool {
    match dir {
        Direction::Max => a > b,
        Direction::Min => a < b,
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl Problem {
    pub fn run(&self, opts: &SynthesisOptions) -> Result<SynthesisResult, SynthesisError> {
        if self.agent.num_actions() > crate::mdp::MAX_ACTIONS {
            return Err(SynthesisError::Unsupported(format!(
                "memory unfolding yields {} actions (at most {})",
                self.agent.num_actions(),
                crate::mdp::MAX_ACTIONS
            )));
        }
        let start = Instant::now();
        let objective = self.objective();
        let mut stats = Stats {
            agent_states: self.agent.num_states(),
            product_states: self.product_sizes(),
            ..Default::default()
        };
        let mut trace = Vec::new();
        let mut anytime = Vec::new();
        let mut best: Option<(PolicyTuple, Evaluation)> = None;
        let mut upper_bound = None;
        let mut found = false;
        let mut exhausted = false;
        let deadline = opts.time_budget.map(|b| start + b);
        if let Some(t) = &opts.initial {
            if t.policies.len() != self.num_policy_vars() {
                return Err(SynthesisError::Unsupported("initial tuple has the wrong number of policies".into()));
            }
            let ev = self.evaluate_policy_tuple(t)?;
            if ev.satisfied {
                let (t, ev) = match objective {
                    Some((_, dir)) if opts.polish => self.polish(t.clone(), ev, dir, deadline)?,
                    _ => (t.clone(), ev),
                };
                if let Some(v) = ev.objective {
                    anytime.push((start.elapsed().as_secs_f64(), v));
                    trace.push(format!("initial incumbent {}", fmt_value(v)));
                }
                stats.time_to_best = Some(start.elapsed());
                found = objective.is_none();
                best = Some((t, ev));
            }
        }
        let mut stack = if found { Vec::new() } else { vec![Node { r: ActionRestriction::new(), path: Vec::new() }] };
        let pool = (opts.workers > 1)
            .then(|| rayon::ThreadPoolBuilder::new().num_threads(opts.workers).build())
            .transpose()
            .map_err(|e| SynthesisError::Internal(e.to_string()))?;

        while !stack.is_empty() {
            if opts.time_budget.is_some_and(|b| start.elapsed() >= b) || opts.max_nodes.is_some_and(|n| stats.nodes >= n) {
                exhausted = true;
                break;
            }
            let take = opts.workers.max(1).min(stack.len());
            let batch: Vec<Node> = (0..take).map(|_| stack.pop().unwrap()).collect();
            let incumbent = best.as_ref().and_then(|(_, e)| e.objective);
            let outcomes: Vec<Result<Outcome, SynthesisError>> = match &pool {
                Some(pool) => pool.install(|| {
                    batch.par_iter().map(|n| self.analyze(n, incumbent, opts.epsilon, node_seed(opts.seed, &n.path))).collect()
                }),
                None => batch.iter().map(|n| self.analyze(n, incumbent, opts.epsilon, node_seed(opts.seed, &n.path))).collect(),
            };
            let mut pending: Vec<Vec<Node>> = Vec::new();
            for (node, outcome) in batch.iter().zip(outcomes) {
                let outcome = outcome?;
                stats.nodes += 1;
                if node.path.is_empty() {
                    upper_bound = outcome.bound;
                }
                if outcome.pruned {
                    stats.pruned += 1;
                }
                let path = if node.path.is_empty() {
                    "root".to_string()
                } else {
                    node.path.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(".")
                };
                trace.push(format!("{path} fixed={} {}", node.r.holes().count(), outcome.line));
                for (t, ev) in outcome.candidates {
                    if !ev.satisfied {
                        continue;
                    }
                    let improves = match (objective, &best) {
                        (None, _) => true,
                        (Some(_), None) => true,
                        (Some((_, dir)), Some((_, b))) => better(ev.objective.unwrap(), b.objective.unwrap(), dir),
                    };
                    if improves {
                        let (t, ev) = match objective {
                            Some((_, dir)) if opts.polish => self.polish(t, ev, dir, deadline)?,
                            _ => (t, ev),
                        };
                        stats.time_to_best = Some(start.elapsed());
                        if let Some(v) = ev.objective {
                            anytime.push((start.elapsed().as_secs_f64(), v));
                            trace.push(format!("{path} incumbent {}", fmt_value(v)));
                        }
                        best = Some((t, ev));
                        if objective.is_none() {
                            found = true;
                        }
                    }
                }
                if found {
                    break;
                }
                if !outcome.children.is_empty() {
                    stats.splits += 1;
                }
                pending.push(
                    outcome
                        .children
                        .into_iter()
                        .enumerate()
                        .map(|(i, r)| {
                            let mut p = node.path.clone();
                            p.push(i);
                            Node { r, path: p }
                        })
                        .collect(),
                );
            }
            if found {
                break;
            }
            // first node of the batch ends up on top, its first child first
            for children in pending.into_iter().rev() {
                stack.extend(children.into_iter().rev());
            }
        }
        stats.elapsed = start.elapsed();
        let status = match (objective, found, exhausted, &best) {
            (None, true, _, _) => Status::ThresholdSatisfied,
            (_, _, true, _) => Status::BudgetExhausted,
            (Some(_), _, false, Some(_)) => Status::OptimumFound,
            _ => Status::Infeasible,
        };
        let best_value = best.as_ref().and_then(|(_, e)| e.objective);
        let (best, evaluation) = match best {
            Some((t, e)) => (Some(t), Some(e)),
            None => (None, None),
        };
        Ok(SynthesisResult { status, best_value, best, evaluation, upper_bound, stats, trace, anytime })
    }

    fn analyze(&self, node: &Node, incumbent: Option<f64>, epsilon: f64, seed: u64) -> Result<Outcome, SynthesisError> {
        let masks = self.masks(&node.r)?;
        let objective = self.objective();
        let mut out = Outcome { line: String::new(), candidates: Vec::new(), children: Vec::new(), bound: None, pruned: false };

        let mut classes: BTreeMap<(usize, usize), (Tri, Option<Vec<usize>>)> = BTreeMap::new();
        let mut used = Vec::new();
        self.spec.body.leaves(&mut used);
        used.sort_unstable();
        used.dedup();
        for leaf in 0..self.spec.instances.len() {
            for &j in &used {
                if matches!(self.spec.constraints[j].kind, ConstraintKind::Threshold(..)) {
                    classes.insert((leaf, j), classify_constraint(self, leaf, j, Some(&masks[leaf][j])));
                }
            }
        }
        let overall = self.combine(&|l, j| classes.get(&(l, j)).map_or(Tri::True, |c| c.0));
        let class = match overall {
            Tri::True => "sat",
            Tri::False => "unsat",
            Tri::Unknown => "ambiguous",
        };
        if overall == Tri::False {
            out.line = format!("class={class} prune-unsat");
            out.pruned = true;
            return Ok(out);
        }

        let mut witnesses: Vec<(usize, usize, Vec<usize>, bool)> = Vec::new();
        if let Some((j, dir)) = objective {
            let (v, pol) = self.solve(0, j, Some(&masks[0][j]), dir);
            out.bound = Some(v);
            if let Some(inc) = incumbent {
                let hopeless = match dir {
                    Direction::Max => v <= inc + epsilon,
                    Direction::Min => v >= inc - epsilon,
                };
                if hopeless {
                    out.line = format!("bound={} class={class} prune-bound", fmt_value(v));
                    out.pruned = true;
                    return Ok(out);
                }
            }
            witnesses.push((0, j, pol, true));
        } else if overall == Tri::True {
            let p = &self.products[0][used[0]];
            let t = complete(p, &node.r, &BTreeMap::new());
            let ev = self.evaluate_policy_tuple(&t)?;
            let ok = ev.satisfied;
            out.candidates.push((t, ev));
            if ok {
                out.line = format!("class={class} accept-any");
                return Ok(out);
            }
        }
        for ((leaf, j), (c, w)) in &classes {
            if *c == Tri::Unknown {
                witnesses.push((*leaf, *j, w.clone().expect("classified constraints carry a witness"), false));
            }
        }

        let bound = out.bound.map(|v| format!("bound={} ", fmt_value(v))).unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (leaf, j, pol, is_objective) in witnesses {
            let p = &self.products[leaf][j];
            let settled = &self.settled[leaf][j];
            let report = check_consistency_in(p, &pol, settled);
            if report.is_consistent() {
                let t = factorize_in(p, &pol, &node.r, settled)?;
                let ev = self.evaluate_policy_tuple(&t)?;
                let ok = ev.satisfied;
                let v = ev.objective;
                out.candidates.push((t, ev));
                if ok && (is_objective || objective.is_none()) {
                    let v = v.map(|v| format!(" value={}", fmt_value(v))).unwrap_or_default();
                    out.line = format!("{bound}class={class} accept-consistent{v}");
                    return Ok(out);
                }
            } else {
                let t = resolve_randomly_in(p, &pol, &node.r, settled, &mut rng);
                let ev = self.evaluate_policy_tuple(&t)?;
                out.candidates.push((t, ev));
                let t = resolve_by_occupancy(p, &pol, &node.r, settled);
                if out.candidates.iter().all(|(u, _)| *u != t) {
                    let ev = self.evaluate_policy_tuple(&t)?;
                    out.candidates.push((t, ev));
                }
                let c = &report.conflicts[0];
                out.children = split(&node.r, c, self.agent.enabled(c.hole.local_state))?;
                out.line = format!(
                    "{bound}class={class} conflicts={} split {}:{} {}|{}",
                    report.conflicts.len(),
                    c.hole.policy_var,
                    c.hole.local_state,
                    c.a,
                    c.b
                );
                return Ok(out);
            }
        }

        // every witness is consistent but none settles the node
        match self.free_hole(&node.r, &masks) {
            Some(h) => {
                out.children = split_free(&node.r, h, self.agent.enabled(h.local_state));
                out.line = format!("{bound}class={class} split-free {}:{}", h.policy_var, h.local_state);
            }
            None => {
                let p = &self.products[0][0];
                let t = complete(p, &node.r, &BTreeMap::new());
                let ev = self.evaluate_policy_tuple(&t)?;
                out.candidates.push((t, ev));
                out.line = format!("{bound}class={class} leaf");
            }
        }
        Ok(out)
    }

    /// First-improvement coordinate ascent over single (policy variable,
    /// state) changes at reachable decision points.
    fn polish(
        &self,
        mut t: PolicyTuple,
        mut ev: Evaluation,
        dir: Direction,
        deadline: Option<Instant>,
    ) -> Result<(PolicyTuple, Evaluation), SynthesisError> {
        let relevant = self.relevant_states();
        let points: Vec<(usize, usize)> = relevant
            .iter()
            .enumerate()
            .flat_map(|(v, row)| row.iter().enumerate().filter(|(_, &r)| r).map(move |(s, _)| (v, s)))
            .filter(|&(_, s)| self.agent.enabled(s).len() > 1)
            .collect();
        loop {
            let mut improved = false;
            for &(v, s) in &points {
                for a in self.agent.enabled(s).iter() {
                    if Some(a) == t.policies[v].get(s) || deadline.is_some_and(|d| Instant::now() >= d) {
                        continue;
                    }
                    let mut u = t.clone();
                    u.policies[v].set(s, a);
                    let e = self.evaluate_policy_tuple(&u)?;
                    if e.satisfied && better(e.objective.unwrap(), ev.objective.unwrap(), dir) && (e.objective.unwrap() - ev.objective.unwrap()).abs() > 1e-12 {
                        t = u;
                        ev = e;
                        improved = true;
                    }
                }
            }
            if !improved || deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok((t, ev));
            }
        }
    }

    /// Smallest hole with two or more allowed actions that occurs in an
    /// unsettled product state reachable within the masks.
    fn free_hole(&self, r: &ActionRestriction, masks: &[Vec<ChoiceMask>]) -> Option<Hole> {
        let mut best: Option<Hole> = None;
        for ((row, mrow), srow) in self.products.iter().zip(masks).zip(&self.settled) {
            for ((p, mask), settled) in row.iter().zip(mrow).zip(srow) {
                let mut seen = vec![false; p.num_states()];
                let mut stack = vec![p.initial];
                seen[p.initial] = true;
                while let Some(s) = stack.pop() {
                    if settled[s] {
                        continue;
                    }
                    for i in 0..p.num_agents() {
                        let h = p.hole(s, i);
                        if r.allowed(h, self.agent.enabled(h.local_state)).len() > 1 && best.is_none_or(|b| h < b) {
                            best = Some(h);
                        }
                    }
                    for c in mask.allowed_in(&p.mdp, s) {
                        for t in p.mdp.choice(c).dist.support() {
                            if !seen[t] {
                                seen[t] = true;
                                stack.push(t);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}
