//! Exhaustive enumeration of memoryless policy tuples, for small instances.

use rayon::prelude::*;

use crate::hyperspec::Direction;
use crate::mdp::{ActionId, MemorylessPolicy};

use super::{Evaluation, PolicyTuple, Problem, SynthesisError};

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Number of tuples evaluated.
    pub tuples: u64,
    pub best: Option<(PolicyTuple, Evaluation)>,
}

impl OracleResult {
    pub fn best_value(&self) -> Option<f64> {
        self.best.as_ref().and_then(|(_, e)| e.objective)
    }
}

/// Decision points that matter: (policy var, state, enabled actions) for
/// every state reachable from an initial state of an agent bound to the var.
fn decision_points(problem: &Problem) -> Vec<(usize, usize, Vec<ActionId>)> {
    let relevant = problem.relevant_states();
    let mut out = Vec::new();
    for (v, row) in relevant.iter().enumerate() {
        for (s, &r) in row.iter().enumerate() {
            let acts: Vec<ActionId> = problem.agent.enabled(s).iter().collect();
            if r && acts.len() > 1 {
                out.push((v, s, acts));
            }
        }
    }
    out
}

/// Number of distinct tuples the oracle would enumerate (saturating).
pub fn tuple_count(problem: &Problem) -> u64 {
    decision_points(problem).iter().fold(1u64, |acc, (_, _, a)| acc.saturating_mul(a.len() as u64))
}

/// Evaluates every tuple (irrelevant states take their lowest action) and
/// keeps the best one: the optimum for objectives, the first satisfying
/// tuple in enumeration order otherwise.
pub fn brute_force(problem: &Problem, limit: u64) -> Result<OracleResult, SynthesisError> {
    let points = decision_points(problem);
    let total = tuple_count(problem);
    if total > limit {
        return Err(SynthesisError::Unsupported(format!("{total} tuples exceed the enumeration limit {limit}")));
    }
    let base: Vec<Vec<ActionId>> = (0..problem.num_policy_vars())
        .map(|_| (0..problem.agent.num_states()).map(|s| problem.agent.enabled(s).first().unwrap()).collect())
        .collect();
    let tuple_at = |mut k: u64| {
        let mut acts = base.clone();
        for (v, s, choices) in points.iter().rev() {
            let n = choices.len() as u64;
            acts[*v][*s] = choices[(k % n) as usize];
            k /= n;
        }
        PolicyTuple { policies: acts.into_iter().map(MemorylessPolicy::total).collect() }
    };
    let evaluated: Vec<(u64, PolicyTuple, Evaluation)> = (0..total)
        .into_par_iter()
        .map(|k| {
            let t = tuple_at(k);
            problem.evaluate_policy_tuple(&t).map(|e| (k, t, e))
        })
        .collect::<Result<_, _>>()?;
    let objective = problem.objective();
    let mut best: Option<(PolicyTuple, Evaluation)> = None;
    for (_, t, e) in evaluated.into_iter().filter(|(_, _, e)| e.satisfied) {
        let replace = match (&best, objective) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some((_, b)), Some((_, dir))) => {
                let (x, y) = (e.objective.unwrap(), b.objective.unwrap());
                match dir {
                    Direction::Max => x > y,
                    Direction::Min => x < y,
                }
            }
        };
        if replace {
            best = Some((t, e));
        }
    }
    Ok(OracleResult { tuples: total, best })
}
