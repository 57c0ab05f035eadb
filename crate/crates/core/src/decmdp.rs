//! Dec-MDP export of the synchronized product, in the `.dpomdp` text format.
//!
//! One agent per replica plus one agent for the automaton, which has a
//! single `tick` action and observes the automaton state. Reward 1 is paid on
//! the transition that enters the success set; success states are absorbing.
//! Actions disabled in an agent state behave like its lowest enabled action.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::hyperspec::{is_dec_fragment, ConstraintKind, HyperFormula};
use crate::mdp::MdpView;
use crate::probcheck::{accepting_success_set, Acceptance};
use crate::product::ProductMdp;
use crate::synthesis::{Problem, SynthesisError};

/// Row-sum tolerance checked on parsed files.
pub const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DecError {
    #[error("specification is outside the Dec-MDP fragment: {0}")]
    NotDecFragment(String),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn perr(line: usize, msg: impl Into<String>) -> DecError {
    DecError::Parse { line, msg: msg.into() }
}

/// Checks the fragment and renders the product of `problem`.
pub fn export_dpomdp(h: &HyperFormula, problem: &Problem) -> Result<String, DecError> {
    if !is_dec_fragment(h) {
        return Err(DecError::NotDecFragment(
            "needs a bijective policy binding, one probability operator and singleton initial sets".into(),
        ));
    }
    if matches!(problem.spec.constraints[0].kind, ConstraintKind::Reward { .. }) {
        return Err(DecError::NotDecFragment("reward operators have no reachability encoding".into()));
    }
    Ok(write_dpomdp(&problem.products[0][0]))
}

/// Success set of the product (states of accepting end components).
pub fn success_set(p: &ProductMdp) -> Vec<bool> {
    accepting_success_set(MdpView::new(&p.mdp, None), &Acceptance::of_product(p)).members
}

fn state_name(p: &ProductMdp, s: usize) -> String {
    let mut name = format!("s{s}");
    for l in p.local_states(s) {
        write!(name, "_{l}").unwrap();
    }
    write!(name, "_q{}", p.dra_state(s)).unwrap();
    name
}

/// Renders a product as a Dec-MDP file.
pub fn write_dpomdp(p: &ProductMdp) -> String {
    let m = p.num_agents();
    let goal = success_set(p);
    let agent = &p.agent;
    let names: Vec<String> = (0..p.num_states()).map(|s| state_name(p, s)).collect();
    let acts = agent.action_names();
    let mut out = String::new();
    writeln!(out, "# {} replicas and one automaton agent", m).unwrap();
    writeln!(out, "agents: {}", m + 1).unwrap();
    writeln!(out, "discount: 1.0").unwrap();
    writeln!(out, "values: reward").unwrap();
    writeln!(out, "states: {}", names.join(" ")).unwrap();
    writeln!(out, "start:").unwrap();
    let start: Vec<&str> = (0..p.num_states()).map(|s| if s == p.initial { "1" } else { "0" }).collect();
    writeln!(out, "{}", start.join(" ")).unwrap();
    writeln!(out, "actions:").unwrap();
    for _ in 0..m {
        writeln!(out, "{}", acts.join(" ")).unwrap();
    }
    writeln!(out, "tick").unwrap();
    writeln!(out, "observations:").unwrap();
    let local_obs: Vec<String> = (0..agent.num_states()).map(|l| format!("l{l}")).collect();
    for _ in 0..m {
        writeln!(out, "{}", local_obs.join(" ")).unwrap();
    }
    let q_obs: Vec<String> = (0..p.dra.num_states()).map(|q| format!("q{q}")).collect();
    writeln!(out, "{}", q_obs.join(" ")).unwrap();

    let radix = acts.len();
    let joint_count = radix.pow(m as u32);
    for s in 0..p.num_states() {
        let locals = p.local_states(s);
        for j in 0..joint_count {
            let named = crate::product::decode_joint(j, radix, m);
            let label: Vec<&str> = named.iter().map(|&a| acts[a].as_str()).chain(["tick"]).collect();
            let label = label.join(" ");
            if goal[s] {
                writeln!(out, "T: {label} : {} : {} : 1", names[s], names[s]).unwrap();
                continue;
            }
            let effective: Vec<usize> = named
                .iter()
                .zip(&locals)
                .map(|(&a, &l)| {
                    let en = agent.enabled(l);
                    if en.contains(a) {
                        a
                    } else {
                        en.first().unwrap()
                    }
                })
                .collect();
            let c = p.joint_choice(s, &effective).expect("effective actions are enabled");
            for &(t, prob) in p.mdp.choice(c).dist.entries() {
                writeln!(out, "T: {label} : {} : {} : {prob:e}", names[s], names[t]).unwrap();
            }
        }
    }
    for t in 0..p.num_states() {
        let mut obs: Vec<String> = p.local_states(t).iter().map(|l| format!("l{l}")).collect();
        obs.push(format!("q{}", p.dra_state(t)));
        writeln!(out, "O: * : {} : {} : 1", names[t], obs.join(" ")).unwrap();
    }
    for s in (0..p.num_states()).filter(|&s| !goal[s]) {
        for t in p.mdp.choice_range(s).flat_map(|c| p.mdp.choice(c).dist.support()) {
            if goal[t] {
                writeln!(out, "R: * : {} : {} : * : 1", names[s], names[t]).unwrap();
            }
        }
    }
    // duplicate reward lines are idempotent; drop them for readability
    dedup_lines(out)
}

fn dedup_lines(text: String) -> String {
    let mut seen = std::collections::HashSet::new();
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        if !line.starts_with("R:") || seen.insert(line) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// A parsed `.dpomdp` file (the subset written above).
#[derive(Debug, Clone, PartialEq)]
pub struct DecModel {
    pub agents: usize,
    pub discount: f64,
    pub states: Vec<String>,
    pub start: Vec<f64>,
    pub actions: Vec<Vec<String>>,
    pub observations: Vec<Vec<String>>,
    /// `(joint action, state) -> [(successor, probability)]`
    pub transitions: BTreeMap<(Vec<usize>, usize), Vec<(usize, f64)>>,
    /// `(state, successor) -> reward`, for any joint action.
    pub rewards: BTreeMap<(usize, usize), f64>,
    /// `state -> observation per agent`, for any joint action.
    pub observed: BTreeMap<usize, Vec<usize>>,
}

pub fn parse_dpomdp(text: &str) -> Result<DecModel, DecError> {
    let mut model = DecModel {
        agents: 0,
        discount: 1.0,
        states: Vec::new(),
        start: Vec::new(),
        actions: Vec::new(),
        observations: Vec::new(),
        transitions: BTreeMap::new(),
        rewards: BTreeMap::new(),
        observed: BTreeMap::new(),
    };
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap().trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let mut state_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut i = 0;
    while i < lines.len() {
        let (ln, line) = lines[i];
        i += 1;
        let (key, rest) = line.split_once(':').ok_or_else(|| perr(ln, "expected `key: value`"))?;
        let rest = rest.trim();
        match key.trim() {
            "agents" => model.agents = rest.parse().map_err(|_| perr(ln, "bad agent count"))?,
            "discount" => model.discount = rest.parse().map_err(|_| perr(ln, "bad discount"))?,
            "values" => {
                if rest != "reward" {
                    return Err(perr(ln, "only `values: reward` is supported"));
                }
            }
            "states" => {
                model.states = rest.split_whitespace().map(String::from).collect();
                state_index = model.states.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
            }
            "start" => {
                let (ln2, row) = *lines.get(i).ok_or_else(|| perr(ln, "missing start distribution"))?;
                i += 1;
                model.start = row
                    .split_whitespace()
                    .map(|x| x.parse::<f64>().map_err(|_| perr(ln2, "bad start probability")))
                    .collect::<Result<_, _>>()?;
            }
            "actions" | "observations" => {
                let mut rows = Vec::with_capacity(model.agents);
                for _ in 0..model.agents {
                    let (_, row) = *lines.get(i).ok_or_else(|| perr(ln, format!("missing {key} row")))?;
                    i += 1;
                    rows.push(row.split_whitespace().map(String::from).collect());
                }
                if key == "actions" {
                    model.actions = rows;
                } else {
                    model.observations = rows;
                }
            }
            "T" => {
                let f: Vec<&str> = rest.split(':').map(str::trim).collect();
                if f.len() != 4 {
                    return Err(perr(ln, "transition needs `actions : s : s' : p`"));
                }
                let joint = f[0]
                    .split_whitespace()
                    .enumerate()
                    .map(|(k, a)| {
                        model.actions.get(k).and_then(|row| row.iter().position(|x| x == a)).ok_or_else(|| perr(ln, format!("unknown action `{a}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if joint.len() != model.agents {
                    return Err(perr(ln, "joint action arity"));
                }
                let s = *state_index.get(f[1]).ok_or_else(|| perr(ln, format!("unknown state `{}`", f[1])))?;
                let t = *state_index.get(f[2]).ok_or_else(|| perr(ln, format!("unknown state `{}`", f[2])))?;
                let prob: f64 = f[3].parse().map_err(|_| perr(ln, "bad probability"))?;
                model.transitions.entry((joint, s)).or_default().push((t, prob));
            }
            "O" => {
                let f: Vec<&str> = rest.split(':').map(str::trim).collect();
                if f.len() != 4 || f[0] != "*" {
                    return Err(perr(ln, "observation needs `* : s' : obs : p`"));
                }
                let t = *state_index.get(f[1]).ok_or_else(|| perr(ln, format!("unknown state `{}`", f[1])))?;
                let obs = f[2]
                    .split_whitespace()
                    .enumerate()
                    .map(|(k, o)| {
                        model.observations.get(k).and_then(|row| row.iter().position(|x| x == o)).ok_or_else(|| perr(ln, format!("unknown observation `{o}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                model.observed.insert(t, obs);
            }
            "R" => {
                let f: Vec<&str> = rest.split(':').map(str::trim).collect();
                if f.len() != 5 || f[0] != "*" || f[3] != "*" {
                    return Err(perr(ln, "reward needs `* : s : s' : * : r`"));
                }
                let s = *state_index.get(f[1]).ok_or_else(|| perr(ln, format!("unknown state `{}`", f[1])))?;
                let t = *state_index.get(f[2]).ok_or_else(|| perr(ln, format!("unknown state `{}`", f[2])))?;
                let r: f64 = f[4].parse().map_err(|_| perr(ln, "bad reward"))?;
                model.rewards.insert((s, t), r);
            }
            other => return Err(perr(ln, format!("unknown section `{other}`"))),
        }
    }
    if model.start.len() != model.states.len() {
        return Err(perr(0, "start distribution length differs from the state count"));
    }
    Ok(model)
}

impl DecModel {
    /// Largest deviation of a transition row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.transitions
            .values()
            .map(|row| (row.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Whether every (joint action, state) pair has a transition row.
    pub fn is_complete(&self) -> bool {
        let joint: usize = self.actions.iter().map(Vec::len).product();
        self.transitions.len() == joint * self.states.len()
    }

    /// Optimal expected total reward from the start distribution when one
    /// controller sees the whole state (Gauss-Seidel value iteration from 0).
    pub fn centralized_optimum(&self) -> f64 {
        let n = self.states.len();
        let mut rows: Vec<Vec<Vec<(usize, f64, f64)>>> = vec![Vec::new(); n];
        for ((_, s), row) in &self.transitions {
            rows[*s].push(row.iter().map(|&(t, p)| (t, p, self.rewards.get(&(*s, t)).copied().unwrap_or(0.0))).collect());
        }
        let mut v = vec![0.0; n];
        for _ in 0..1_000_000 {
            let mut delta: f64 = 0.0;
            for s in 0..n {
                let best = rows[s]
                    .iter()
                    .map(|row| row.iter().map(|&(t, p, r)| p * (r + v[t])).sum::<f64>())
                    .fold(0.0, f64::max);
                delta = delta.max((best - v[s]).abs());
                v[s] = best;
            }
            if delta < 1e-13 {
                break;
            }
        }
        self.start.iter().zip(&v).map(|(p, x)| p * x).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperspec::parse_spec;
    use crate::mdp::MdpBuilder;
    use crate::probcheck::{rabin_optimal_policy, Direction};
    use crate::probcheck::tests::random_mdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_product_has_one_transition() {
        let mut b = MdpBuilder::new(1, vec!["go".into()], vec!["T".into()]);
        b.transition(0, 0, 0, 1.0).label(0, 0);
        let m = b.build().unwrap();
        let h = parse_spec("exists (s)\nforall x in {0} (s)\nPmax [T@x]").unwrap();
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        let text = export_dpomdp(&h, &problem).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("T:")).count(), 1);
        let parsed = parse_dpomdp(&text).unwrap();
        assert_eq!(parsed.agents, 2);
        assert!(parsed.max_row_error() < ROW_TOLERANCE);
    }

    #[test]
    fn shared_policy_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mdp(&mut rng, 3, 2, &["T"]);
        let h = parse_spec("exists (s)\nforall x1 in {0} (s)\nforall x2 in {1} (s)\nPmax [F (T@x1 & T@x2)]").unwrap();
        let problem = Problem::new(&m, &h, 0, None).unwrap();
        assert!(matches!(export_dpomdp(&h, &problem), Err(DecError::NotDecFragment(_))));
    }

    #[test]
    fn round_trip_matches_upper_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for f in ["F (a@x1 & a@x2)", "(!a@x1) U a@x2", "G F a@x1", "F a@x1 & G (a@x1 -> a@x2)"] {
            let m = random_mdp(&mut rng, 4, 3, &["a"]);
            let h = parse_spec(&format!("exists (s1 s2)\nforall x1 in {{0}} (s1)\nforall x2 in {{1}} (s2)\nPmax [{f}]")).unwrap();
            let problem = Problem::new(&m, &h, 0, None).unwrap();
            let parsed = parse_dpomdp(&export_dpomdp(&h, &problem).unwrap()).unwrap();
            assert!(parsed.is_complete());
            assert!(parsed.max_row_error() < ROW_TOLERANCE);
            let (ub, _) = rabin_optimal_policy(&problem.products[0][0], None, Direction::Max);
            assert!((parsed.centralized_optimum() - ub).abs() < 1e-6, "{f}");
            // every agent observes exactly its own component
            let p = &problem.products[0][0];
            for (s, obs) in &parsed.observed {
                let mut want = p.local_states(*s);
                want.push(p.dra_state(*s));
                assert_eq!(obs, &want);
            }
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        let e = parse_dpomdp("agents: 1\nstates: a\nstart:\n1\nactions:\nx\nobservations:\no\nT: y : a : a : 1\n").unwrap_err();
        assert!(matches!(e, DecError::Parse { line: 9, .. }));
    }
}
