//! Text format for policy tuples.
//!
//! ```text
//! policy sigma
//! 0 east
//! 1:0 north 1     # with memory: state:mem action next-mem
//! ```
//!
//! States not listed take the lowest enabled action.

use std::fmt::Write as _;

use crate::mdp::{Mdp, MemorylessPolicy};

use super::{PolicyTuple, SynthesisError};

fn bad(line: usize, msg: impl Into<String>) -> SynthesisError {
    SynthesisError::TupleFormat { line, msg: msg.into() }
}

/// Renders `t` over the base model `m` (not the unfolded one).
pub fn write_tuple(t: &PolicyTuple, m: &Mdp, memory_bits: u32, names: &[String]) -> String {
    let mem = 1usize << memory_bits;
    let mut out = String::new();
    for (v, p) in t.policies.iter().enumerate() {
        let name = names.get(v).cloned().unwrap_or_else(|| format!("p{v}"));
        writeln!(out, "policy {name}").unwrap();
        for s in 0..m.num_states() {
            for n in 0..mem {
                let Some(a) = p.get(s * mem + n) else { continue };
                let act = &m.action_names()[a / mem];
                if memory_bits == 0 {
                    writeln!(out, "{s} {act}").unwrap();
                } else {
                    writeln!(out, "{s}:{n} {act} {}", a % mem).unwrap();
                }
            }
        }
    }
    out
}

/// Parses a tuple for the base model `m`; policy blocks must follow the
/// order of `names`.
pub fn parse_tuple(text: &str, m: &Mdp, memory_bits: u32, names: &[String]) -> Result<PolicyTuple, SynthesisError> {
    let mem = 1usize << memory_bits;
    let mut blocks: Vec<Vec<Option<usize>>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields[0] == "policy" {
            let name = fields.get(1).ok_or_else(|| bad(line, "policy header without a name"))?;
            let expected = names.get(blocks.len()).ok_or_else(|| bad(line, "more policy blocks than policy variables"))?;
            if name != expected {
                return Err(bad(line, format!("expected policy `{expected}`, found `{name}`")));
            }
            blocks.push(vec![None; m.num_states() * mem]);
            continue;
        }
        let block = blocks.last_mut().ok_or_else(|| bad(line, "assignment before any policy header"))?;
        let (state, n) = match fields[0].split_once(':') {
            Some((s, n)) => (s, n.parse::<usize>().map_err(|_| bad(line, "bad memory value"))?),
            None => (fields[0], 0),
        };
        let s: usize = state.parse().map_err(|_| bad(line, format!("bad state `{state}`")))?;
        if s >= m.num_states() || n >= mem {
            return Err(bad(line, format!("state {} out of range", fields[0])));
        }
        let act = fields.get(1).ok_or_else(|| bad(line, "missing action"))?;
        let a = m.action_index(act).ok_or_else(|| bad(line, format!("unknown action `{act}`")))?;
        if !m.enabled(s).contains(a) {
            return Err(bad(line, format!("action `{act}` is not enabled in state {s}")));
        }
        let next = match fields.get(2) {
            Some(x) => x.parse::<usize>().map_err(|_| bad(line, "bad next-memory value"))?,
            None => 0,
        };
        if next >= mem || fields.len() > 3 {
            return Err(bad(line, "bad next-memory value"));
        }
        block[s * mem + n] = Some(a * mem + next);
    }
    if blocks.len() != names.len() {
        return Err(bad(0, format!("expected {} policy blocks, found {}", names.len(), blocks.len())));
    }
    let policies = blocks
        .into_iter()
        .map(|b| {
            MemorylessPolicy::total(
                b.into_iter()
                    .enumerate()
                    .map(|(u, a)| a.unwrap_or_else(|| m.enabled(u / mem).first().unwrap() * mem))
                    .collect(),
            )
        })
        .collect();
    Ok(PolicyTuple { policies })
}
