//! Plain-text model format.
//!
//! ```text
//! states 3
//! actions go stay
//! ap goal
//! 0 go 1 0.5      # s a s' p
//! 0 go 2 0.5
//! label 2 goal
//! reward 0 go 1.0         # unnamed structure, called "default"
//! reward steps 0 go 1.0   # named structure
//! ```
//!
//! Actions may be given by name or by index.

use std::fmt::Write as _;

use super::{Mdp, MdpBuilder, ModelError};

pub const DEFAULT_REWARD: &str = "default";

fn err(line: usize, msg: impl Into<String>) -> ModelError {
    ModelError::Parse { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, ModelError> {
    tok.parse().map_err(|_| err(line, format!("expected {what}, found `{tok}`")))
}

pub fn parse_model(text: &str) -> Result<Mdp, ModelError> {
    let mut states: Option<usize> = None;
    let mut actions: Option<Vec<String>> = None;
    let mut aps: Vec<String> = Vec::new();
    let mut builder: Option<MdpBuilder> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        match toks[0] {
            "states" if builder.is_none() => {
                if toks.len() != 2 {
                    return Err(err(line, "expected `states N`"));
                }
                states = Some(num(toks[1], line, "state count")?);
            }
            "actions" if builder.is_none() => {
                actions = Some(toks[1..].iter().map(|s| s.to_string()).collect());
            }
            "ap" if builder.is_none() => {
                aps.extend(toks[1..].iter().map(|s| s.to_string()));
            }
            "states" | "actions" | "ap" => {
                return Err(err(line, format!("`{}` must precede transitions", toks[0])));
            }
            _ => {
                if builder.is_none() {
                    let n = states.ok_or_else(|| err(line, "missing `states` header"))?;
                    let acts = actions.take().ok_or_else(|| err(line, "missing `actions` header"))?;
                    if aps.len() > super::MAX_APS {
                        return Err(ModelError::TooManyAps(aps.len()));
                    }
                    if acts.len() > super::MAX_ACTIONS {
                        return Err(ModelError::TooManyActions(acts.len()));
                    }
                    builder = Some(MdpBuilder::new(n, acts, std::mem::take(&mut aps)));
                }
                let b = builder.as_mut().unwrap();
                parse_body_line(b, &toks, line)?;
            }
        }
    }
    let b = match builder {
        Some(b) => b,
        None => {
            let n = states.ok_or_else(|| err(0, "missing `states` header"))?;
            let acts = actions.ok_or_else(|| err(0, "missing `actions` header"))?;
            MdpBuilder::new(n, acts, aps)
        }
    };
    b.build()
}

fn state(b: &MdpBuilder, tok: &str, line: usize) -> Result<usize, ModelError> {
    let s: usize = num(tok, line, "state index")?;
    if s >= b.num_states() {
        return Err(err(line, format!("state {s} out of range")));
    }
    Ok(s)
}

fn action(b: &MdpBuilder, tok: &str, line: usize) -> Result<usize, ModelError> {
    if let Some(a) = b.actions.iter().position(|x| x == tok) {
        return Ok(a);
    }
    match tok.parse::<usize>() {
        Ok(a) if a < b.actions.len() => Ok(a),
        _ => Err(err(line, format!("unknown action `{tok}`"))),
    }
}

fn parse_body_line(b: &mut MdpBuilder, toks: &[&str], line: usize) -> Result<(), ModelError> {
    match toks[0] {
        "label" => {
            if toks.len() < 2 {
                return Err(err(line, "expected `label s <ap>...`"));
            }
            let s = state(b, toks[1], line)?;
            for name in &toks[2..] {
                let ap = b
                    .aps
                    .iter()
                    .position(|x| x == name)
                    .ok_or_else(|| err(line, format!("undeclared proposition `{name}`")))?;
                b.label(s, ap);
            }
        }
        "reward" => {
            let (name, rest) = match toks.len() {
                4 => (DEFAULT_REWARD, &toks[1..]),
                5 => (toks[1], &toks[2..]),
                _ => return Err(err(line, "expected `reward [name] s a r`")),
            };
            let s = state(b, rest[0], line)?;
            let a = action(b, rest[1], line)?;
            let r: f64 = num(rest[2], line, "reward value")?;
            b.reward(name, s, a, r);
        }
        _ => {
            if toks.len() != 4 {
                return Err(err(line, format!("unrecognized line `{}`", toks.join(" "))));
            }
            let s = state(b, toks[0], line)?;
            let a = action(b, toks[1], line)?;
            let t = state(b, toks[2], line)?;
            let p: f64 = num(toks[3], line, "probability")?;
            b.transition(s, a, t, p);
        }
    }
    Ok(())
}

pub fn write_model(m: &Mdp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "states {}", m.num_states());
    let _ = writeln!(out, "actions {}", m.action_names().join(" "));
    if !m.ap_names().is_empty() {
        let _ = writeln!(out, "ap {}", m.ap_names().join(" "));
    }
    for s in 0..m.num_states() {
        for ch in m.choices(s) {
            for &(t, p) in ch.dist.entries() {
                let _ = writeln!(out, "{s} {} {t} {p:?}", m.action_names()[ch.action]);
            }
        }
    }
    for s in 0..m.num_states() {
        let l = m.label(s);
        if l.0 != 0 {
            let names: Vec<&str> = l.iter().map(|i| m.ap_names()[i].as_str()).collect();
            let _ = writeln!(out, "label {s} {}", names.join(" "));
        }
    }
    let sources = m.choice_sources();
    for r in m.rewards() {
        for (c, &v) in r.per_choice.iter().enumerate() {
            if v != 0.0 {
                let a = &m.action_names()[m.choice(c).action];
                let _ = writeln!(out, "reward {} {} {a} {v:?}", r.name, sources[c]);
            }
        }
    }
    out
}
