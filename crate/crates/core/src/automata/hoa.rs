//! HOA v1 import and export for state-based Rabin automata.

use std::fmt::Write as _;

use super::cube::{prop_to_cubes, Cube, TaggedAp};
use super::dra::{Dra, RabinPair};
use super::AutomataError;
use crate::ltl::{parse_ltl, Ltl};

fn cube_label(c: Cube, k: usize) -> String {
    if c == Cube::TRUE {
        return "t".into();
    }
    let lits: Vec<String> = (0..k)
        .filter_map(|i| {
            if c.pos >> i & 1 == 1 {
                Some(i.to_string())
            } else if c.neg >> i & 1 == 1 {
                Some(format!("!{i}"))
            } else {
                None
            }
        })
        .collect();
    lits.join("&")
}

/// Writes `d` with state-based acceptance sets `2i` (for `L_i`) and `2i+1` (for `K_i`).
pub fn emit_hoa(d: &Dra) -> String {
    let k = d.aps().len();
    let mut out = String::new();
    let _ = writeln!(out, "HOA: v1");
    let _ = writeln!(out, "States: {}", d.num_states());
    let _ = writeln!(out, "Start: {}", d.initial());
    let names: Vec<String> = d.aps().iter().map(|a| format!("\"{a}\"")).collect();
    let _ = writeln!(out, "AP: {k}{}{}", if k > 0 { " " } else { "" }, names.join(" "));
    let n = d.pairs().len();
    let _ = writeln!(out, "acc-name: Rabin {n}");
    let conds: Vec<String> =
        (0..n).map(|i| format!("(Fin({})&Inf({}))", 2 * i, 2 * i + 1)).collect();
    let _ = writeln!(out, "Acceptance: {} {}", 2 * n, conds.join("|"));
    let _ = writeln!(out, "properties: trans-labels explicit-labels state-acc deterministic complete");
    let _ = writeln!(out, "--BODY--");
    for q in 0..d.num_states() {
        let sets: Vec<String> = d
            .pairs()
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                let mut s = Vec::new();
                if p.l[q] {
                    s.push((2 * i).to_string());
                }
                if p.k[q] {
                    s.push((2 * i + 1).to_string());
                }
                s
            })
            .collect();
        if sets.is_empty() {
            let _ = writeln!(out, "State: {q}");
        } else {
            let _ = writeln!(out, "State: {q} {{{}}}", sets.join(" "));
        }
        for &(c, t) in d.edges(q) {
            let _ = writeln!(out, "[{}] {t}", cube_label(c, k));
        }
    }
    let _ = writeln!(out, "--END--");
    out
}

fn hoa_err(msg: impl Into<String>) -> AutomataError {
    AutomataError::Hoa(msg.into())
}

fn parse_ap_name(s: &str) -> Result<TaggedAp, AutomataError> {
    let (name, tag) = s
        .rsplit_once('@')
        .ok_or_else(|| hoa_err(format!("proposition `{s}` lacks an `@k` agent tag")))?;
    let k: usize = tag.parse().map_err(|_| hoa_err(format!("bad agent tag in `{s}`")))?;
    if k == 0 || name.is_empty() {
        return Err(hoa_err(format!("bad proposition `{s}`")));
    }
    Ok(TaggedAp { name: name.to_string(), agent: k - 1 })
}

/// Splits on whitespace but keeps double-quoted strings together.
fn tokens(s: &str) -> Result<Vec<String>, AutomataError> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut t = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(c) => t.push(c),
                    None => return Err(hoa_err("unterminated string")),
                }
            }
            out.push(t);
        } else {
            let mut t = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                t.push(c);
                chars.next();
            }
            out.push(t);
        }
    }
    Ok(out)
}

/// Parses `(Fin(a)&Inf(b))|...` into `(a, b)` set pairs.
fn parse_rabin_condition(s: &str) -> Result<Vec<(usize, usize)>, AutomataError> {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if compact == "f" {
        return Ok(vec![]);
    }
    let unsupported = || AutomataError::UnsupportedAcceptance(s.trim().to_string());
    compact
        .split('|')
        .map(|disj| {
            let inner = disj.strip_prefix('(').and_then(|d| d.strip_suffix(')')).unwrap_or(disj);
            let (fin, inf) = inner.split_once('&').ok_or_else(unsupported)?;
            let num = |t: &str, kw: &str| -> Result<usize, AutomataError> {
                t.strip_prefix(kw)
                    .and_then(|t| t.strip_prefix('('))
                    .and_then(|t| t.strip_suffix(')'))
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(unsupported)
            };
            Ok((num(fin, "Fin")?, num(inf, "Inf")?))
        })
        .collect()
}

/// Converts a HOA label expression into an LTL propositional formula.
fn label_formula(expr: &str, aps: &[TaggedAp]) -> Result<Ltl, AutomataError> {
    let mut text = String::new();
    let mut chars = expr.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_ascii_digit() {
            let mut num = c.to_string();
            while let Some(&d) = chars.peek() {
                if !d.is_ascii_digit() {
                    break;
                }
                num.push(d);
                chars.next();
            }
            let i: usize = num.parse().unwrap();
            let ap = aps.get(i).ok_or_else(|| hoa_err(format!("proposition index {i} out of range")))?;
            // placeholder names avoid clashes with keywords such as `F` or `X`
            let _ = write!(text, "p{i}@{}", ap.agent + 1);
        } else if c == 't' {
            text.push_str("true");
        } else if c == 'f' {
            text.push_str("false");
        } else {
            text.push(c);
        }
    }
    let f = parse_ltl(&text).map_err(|e| hoa_err(format!("label `{expr}`: {e}")))?;
    rename(&f, aps)
}

fn rename(f: &Ltl, aps: &[TaggedAp]) -> Result<Ltl, AutomataError> {
    Ok(match f {
        Ltl::Atom(a) => {
            let i: usize = a.ap[1..].parse().unwrap();
            Ltl::atom(&aps[i].name, aps[i].agent)
        }
        Ltl::True => Ltl::True,
        Ltl::False => Ltl::False,
        Ltl::Not(x) => Ltl::not(rename(x, aps)?),
        Ltl::And(x, y) => Ltl::and(rename(x, aps)?, rename(y, aps)?),
        Ltl::Or(x, y) => Ltl::or(rename(x, aps)?, rename(y, aps)?),
        _ => return Err(hoa_err("unsupported label operator")),
    })
}

/// Parses a deterministic state-based Rabin automaton in HOA v1.
pub fn parse_hoa(text: &str) -> Result<Dra, AutomataError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    match lines.next() {
        Some(l) if l.split_whitespace().collect::<Vec<_>>() == ["HOA:", "v1"] => {}
        _ => return Err(hoa_err("missing `HOA: v1` header")),
    }
    let mut states: Option<usize> = None;
    let mut start: Option<usize> = None;
    let mut aps: Option<Vec<TaggedAp>> = None;
    let mut acc_name: Option<String> = None;
    let mut condition: Option<Vec<(usize, usize)>> = None;
    let mut in_body = false;
    for line in lines.by_ref() {
        if line == "--BODY--" {
            in_body = true;
            break;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| hoa_err(format!("bad header line `{line}`")))?;
        match key {
            "States" => states = Some(rest.trim().parse().map_err(|_| hoa_err("bad `States`"))?),
            "Start" => {
                if start.is_some() {
                    return Err(hoa_err("multiple initial states"));
                }
                start = Some(rest.trim().parse().map_err(|_| hoa_err("bad `Start`"))?)
            }
            "AP" => {
                let toks = tokens(rest)?;
                let (n, names) = toks.split_first().ok_or_else(|| hoa_err("empty `AP`"))?;
                let n: usize = n.parse().map_err(|_| hoa_err("bad `AP` count"))?;
                if names.len() != n {
                    return Err(hoa_err("`AP` count does not match names"));
                }
                if n > 64 {
                    return Err(AutomataError::TooManyAps(n));
                }
                aps = Some(names.iter().map(|s| parse_ap_name(s)).collect::<Result<_, _>>()?);
            }
            "acc-name" => {
                let name = rest.split_whitespace().next().unwrap_or("").to_string();
                if name != "Rabin" {
                    return Err(AutomataError::UnsupportedAcceptance(rest.trim().to_string()));
                }
                acc_name = Some(name);
            }
            "Acceptance" => {
                let rest = rest.trim();
                let (_, cond) = rest.split_once(' ').unwrap_or((rest, ""));
                condition = Some(parse_rabin_condition(cond)?);
            }
            _ => {}
        }
    }
    if !in_body {
        return Err(hoa_err("missing `--BODY--`"));
    }
    let n = states.ok_or_else(|| hoa_err("missing `States`"))?;
    let aps = aps.ok_or_else(|| hoa_err("missing `AP`"))?;
    let start = start.ok_or_else(|| hoa_err("missing `Start`"))?;
    let condition = condition.ok_or_else(|| hoa_err("missing `Acceptance`"))?;
    if acc_name.is_none() {
        return Err(hoa_err("missing `acc-name`"));
    }
    if start >= n {
        return Err(hoa_err("initial state out of range"));
    }

    let mut trans: Vec<Vec<(Cube, usize)>> = vec![Vec::new(); n];
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut cur: Option<usize> = None;
    let mut ended = false;
    for line in lines {
        if line == "--END--" {
            ended = true;
            break;
        }
        if let Some(rest) = line.strip_prefix("State:") {
            let rest = rest.trim();
            let (id, acc) = match rest.find('{') {
                Some(i) => (&rest[..i], Some(&rest[i..])),
                None => (rest, None),
            };
            let id: usize = id
                .split_whitespace()
                .next()
                .and_then(|t| t.parse().ok())
                .filter(|&q| q < n)
                .ok_or_else(|| hoa_err(format!("bad state line `{line}`")))?;
            if let Some(acc) = acc {
                let inner = acc.trim().trim_start_matches('{').trim_end_matches('}');
                sets[id] = inner
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| hoa_err("bad acceptance set")))
                    .collect::<Result<_, _>>()?;
            }
            cur = Some(id);
        } else if let Some(rest) = line.strip_prefix('[') {
            let q = cur.ok_or_else(|| hoa_err("edge before any `State:`"))?;
            let (label, target) =
                rest.split_once(']').ok_or_else(|| hoa_err(format!("bad edge `{line}`")))?;
            let t: usize = target
                .trim()
                .parse()
                .ok()
                .filter(|&t| t < n)
                .ok_or_else(|| hoa_err(format!("bad edge target in `{line}`")))?;
            let f = label_formula(label, &aps)?;
            for c in prop_to_cubes(&f, &aps) {
                trans[q].push((c, t));
            }
        } else {
            return Err(hoa_err(format!("unexpected line `{line}`")));
        }
    }
    if !ended {
        return Err(hoa_err("missing `--END--`"));
    }
    let mut pairs: Vec<RabinPair> = condition
        .iter()
        .map(|&(fin, inf)| {
            let l: Vec<usize> = (0..n).filter(|&q| sets[q].contains(&fin)).collect();
            let k: Vec<usize> = (0..n).filter(|&q| sets[q].contains(&inf)).collect();
            RabinPair::new(n, &l, &k)
        })
        .collect();
    if pairs.is_empty() {
        pairs.push(RabinPair::new(n, &[], &[]));
    }
    let d = Dra::new(aps, start, trans, pairs);
    if !d.is_deterministic() {
        return Err(hoa_err("automaton is not deterministic and complete"));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{dra_isomorphic, ltl_to_dra, ltl_to_dra_with, TranslationOptions};

    #[test]
    fn round_trip_eventually() {
        let d = ltl_to_dra(&parse_ltl("F a@1").unwrap()).unwrap();
        let back = parse_hoa(&emit_hoa(&d)).unwrap();
        assert!(dra_isomorphic(&d, &back));
    }

    #[test]
    fn round_trip_safra() {
        let opts = TranslationOptions { shortcuts: false, ..Default::default() };
        let d = ltl_to_dra_with(&parse_ltl("F G a@1 | G F b@2").unwrap(), &opts).unwrap();
        let back = parse_hoa(&emit_hoa(&d)).unwrap();
        assert!(dra_isomorphic(&d, &back));
    }

    #[test]
    fn universal_automaton() {
        let text = "HOA: v1\nStates: 1\nStart: 0\nAP: 1 \"a@1\"\nacc-name: Rabin 1\n\
                    Acceptance: 2 (Fin(0)&Inf(1))\n--BODY--\nState: 0 {1}\n[t] 0\n--END--\n";
        let d = parse_hoa(text).unwrap();
        assert!(d.accepts_valuations(&[], &[0]));
        assert!(d.accepts_valuations(&[1], &[1, 0]));
    }

    #[test]
    fn rejects_buchi() {
        let text = "HOA: v1\nStates: 1\nStart: 0\nAP: 0\nacc-name: Buchi\n\
                    Acceptance: 1 Inf(0)\n--BODY--\nState: 0 {0}\n[t] 0\n--END--\n";
        assert_eq!(
            parse_hoa(text).unwrap_err(),
            AutomataError::UnsupportedAcceptance("Buchi".into())
        );
    }

    #[test]
    fn rejects_malformed_header() {
        assert!(matches!(parse_hoa("States: 1\n"), Err(AutomataError::Hoa(_))));
        let no_body = "HOA: v1\nStates: 1\nStart: 0\nAP: 0\n";
        assert!(matches!(parse_hoa(no_body), Err(AutomataError::Hoa(_))));
    }
}
