//! Grid-world benchmark family: agent model plus specification text.
//!
//! Cells are `(x, y)` with `y` growing upwards. Every free cell offers the
//! four moves `n e s w`. A move reaches the intended neighbour, slips to the
//! neighbour right of the intended course (clockwise), or falls into the
//! absorbing trap state `S`. Moves into walls or obstacles stay put.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Mdp, MdpBuilder, ModelError, StateId};

pub const ACTIONS: [&str; 4] = ["n", "e", "s", "w"];
const DELTAS: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
/// Per-action trap scaling for initial state opacity ("different
/// probability of failing" per action).
const ISO_TRAP_SCALE: [f64; 4] = [1.0, 1.5, 2.0, 2.5];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid grid parameters: {0}")]
    Invalid(String),
    #[error("unknown benchmark `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Kind {
    Meet,
    MeetR,
    Race(usize),
    Opac,
    Iso,
    Robust,
    Noninter,
}

impl Kind {
    /// Agents the specification quantifies over.
    pub fn agents(self) -> usize {
        match self {
            Kind::Race(k) => k,
            Kind::Noninter => 4,
            _ => 2,
        }
    }

    /// Distinct start cells the kind needs.
    pub fn starts(self) -> usize {
        match self {
            Kind::Race(k) => k,
            Kind::Robust => 1,
            _ => 2,
        }
    }

    /// Whether the target absorbs (otherwise agents must keep moving).
    fn absorbing_target(self) -> bool {
        !matches!(self, Kind::Meet | Kind::MeetR)
    }

    /// Member of the Dec-MDP fragment.
    pub fn is_dec(self) -> bool {
        matches!(self, Kind::Meet | Kind::MeetR | Kind::Race(_) | Kind::Opac)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Meet => f.write_str("meet"),
            Kind::MeetR => f.write_str("meetR"),
            Kind::Race(k) => write!(f, "race-{k}"),
            Kind::Opac => f.write_str("opac"),
            Kind::Iso => f.write_str("iso"),
            Kind::Robust => f.write_str("robust"),
            Kind::Noninter => f.write_str("noninter"),
        }
    }
}

impl From<Kind> for String {
    fn from(k: Kind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for Kind {
    type Error = BenchError;

    fn try_from(s: String) -> Result<Kind, BenchError> {
        s.parse()
    }
}

impl FromStr for Kind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Kind, BenchError> {
        Ok(match s {
            "meet" => Kind::Meet,
            "meetR" => Kind::MeetR,
            "opac" => Kind::Opac,
            "iso" => Kind::Iso,
            "robust" => Kind::Robust,
            "noninter" => Kind::Noninter,
            _ => match s.strip_prefix("race-").and_then(|k| k.parse().ok()) {
                Some(k) if k >= 2 => Kind::Race(k),
                _ => return Err(BenchError::Unknown(s.into())),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub kind: Kind,
    pub width: usize,
    pub height: usize,
    pub obstacles: BTreeSet<(usize, usize)>,
    pub slip: f64,
    pub trap: f64,
    pub target: (usize, usize),
    pub starts: Vec<(usize, usize)>,
    /// Opacity regions are vertical strips this many cells wide.
    pub region_width: usize,
}

impl GridParams {
    pub fn new(kind: Kind, width: usize, height: usize) -> GridParams {
        let mut starts = vec![(0, 0), (0, height - 1), (width - 1, height - 1), (width - 1, 0)];
        starts.truncate(kind.starts());
        GridParams {
            kind,
            width,
            height,
            obstacles: BTreeSet::new(),
            slip: 0.1,
            trap: 0.02,
            target: (width / 2, height / 2),
            starts,
            region_width: width.div_ceil(2),
        }
    }

    fn free(&self, c: (usize, usize)) -> bool {
        c.0 < self.width && c.1 < self.height && !self.obstacles.contains(&c)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Invalid(m));
        if self.width == 0 || self.height == 0 {
            return bad("empty grid".into());
        }
        if !(0.0..1.0).contains(&self.slip) || !(0.0..1.0).contains(&self.trap) {
            return bad("slip and trap must lie in [0, 1)".into());
        }
        let max_trap = if self.kind == Kind::Iso { self.trap * ISO_TRAP_SCALE[3] } else { self.trap };
        if self.slip + max_trap >= 1.0 {
            return bad("slip + trap must stay below 1".into());
        }
        if !self.free(self.target) {
            return bad(format!("target {:?} is not a free cell", self.target));
        }
        if self.starts.len() != self.kind.starts() {
            return bad(format!("{} needs {} start cells", self.kind, self.kind.starts()));
        }
        if let Some(s) = self.starts.iter().find(|&&s| !self.free(s)) {
            return bad(format!("start {s:?} is not a free cell"));
        }
        if self.region_width == 0 {
            return bad("region width must be positive".into());
        }
        Ok(())
    }
}

/// Generated benchmark.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub params: GridParams,
    pub model: Mdp,
    pub spec: String,
    /// Model state of each start cell.
    pub start_states: Vec<StateId>,
}

/// Extra per-cell memory of the agent model, depending on the kind.
fn flag_count(kind: Kind) -> usize {
    match kind {
        Kind::Robust => 2, // arrived by slipping
        Kind::Opac => 5,   // last action, or none yet
        _ => 1,
    }
}

pub fn gen_benchmark(g: &GridParams) -> Result<Benchmark, BenchError> {
    g.validate()?;
    let kind = g.kind;
    let cells: Vec<(usize, usize)> =
        (0..g.height).flat_map(|y| (0..g.width).map(move |x| (x, y))).filter(|&c| g.free(c)).collect();
    let index: BTreeMap<(usize, usize), usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let flags = flag_count(kind);
    let trap = cells.len() * flags;
    let n = trap + 1;

    let target_ap = if kind == Kind::Noninter { "goal" } else { "T" };
    let mut aps = vec![target_ap.to_string(), "S".to_string()];
    match kind {
        Kind::Robust => aps.push("sl".into()),
        Kind::Opac => {
            aps.extend(ACTIONS.iter().map(|a| format!("act_{a}")));
            aps.extend((0..g.width.div_ceil(g.region_width)).map(|r| format!("reg{r}")));
        }
        _ => {}
    }
    let ap = |name: &str| aps.iter().position(|a| a == name).unwrap();
    let (t_ap, s_ap) = (0, 1);
    let mut b = MdpBuilder::new(n, ACTIONS.iter().map(|a| a.to_string()).collect(), aps.clone());
    let state = |cell: usize, flag: usize| cell * flags + flag;

    let step = |c: (usize, usize), d: usize| -> (usize, usize) {
        let (dx, dy) = DELTAS[d];
        let (x, y) = (c.0 as i64 + dx, c.1 as i64 + dy);
        if x < 0 || y < 0 {
            return c;
        }
        let t = (x as usize, y as usize);
        if g.free(t) {
            t
        } else {
            c
        }
    };

    for (ci, &c) in cells.iter().enumerate() {
        for flag in 0..flags {
            let s = state(ci, flag);
            if c == g.target {
                b.label(s, t_ap);
            }
            match kind {
                Kind::Robust if flag == 1 => {
                    b.label(s, ap("sl"));
                }
                Kind::Opac => {
                    if flag > 0 {
                        b.label(s, ap(&format!("act_{}", ACTIONS[flag - 1])));
                    }
                    b.label(s, ap(&format!("reg{}", c.0 / g.region_width)));
                }
                _ => {}
            }
            for a in 0..4 {
                if c == g.target && kind.absorbing_target() {
                    b.transition(s, a, s, 1.0);
                    continue;
                }
                let p_trap = if kind == Kind::Iso { g.trap * ISO_TRAP_SCALE[a] } else { g.trap };
                let intended = index[&step(c, a)];
                let slipped = index[&step(c, (a + 1) % 4)];
                let (f_ok, f_slip) = match kind {
                    Kind::Robust => (0, 1),
                    Kind::Opac => (a + 1, a + 1),
                    _ => (0, 0),
                };
                b.transition(s, a, state(intended, f_ok), 1.0 - g.slip - p_trap);
                if g.slip > 0.0 {
                    b.transition(s, a, state(slipped, f_slip), g.slip);
                }
                if p_trap > 0.0 {
                    b.transition(s, a, trap, p_trap);
                }
                if kind == Kind::MeetR {
                    b.reward("cost", s, a, 1.0);
                }
            }
        }
    }
    b.label(trap, s_ap);
    for a in 0..4 {
        b.transition(trap, a, trap, 1.0);
    }
    let model = b.build()?;
    let start_states: Vec<StateId> = g.starts.iter().map(|c| state(index[c], 0)).collect();
    let spec = spec_text(g, &start_states, &aps);
    Ok(Benchmark { params: g.clone(), model, spec, start_states })
}

fn spec_text(g: &GridParams, starts: &[StateId], aps: &[String]) -> String {
    let mut out = format!("# {}-{}x{}\n", g.kind, g.width, g.height);
    let pair = || format!("exists (s1 s2)\nforall x1 in {{{}}} (s1)\nforall x2 in {{{}}} (s2)\n", starts[0], starts[1]);
    match g.kind {
        Kind::Meet => {
            out += &pair();
            out += "Pmax [ F (T@x1 & T@x2) ]\n";
        }
        Kind::MeetR => {
            out += &pair();
            out += "Rmin{cost@x1} [ F (T@x1 & T@x2) ]\n";
        }
        Kind::Race(k) => {
            let vars: Vec<String> = (1..=k).map(|i| format!("s{i}")).collect();
            out += &format!("exists ({})\n", vars.join(" "));
            for i in 1..=k {
                out += &format!("forall x{i} in {{{}}} (s{i})\n", starts[i - 1]);
            }
            // the last agent has to arrive first, then the one before, ...
            let mut parts: Vec<String> = (1..=k).map(|i| format!("F T@x{i}")).collect();
            parts.extend((1..k).map(|i| format!("G (T@x{i} -> T@x{})", i + 1)));
            out += &format!("Pmax [ {} ]\n", parts.join(" & "));
        }
        Kind::Opac => {
            out += &pair();
            let eq = |p: &str| format!("!({p}@x1 ^ {p}@x2)");
            let acts: Vec<String> = aps.iter().filter(|a| a.starts_with("act_")).map(|a| eq(a)).collect();
            let regs: Vec<String> = aps.iter().filter(|a| a.starts_with("reg")).map(|a| eq(a)).collect();
            out += &format!(
                "Pmax [ !G ({}) & G ({}) & F T@x1 & F T@x2 ]\n",
                acts.join(" & "),
                regs.join(" & ")
            );
        }
        Kind::Iso => {
            out += &format!("exists (s)\nforall x1 in {{{}}} (s)\nforall x2 in {{{}}} (s)\n", starts[0], starts[1]);
            out += "Pmax [ ((!T@x1 & !T@x2) U (T@x1 & T@x2)) | ((!S@x1 & !S@x2 & !T@x1 & !T@x2) U (S@x1 & S@x2)) ]\n";
        }
        Kind::Robust => {
            out += &format!("exists (s)\nforall x1 in {{{0}}} (s)\nforall x2 in {{{0}}} (s)\n", starts[0]);
            out += "Pmax [ (F T@x1 & F T@x2) & ((F sl@x1 ^ F sl@x2) -> ((!T@x1 & !T@x2) U (T@x1 & T@x2))) ]\n";
        }
        Kind::Noninter => {
            out += "exists (p1 p2a p2b)\n";
            out += &format!("forall y1a in {{{}}} (p1)\nforall y1b in {{{}}} (p1)\n", starts[0], starts[0]);
            out += &format!("forall y2a in {{{}}} (p2a)\nforall y2b in {{{}}} (p2b)\n", starts[1], starts[1]);
            out += "Pmax [ ((!goal@y1a) U goal@y2a) ^ ((!goal@y1b) U goal@y2b) ]\n";
        }
    }
    out
}

/// Metadata written next to a generated benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    pub params: GridParams,
    pub agent_states: usize,
    pub start_states: Vec<StateId>,
    pub dec_fragment: bool,
    /// Reference values the calibration aims at, when there are any.
    pub reference: Option<Reference>,
}

/// Target values of a calibrated instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub random: Option<f64>,
    pub upper: Option<f64>,
    pub memoryless: Option<f64>,
    pub with_memory: Option<f64>,
    pub agent_states: usize,
    pub product_states: usize,
}

impl Benchmark {
    pub fn name(&self) -> String {
        format!("{}-{}x{}", self.params.kind, self.params.width, self.params.height)
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            name: self.name(),
            params: self.params.clone(),
            agent_states: self.model.num_states(),
            start_states: self.start_states.clone(),
            dec_fragment: self.params.kind.is_dec(),
            reference: reference(&self.name()),
        }
    }
}

/// Values the calibrated presets reproduce.
pub fn reference(name: &str) -> Option<Reference> {
    match name {
        "meet-4x4" => Some(Reference {
            random: Some(0.1),
            upper: Some(0.66),
            memoryless: Some(0.63),
            with_memory: None,
            agent_states: 22,
            product_states: 122,
        }),
        "race-2-4x4" => Some(Reference {
            random: Some(0.2),
            upper: Some(0.8),
            memoryless: Some(0.7),
            with_memory: Some(0.76),
            agent_states: 18,
            product_states: 76,
        }),
        _ => None,
    }
}

/// Named instances. The 4x4 meeting and two-agent race grids are
/// calibrated against their reference values; the others use defaults.
pub fn preset(name: &str) -> Result<GridParams, BenchError> {
    let (kind, dims) = name.rsplit_once('-').ok_or_else(|| BenchError::Unknown(name.into()))?;
    let kind: Kind = kind.parse()?;
    let (w, h) = dims.split_once('x').ok_or_else(|| BenchError::Unknown(name.into()))?;
    let w: usize = w.parse().map_err(|_| BenchError::Unknown(name.into()))?;
    let h: usize = h.parse().map_err(|_| BenchError::Unknown(name.into()))?;
    let mut g = GridParams::new(kind, w, h);
    match name {
        "meet-4x4" => {
            g.obstacles = MEET_4X4_OBSTACLES.iter().copied().collect();
            g.target = (0, 2);
            g.trap = MEET_4X4_TRAP;
        }
        "race-2-4x4" => {
            g.obstacles = RACE_4X4_OBSTACLES.iter().copied().collect();
            g.target = (2, 1);
            g.trap = RACE_4X4_TRAP;
        }
        _ => {}
    }
    g.validate()?;
    Ok(g)
}

const MEET_4X4_OBSTACLES: &[(usize, usize)] = &[(1, 0), (1, 2), (1, 3), (2, 0), (2, 2), (3, 1)];
const MEET_4X4_TRAP: f64 = 0.085;
const RACE_4X4_OBSTACLES: &[(usize, usize)] = &[];
const RACE_4X4_TRAP: f64 = 0.02;

/// Small random MDP for tests: every state enables a prefix of the
/// actions, each with one or two successors, plus random labels and a
/// "default" reward.
pub fn random_mdp<R: Rng>(rng: &mut R, n: usize, actions: usize, aps: &[&str]) -> Mdp {
    let mut b = MdpBuilder::with_counts(n, actions, aps);
    for s in 0..n {
        let k = rng.gen_range(1..=actions);
        for a in 0..k {
            let fanout = rng.gen_range(1..=2);
            if fanout == 1 {
                b.transition(s, a, rng.gen_range(0..n), 1.0);
            } else {
                let p = [0.25, 0.5, 0.75][rng.gen_range(0..3)];
                let t1 = rng.gen_range(0..n);
                let t2 = rng.gen_range(0..n);
                b.transition(s, a, t1, p).transition(s, a, t2, 1.0 - p);
            }
            b.reward("default", s, a, rng.gen_range(0..4) as f64);
        }
        for ap in 0..aps.len() {
            if rng.gen_bool(0.4) {
                b.label(s, ap);
            }
        }
    }
    b.build().unwrap()
}
