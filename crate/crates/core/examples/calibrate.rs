//! Searches trap probability and obstacle layouts for a grid benchmark so
//! that its baseline values land near reference values.
//!
//! cargo run --release --example calibrate -- meet-4x4

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use hypersynth::benchgen::{gen_benchmark, preset, reference, GridParams};
use hypersynth::hyperspec::{parse_spec, Direction};
use hypersynth::synthesis::{Problem, SynthesisOptions};

struct Values {
    random: f64,
    upper: f64,
    states: usize,
    product: usize,
}

fn values(g: &GridParams) -> Option<Values> {
    let b = gen_benchmark(g).ok()?;
    let h = parse_spec(&b.spec).ok()?;
    let p = Problem::new(&b.model, &h, 0, None).ok()?;
    let (upper, _) = p.solve(0, 0, None, Direction::Max);
    let random = p.evaluate_behaviours(&p.uniform_behaviours()).ok()?.values[0][0];
    Some(Values { random, upper, states: b.model.num_states(), product: p.product_sizes()[0] })
}

fn synth(g: &GridParams, bits: u32, secs: u64) -> (f64, f64, String) {
    let b = gen_benchmark(g).unwrap();
    let h = parse_spec(&b.spec).unwrap();
    let t = Instant::now();
    let opts = SynthesisOptions { memory_bits: bits, time_budget: Some(Duration::from_secs(secs)), ..Default::default() };
    let r = hypersynth::synthesis::synthesize(&b.model, &h, &opts).unwrap();
    (r.best_value.unwrap_or(f64::NAN), t.elapsed().as_secs_f64(), r.status.to_string())
}

/// Trap probability whose upper bound hits `target` (bisection).
fn fit_trap(g: &GridParams, target: f64) -> Option<GridParams> {
    let (mut lo, mut hi) = (0.0, 0.5);
    let mut g = g.clone();
    for _ in 0..30 {
        g.trap = (lo + hi) / 2.0;
        let v = values(&g)?;
        if v.upper > target {
            lo = g.trap;
        } else {
            hi = g.trap;
        }
    }
    g.trap = (g.trap * 1e4).round() / 1e4;
    Some(g)
}

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "meet-4x4".into());
    let max_obstacles: usize = std::env::args().nth(2).and_then(|x| x.parse().ok()).unwrap_or(2);
    let vary = std::env::args().nth(3).is_some_and(|x| x == "vary");
    let mut base = preset(&name).unwrap();
    let cell = |t: &str| {
        let (x, y) = t.split_once(',').unwrap();
        (x.parse::<usize>().unwrap(), y.parse::<usize>().unwrap())
    };
    if let Ok(t) = std::env::var("CAL_TARGET") {
        base.target = cell(&t);
    }
    if let Ok(t) = std::env::var("CAL_STARTS") {
        base.starts = t.split(';').map(cell).collect();
    }
    let min_obstacles: usize = std::env::var("CAL_MIN").ok().and_then(|x| x.parse().ok()).unwrap_or(0);
    let r = reference(&name).expect("no reference values");
    let free: Vec<(usize, usize)> = (0..base.height)
        .flat_map(|y| (0..base.width).map(move |x| (x, y)))
        .filter(|c| *c != base.target && !base.starts.contains(c))
        .collect();
    let mut layouts: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new()];
    for _ in 0..max_obstacles {
        let mut next = Vec::new();
        for l in &layouts {
            for c in &free {
                if l.iter().all(|o| o < c) {
                    let mut m = l.clone();
                    m.insert(*c);
                    next.push(m);
                }
            }
        }
        let size = layouts.last().unwrap().len() + 1;
        layouts.extend(next.into_iter().filter(|l| l.len() == size));
    }
    let corners = [(0, 0), (0, base.height - 1), (base.width - 1, base.height - 1), (base.width - 1, 0)];
    let mut placements = vec![(base.starts.clone(), base.target)];
    if vary {
        for i in 0..4 {
            for j in 0..4 {
                if i == j || base.kind.starts() != 2 {
                    continue;
                }
                for y in 0..base.height {
                    for x in 0..base.width {
                        if corners[i..=i].contains(&(x, y)) || corners[j..=j].contains(&(x, y)) {
                            continue;
                        }
                        placements.push((vec![corners[i], corners[j]], (x, y)));
                    }
                }
            }
        }
    }
    let mut best: Vec<(f64, GridParams)> = Vec::new();
    for (starts, target) in placements {
        for l in &layouts {
            let mut g = base.clone();
            g.starts = starts.clone();
            g.target = target;
            g.obstacles = l.clone();
            if l.len() < min_obstacles || g.validate().is_err() {
                continue;
            }
            // cheap screen at a typical trap probability before bisecting
            g.trap = 0.08;
            match values(&g) {
                Some(v) if (v.random - r.random.unwrap()).abs() < 0.06 => {}
                _ => continue,
            }
            let Some(g) = fit_trap(&g, r.upper.unwrap()) else { continue };
            let Some(v) = values(&g) else { continue };
            let err = (v.random - r.random.unwrap()).abs();
            println!(
                "{:?} {:?} {:?} trap={} upper={:.4} random={:.4} |M|={} |D|={}",
                g.starts, g.target, g.obstacles, g.trap, v.upper, v.random, v.states, v.product
            );
            best.push((err, g));
        }
    }
    best.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (err, g) in best.iter().take(8) {
        let (v0, t0, s0) = synth(g, 0, 30);
        let mem = if r.with_memory.is_some() { format!("{:?}", synth(g, 1, 300)) } else { String::new() };
        println!(
            "CANDIDATE {:?} {:?} {:?} trap={} random-err={err:.4} mem0={v0:.4} ({t0:.1}s {s0}) {mem}",
            g.starts, g.target, g.obstacles, g.trap
        );
    }
}
