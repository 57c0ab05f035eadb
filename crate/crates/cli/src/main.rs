use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use hypersynth::automata::parse_hoa;
use hypersynth::benchgen::{gen_benchmark, preset, GridParams, Kind};
use hypersynth::decmdp::export_dpomdp;
use hypersynth::hyperspec::{parse_spec, HyperFormula};
use hypersynth::mdp::{parse_model, Mdp};
use hypersynth::synthesis::{
    brute_force, parse_tuple, widen_memory, write_tuple, Evaluation, PolicyTuple, Problem, Status, SynthesisOptions, DEFAULT_EPSILON,
};

/// Synthesis of decentralized policies for probabilistic hyperproperties.
#[derive(Parser)]
#[command(name = "hypersynth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run abstraction refinement and report the best policy tuple.
    Synth(SynthArgs),
    /// Evaluate a policy tuple file (or the uniform random tuple).
    Check(CheckArgs),
    /// Write the Dec-MDP of a decentralized-fragment instance in .dpomdp format.
    ExportDecmdp(ExportArgs),
    /// Generate a grid benchmark: a preset like `meet-4x4`, or a kind with --width/--height.
    Gen(GenArgs),
    /// Enumerate every memoryless policy tuple (small instances only).
    Oracle(OracleArgs),
}

#[derive(Args)]
struct Input {
    /// Agent model file.
    #[arg(long)]
    model: PathBuf,
    /// Specification file.
    #[arg(long)]
    spec: PathBuf,
    /// Memory bits per agent (0, 1 or 2).
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u32).range(0..=2))]
    mem: u32,
    /// HOA automaton replacing the built-in translation of the probability operator.
    #[arg(long)]
    hoa: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    input: Input,
    /// Time budget in seconds.
    #[arg(long, value_parser = positive_secs)]
    budget: Option<f64>,
    /// Node budget.
    #[arg(long)]
    max_nodes: Option<usize>,
    /// Optimality gap used for pruning.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Nodes analysed in parallel.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Per-node trace log.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Anytime curve as `seconds,value` rows.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Where to write the best tuple in policy-file format.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Policy file to start from as the first incumbent.
    #[arg(long)]
    warm: Option<PathBuf>,
    /// Memory bits of the --warm file (at most --mem).
    #[arg(long, default_value_t = 0)]
    warm_mem: u32,
    /// Skip coordinate-ascent polishing of incumbents.
    #[arg(long)]
    no_polish: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    input: Input,
    /// Policy tuple file.
    #[arg(long, conflicts_with = "uniform", required_unless_present = "uniform")]
    policy: Option<PathBuf>,
    /// Evaluate the uniform random tuple instead.
    #[arg(long)]
    uniform: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    input: Input,
    /// Output .dpomdp file.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    name: String,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    slip: Option<f64>,
    #[arg(long)]
    trap: Option<f64>,
    /// Cells as `x,y;x,y`.
    #[arg(long)]
    obstacles: Option<String>,
    /// Cell as `x,y`.
    #[arg(long)]
    target: Option<String>,
    /// Cells as `x,y;x,y`.
    #[arg(long)]
    starts: Option<String>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    input: Input,
    /// Refuse instances with more tuples than this.
    #[arg(long, default_value_t = 1_000_000)]
    limit: u64,
    #[arg(long)]
    policy: Option<PathBuf>,
}

fn positive_secs(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("`{s}` is not a positive number of seconds")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Check(a) => check(a),
        Command::ExportDecmdp(a) => export(a),
        Command::Gen(a) => gen(a),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

struct Loaded {
    model: Mdp,
    spec: HyperFormula,
    problem: Problem,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(input: &Input) -> Result<Loaded> {
    let model = parse_model(&read(&input.model)?).with_context(|| format!("in {}", input.model.display()))?;
    let spec = parse_spec(&read(&input.spec)?).with_context(|| format!("in {}", input.spec.display()))?;
    let hoa = match &input.hoa {
        Some(p) => Some(parse_hoa(&read(p)?).with_context(|| format!("in {}", p.display()))?),
        None => None,
    };
    let problem = Problem::new(&model, &spec, input.mem, hoa)?;
    Ok(Loaded { model, spec, problem })
}

/// Per policy variable, the action of every (unfolded) state in order;
/// with memory an entry is `[action, next memory]`.
fn policy_json(t: &PolicyTuple, l: &Loaded, mem: u32) -> Value {
    let bits = 1usize << mem;
    let mut out = Map::new();
    for (v, p) in t.policies.iter().enumerate() {
        let rows: Vec<Value> = (0..l.problem.agent.num_states())
            .map(|s| match p.get(s) {
                None => Value::Null,
                Some(a) if mem == 0 => json!(l.model.action_names()[a]),
                Some(a) => json!([l.model.action_names()[a / bits], a % bits]),
            })
            .collect();
        out.insert(l.spec.policy_vars[v].clone(), Value::Array(rows));
    }
    Value::Object(out)
}

/// One row per base state, one column per policy variable.
fn policy_table(t: &PolicyTuple, l: &Loaded, mem: u32) -> String {
    let bits = 1usize << mem;
    let names = &l.spec.policy_vars;
    let mut out = String::new();
    write!(out, "{:>8}", "state").unwrap();
    for n in names {
        write!(out, "  {n:>12}").unwrap();
    }
    out.push('\n');
    for s in 0..l.problem.agent.num_states() {
        let label = if mem == 0 { format!("{s}") } else { format!("{}:{}", s / bits, s % bits) };
        write!(out, "{label:>8}").unwrap();
        for p in &t.policies {
            let cell = match p.get(s) {
                Some(a) if mem == 0 => l.model.action_names()[a].clone(),
                Some(a) => format!("{}/{}", l.model.action_names()[a / bits], a % bits),
                None => "-".into(),
            };
            write!(out, "  {cell:>12}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn evaluation_json(e: &Evaluation) -> Value {
    json!({ "values": e.values, "satisfied": e.satisfied, "objective": e.objective })
}

fn emit_report(path: Option<&Path>, report: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    match path {
        Some(p) => write(p, &text),
        None => Ok(()),
    }
}

fn synth(a: SynthArgs) -> Result<u8> {
    let l = load(&a.input)?;
    let initial = match &a.warm {
        Some(p) => {
            if a.warm_mem > a.input.mem {
                bail!("--warm-mem {} exceeds --mem {}", a.warm_mem, a.input.mem);
            }
            let t = parse_tuple(&read(p)?, &l.model, a.warm_mem, &l.spec.policy_vars)
                .with_context(|| format!("in {}", p.display()))?;
            Some(widen_memory(&t, l.model.num_states(), a.warm_mem, a.input.mem))
        }
        None => None,
    };
    let opts = SynthesisOptions {
        memory_bits: a.input.mem,
        time_budget: a.budget.map(Duration::from_secs_f64),
        max_nodes: a.max_nodes,
        seed: a.seed,
        workers: a.workers.max(1),
        epsilon: a.eps,
        polish: !a.no_polish,
        initial,
        hoa: None,
    };
    let r = l.problem.run(&opts)?;
    let random = l.problem.evaluate_behaviours(&l.problem.uniform_behaviours())?;

    if let Some(p) = &a.trace {
        write(p, &(r.trace.join("\n") + "\n"))?;
    }
    if let Some(p) = &a.csv {
        let mut text = String::from("seconds,value\n");
        for (t, v) in &r.anytime {
            writeln!(text, "{t:.6},{v}").unwrap();
        }
        write(p, &text)?;
    }
    if let (Some(p), Some(t)) = (&a.policy, &r.best) {
        write(p, &write_tuple(t, &l.model, a.input.mem, &l.spec.policy_vars))?;
    }

    let report = json!({
        "command": "synth",
        "status": r.status.to_string(),
        "value": r.best_value,
        "upper_bound": r.upper_bound,
        "random_baseline": random.objective,
        "evaluation": r.evaluation.as_ref().map(evaluation_json),
        "memory_bits": a.input.mem,
        "seed": a.seed,
        "agent_states": r.stats.agent_states,
        "product_states": r.stats.product_states,
        "nodes": r.stats.nodes,
        "splits": r.stats.splits,
        "pruned": r.stats.pruned,
        "policy": r.best.as_ref().map(|t| policy_json(t, &l, a.input.mem)),
    });
    emit_report(a.input.report.as_deref(), &report)?;

    println!("status         {}", r.status);
    println!("value          {}", opt(r.best_value));
    println!("upper bound    {}", opt(r.upper_bound));
    println!("random         {}", opt(random.objective));
    println!("|D|            {:?}", r.stats.product_states);
    println!("nodes/splits   {}/{}", r.stats.nodes, r.stats.splits);
    println!("time           {:.3}s", r.stats.elapsed.as_secs_f64());
    if let Some(t) = r.stats.time_to_best {
        println!("time to best   {:.3}s", t.as_secs_f64());
    }
    if let Some(t) = &r.best {
        print!("\n{}", policy_table(t, &l, a.input.mem));
    }
    Ok(match (r.status, &r.best) {
        (Status::OptimumFound | Status::ThresholdSatisfied, _) => 0,
        (Status::Infeasible, _) => 2,
        (Status::BudgetExhausted, Some(_)) => 3,
        (Status::BudgetExhausted, None) => 4,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

fn check(a: CheckArgs) -> Result<u8> {
    let l = load(&a.input)?;
    let (e, source) = match &a.policy {
        Some(p) => {
            let t = parse_tuple(&read(p)?, &l.model, a.input.mem, &l.spec.policy_vars)
                .with_context(|| format!("in {}", p.display()))?;
            (l.problem.evaluate_policy_tuple(&t)?, p.display().to_string())
        }
        None => (l.problem.evaluate_behaviours(&l.problem.uniform_behaviours())?, "uniform".into()),
    };
    let report = json!({
        "command": "check",
        "policy": source,
        "memory_bits": a.input.mem,
        "evaluation": evaluation_json(&e),
    });
    emit_report(a.input.report.as_deref(), &report)?;
    println!("satisfied      {}", e.satisfied);
    println!("value          {}", opt(e.objective));
    for (i, row) in e.values.iter().enumerate() {
        println!("instance {i}     {row:?}");
    }
    Ok(0)
}

fn export(a: ExportArgs) -> Result<u8> {
    let l = load(&a.input)?;
    let text = export_dpomdp(&l.spec, &l.problem)?;
    write(&a.out, &text)?;
    println!("wrote {}", a.out.display());
    Ok(0)
}

fn cell(s: &str) -> Result<(usize, usize)> {
    let (x, y) = s.split_once(',').with_context(|| format!("expected `x,y`, found `{s}`"))?;
    Ok((x.trim().parse()?, y.trim().parse()?))
}

fn cells(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(';').filter(|c| !c.trim().is_empty()).map(cell).collect()
}

fn gen(a: GenArgs) -> Result<u8> {
    let mut g: GridParams = match preset(&a.name) {
        Ok(g) => g,
        Err(_) => {
            let kind: Kind = a.name.parse()?;
            let (Some(w), Some(h)) = (a.width, a.height) else {
                bail!("`{}` is not a preset; pass --width and --height", a.name);
            };
            GridParams::new(kind, w, h)
        }
    };
    if let Some(x) = a.slip {
        g.slip = x;
    }
    if let Some(x) = a.trap {
        g.trap = x;
    }
    if let Some(o) = &a.obstacles {
        g.obstacles = cells(o)?.into_iter().collect::<BTreeSet<_>>();
    }
    if let Some(t) = &a.target {
        g.target = cell(t)?;
    }
    if let Some(s) = &a.starts {
        g.starts = cells(s)?;
    }
    let b = gen_benchmark(&g)?;
    let name = b.name();
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let model = a.out.join(format!("{name}.mdp"));
    let spec = a.out.join(format!("{name}.hspec"));
    let meta = a.out.join(format!("{name}.json"));
    write(&model, &hypersynth::mdp::write_model(&b.model))?;
    write(&spec, &b.spec)?;
    write(&meta, &(serde_json::to_string_pretty(&b.metadata())? + "\n"))?;
    println!("wrote {} {} {}", model.display(), spec.display(), meta.display());
    Ok(0)
}

fn oracle(a: OracleArgs) -> Result<u8> {
    let l = load(&a.input)?;
    let r = brute_force(&l.problem, a.limit)?;
    if let (Some(p), Some((t, _))) = (&a.policy, &r.best) {
        write(p, &write_tuple(t, &l.model, a.input.mem, &l.spec.policy_vars))?;
    }
    let report = json!({
        "command": "oracle",
        "tuples": r.tuples,
        "value": r.best_value(),
        "evaluation": r.best.as_ref().map(|(_, e)| evaluation_json(e)),
        "memory_bits": a.input.mem,
        "policy": r.best.as_ref().map(|(t, _)| policy_json(t, &l, a.input.mem)),
    });
    emit_report(a.input.report.as_deref(), &report)?;
    println!("tuples         {}", r.tuples);
    println!("value          {}", opt(r.best_value()));
    match &r.best {
        Some((t, _)) => {
            print!("\n{}", policy_table(t, &l, a.input.mem));
            Ok(0)
        }
        None => {
            println!("no satisfying tuple");
            Ok(2)
        }
    }
}
