use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use memdse_core::archgen::{self, DesignPoint};
use memdse_core::cost::{self, CostReport};
use memdse_core::io::{self, Architecture, RunConfigDoc};
use memdse_core::mapping::{validate_mapping, MappingScheme, Schedule};
use memdse_core::tmg::{self, Objective, SearchStats, Strategy};
use memdse_core::{Error, LayerSpec};
use serde::Serialize;
use serde_json::{json, Value};

const RESULT_SCHEMA: &str = "memdse-result/1";
const ERROR_SCHEMA: &str = "memdse-error/1";
const METADATA_SCHEMA: &str = "memdse-metadata/1";

#[derive(Parser)]
#[command(name = "memdse", version, about = "Memory hierarchy and mapping exploration for DNN accelerators")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cost one fixed mapping on a fixed architecture.
    Evaluate(EvaluateArgs),
    /// Search the best temporal mapping on a fixed architecture.
    Schedule(ScheduleArgs),
    /// Generate memory hierarchies from a pool and map each layer on them.
    Explore(ExploreArgs),
    /// Reduce an exploration result to its energy/latency/area front.
    Pareto(ParetoArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory; without it the result is printed to stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Only run this layer of the workload.
    #[arg(long)]
    layer: Option<String>,
}

#[derive(Args)]
struct SearchFlags {
    /// Run configuration (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long)]
    beam: Option<usize>,
    /// Minimum utilization of shared memory levels.
    #[arg(long)]
    threshold: Option<f64>,
    /// Restrict to even blocking across operands sharing a level.
    #[arg(long)]
    even_only: bool,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    mapping: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    arch: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Area budget in um^2, overrides the config's `[archgen]` value.
    #[arg(long)]
    area_budget: Option<f64>,
    #[command(flatten)]
    search: SearchFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ParetoArgs {
    /// `result.json` written by `explore`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Exhaustive,
    Heuristic,
    Iterative,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Energy,
    Latency,
    Edp,
}

/// Exit codes: 1 internal or output failure, 2 usage (clap), 3 invalid input,
/// 4 nothing feasible.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Infeasible(_) => (4, "infeasible"),
            Error::Io { .. } => (3, "io"),
            Error::SimulationCap { .. } => (1, "internal"),
            _ => (3, "invalid_input"),
        };
        Failure { code, kind, message: e.to_string() }
    }
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: 3, kind: "invalid_input", message: message.into() }
    }

    fn infeasible(message: impl Into<String>) -> Self {
        Failure { code: 4, kind: "infeasible", message: message.into() }
    }

    fn output(path: &Path, e: std::io::Error) -> Self {
        Failure { code: 1, kind: "output", message: format!("cannot write {}: {e}", path.display()) }
    }
}

type CliResult<T> = Result<T, Failure>;

/// Files of one run, written only after the whole run succeeded.
struct Output {
    result: Value,
    extra: Vec<(String, String)>,
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let argv: Vec<String> = std::env::args().collect();
    let out_dir = match &cli.cmd {
        Command::Evaluate(a) => a.common.out.clone(),
        Command::Schedule(a) => a.common.out.clone(),
        Command::Explore(a) => a.common.out.clone(),
        Command::Pareto(a) => a.out.clone(),
    };
    let run = match cli.cmd {
        Command::Evaluate(a) => evaluate(a),
        Command::Schedule(a) => schedule(a),
        Command::Explore(a) => explore(a),
        Command::Pareto(a) => pareto(a),
    };
    let outcome = run.and_then(|o| emit(o, out_dir.as_deref(), &argv, started));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let record = json!({ "schema": ERROR_SCHEMA, "code": f.code, "kind": f.kind, "message": f.message });
            eprintln!("{record}");
            if let Some(dir) = &out_dir {
                let _ = fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("error.json"), pretty(&record)));
            }
            ExitCode::from(f.code)
        }
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("result serializes") + "\n"
}

fn emit(o: Output, dir: Option<&Path>, argv: &[String], started: Instant) -> CliResult<()> {
    let Some(dir) = dir else {
        print!("{}", pretty(&o.result));
        return Ok(());
    };
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Failure::output(&p, e))
    };
    fs::create_dir_all(dir).map_err(|e| Failure::output(dir, e))?;
    let _ = fs::remove_file(dir.join("error.json"));
    write("result.json", &pretty(&o.result))?;
    for (name, text) in &o.extra {
        write(name, text)?;
    }
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let meta = json!({
        "schema": METADATA_SCHEMA,
        "version": env!("CARGO_PKG_VERSION"),
        "unix_time": now.as_secs(),
        "wall_ms": started.elapsed().as_millis() as u64,
        "workers": o.workers.map(|w| if w == 0 { rayon::current_num_threads() } else { w }),
        "argv": argv,
    });
    write("metadata.json", &pretty(&meta))
}

fn select_layers(layers: Vec<LayerSpec>, only: &Option<String>) -> CliResult<Vec<LayerSpec>> {
    match only {
        None => Ok(layers),
        Some(name) => {
            let picked: Vec<_> = layers.into_iter().filter(|l| &l.name == name).collect();
            if picked.is_empty() {
                return Err(Failure::input(format!("no layer named `{name}` in the workload")));
            }
            Ok(picked)
        }
    }
}

fn file_name_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn resolve_config(f: &SearchFlags) -> CliResult<RunConfigDoc> {
    let mut doc = match &f.config {
        Some(p) => io::load_config(p)?,
        None => RunConfigDoc::default(),
    };
    let s = &mut doc.search;
    if let Some(v) = f.strategy {
        s.strategy = match v {
            StrategyArg::Exhaustive => Strategy::Exhaustive,
            StrategyArg::Heuristic => Strategy::Heuristic,
            StrategyArg::Iterative => Strategy::Iterative,
        };
    }
    if let Some(v) = f.objective {
        s.objective = match v {
            ObjectiveArg::Energy => Objective::Energy,
            ObjectiveArg::Latency => Objective::Latency,
            ObjectiveArg::Edp => Objective::Edp,
        };
    }
    if let Some(b) = f.beam {
        s.beam = b;
    }
    if let Some(t) = f.threshold {
        s.min_shared_utilization = t;
    }
    s.even_only |= f.even_only;
    s.to_config()?;
    Ok(doc)
}

fn with_workers<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Failure {
        code: 1,
        kind: "internal",
        message: e.to_string(),
    })?;
    Ok(pool.install(job))
}

#[derive(Serialize)]
struct LayerResult<'a> {
    layer: &'a str,
    mapping: String,
    schedule: &'a Schedule,
    report: &'a CostReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    stats: Option<&'a SearchStats>,
}

fn evaluate(a: EvaluateArgs) -> CliResult<Output> {
    let layers = select_layers(io::load_workload(&a.workload)?, &a.common.layer)?;
    if layers.len() != 1 {
        return Err(Failure::input("evaluate needs a single layer; pick one with --layer"));
    }
    let spec = &layers[0];
    let arch = io::load_arch(&a.arch)?;
    let text = io::read_file(&a.mapping)?;
    let scheme = MappingScheme::parse(&text).map_err(|e| Failure::input(format!("{}: {e}", a.mapping.display())))?;
    let sched = validate_mapping(&scheme, spec, &arch.hierarchy)
        .map_err(|errs| Failure::input(format!("{}: {}", a.mapping.display(), errs.join("; "))))?;
    let report = cost::evaluate(&sched, spec, &arch.hierarchy, &arch.mac)?;
    let res =
        LayerResult { layer: &spec.name, mapping: sched.to_text(), schedule: &sched, report: &report, stats: None };
    let csv = report.breakdown_csv();
    Ok(Output {
        result: json!({
            "schema": RESULT_SCHEMA,
            "command": "evaluate",
            "inputs": { "workload": [spec], "architecture": arch },
            "results": [res],
        }),
        extra: vec![("breakdown.csv".into(), csv)],
        workers: None,
    })
}

fn schedule(a: ScheduleArgs) -> CliResult<Output> {
    let layers = select_layers(io::load_workload(&a.workload)?, &a.common.layer)?;
    let Architecture { hierarchy, mac, spatial } = io::load_arch(&a.arch)?;
    let doc = resolve_config(&a.search)?;
    let cfg = doc.search.to_config()?;
    let outcomes = with_workers(a.search.workers, || {
        layers.iter().map(|l| tmg::search(l, &hierarchy, &spatial, &mac, &cfg)).collect::<Vec<_>>()
    })?;
    let mut results = Vec::new();
    let mut extra = Vec::new();
    for (l, o) in layers.iter().zip(outcomes) {
        let o = o.map_err(|e| match e {
            Error::Infeasible(m) => Failure::infeasible(format!("layer {}: {m}", l.name)),
            other => Failure::from(other),
        })?;
        let text = o.schedule.to_text();
        extra.push((format!("{}.map", file_name_safe(&l.name)), text.clone()));
        results.push(json!({
            "layer": l.name,
            "mapping": text,
            "schedule": o.schedule,
            "report": o.report,
            "stats": o.stats,
        }));
    }
    let arch = Architecture { hierarchy, mac, spatial };
    Ok(Output {
        result: json!({
            "schema": RESULT_SCHEMA,
            "command": "schedule",
            "config": doc,
            "inputs": { "workload": layers, "architecture": arch },
            "results": results,
        }),
        extra,
        workers: Some(a.search.workers),
    })
}

fn explore(a: ExploreArgs) -> CliResult<Output> {
    let layers = select_layers(io::load_workload(&a.workload)?, &a.common.layer)?;
    let pool = io::load_pool(&a.pool)?;
    let mut doc = resolve_config(&a.search)?;
    let gen = doc.archgen.as_mut().ok_or_else(|| Failure::input("explore needs an [archgen] section in --config"))?;
    if let Some(b) = a.area_budget {
        gen.area_budget_um2 = b;
    }
    let acfg = gen.to_config()?;
    let cfg = doc.search.to_config()?;
    let runs = with_workers(a.search.workers, || {
        layers.iter().map(|l| archgen::explore(&pool, l, &acfg, &cfg)).collect::<Vec<_>>()
    })?;
    let mut results = Vec::new();
    for (l, points) in layers.iter().zip(runs) {
        let points = points?;
        if points.is_empty() {
            return Err(Failure::infeasible(format!(
                "layer {}: no hierarchy within {} um^2 admits a valid mapping",
                l.name, acfg.area_budget_um2
            )));
        }
        results.push(json!({ "layer": l.name, "points": points }));
    }
    Ok(Output {
        result: json!({
            "schema": RESULT_SCHEMA,
            "command": "explore",
            "config": doc,
            "inputs": { "workload": layers, "pool": pool },
            "results": results,
        }),
        extra: Vec::new(),
        workers: Some(a.search.workers),
    })
}

fn pareto(a: ParetoArgs) -> CliResult<Output> {
    let text = io::read_file(&a.input)?;
    let bad = |m: String| Failure::input(format!("{}: {m}", a.input.display()));
    let mut v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if v["schema"] != RESULT_SCHEMA || v["command"] != "explore" {
        return Err(bad(format!("expected an explore result with schema `{RESULT_SCHEMA}`")));
    }
    let results = v["results"].as_array().ok_or_else(|| bad("missing `results`".into()))?;
    let mut fronts = Vec::new();
    let mut csv = String::from("layer,key,energy_pj,latency,area_um2,utilization\n");
    for r in results {
        let points: Vec<DesignPoint> = serde_json::from_value(r["points"].clone()).map_err(|e| bad(e.to_string()))?;
        let front = archgen::pareto(&points);
        let layer = r["layer"].as_str().unwrap_or_default();
        for p in &front {
            csv.push_str(&format!(
                "{layer},{},{},{},{},{}\n",
                p.key, p.energy_pj, p.latency, p.area_um2, p.utilization
            ));
        }
        fronts.push(json!({ "layer": layer, "points": front }));
    }
    v["command"] = json!("pareto");
    v["results"] = json!(fronts);
    Ok(Output { result: v, extra: vec![("pareto.csv".into(), csv)], workers: None })
}
