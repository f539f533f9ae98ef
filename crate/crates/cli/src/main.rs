use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use wmsn_core::engine::{SimOutput, SimReport};
use wmsn_core::routing::{best_route, ProgressMode};
use wmsn_core::scenario::{self, Scenario, ScenarioError};
use wmsn_core::topology::{Network, StationId, StationKind};

/// Slotted FSO/RF wireless multimedia sensor network simulator.
#[derive(Parser)]
#[command(name = "wmsn-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics (and optionally the trace).
    Run(RunArgs),
    /// Print every discovered path between two stations.
    Route(RouteArgs),
    /// Run several scenarios and seeds concurrently.
    Sweep(SweepArgs),
    /// Check a scenario file and list every problem found.
    Validate(ScenarioArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Args)]
struct Overrides {
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use literal progress (closer to the sink than the source) in routing.
    #[arg(long)]
    literal_progress: bool,
    /// Extra faults to inject, as a TOML file with [[faults]] entries.
    #[arg(long)]
    faults: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write trace.jsonl.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Source station; defaults to every flow in the scenario.
    #[arg(long, requires = "dst")]
    src: Option<u32>,
    #[arg(long, requires = "src")]
    dst: Option<u32>,
    #[arg(long)]
    literal_progress: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario files; each runs once per seed.
    #[arg(long, required = true, num_args = 1..)]
    scenario: Vec<PathBuf>,
    /// Seeds to run.
    #[arg(long, num_args = 1.., default_values_t = [0u64])]
    seed: Vec<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    literal_progress: bool,
    #[arg(long)]
    faults: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load(path: &Path) -> Result<Scenario> {
    scenario::parse_scenario(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn apply(s: &mut Scenario, literal_progress: bool, faults: Option<&Path>) -> Result<()> {
    if literal_progress {
        s.routing.progress_mode = ProgressMode::Literal;
    }
    if let Some(p) = faults {
        let extra = scenario::parse_faults(&read(p)?).with_context(|| format!("in {}", p.display()))?;
        s.faults.extend(extra);
        let issues = s.validate();
        if !issues.is_empty() {
            return Err(ScenarioError::Invalid(issues)).with_context(|| format!("in {}", p.display()));
        }
    }
    Ok(())
}

const FLOW_COLUMNS: [&str; 9] = [
    "flow_id",
    "class",
    "generated",
    "delivered",
    "delivery_ratio",
    "mean_delay_ms",
    "max_delay_ms",
    "deadline_miss_rate",
    "loss_rate",
];
const STATION_COLUMNS: [&str; 6] = [
    "station_id",
    "tx_slots",
    "rx_slots",
    "idle_slots",
    "sleep_slots",
    "duty_cycle",
];

fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// One `flow` row per flow, then one `station` row per station; cells that
/// do not apply to a row kind are empty.
fn write_metrics(report: &SimReport, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let width = 1 + FLOW_COLUMNS.len() + STATION_COLUMNS.len();
    let mut header = vec!["row"];
    header.extend(FLOW_COLUMNS);
    header.extend(STATION_COLUMNS);
    w.write_record(&header)?;
    for f in &report.flows {
        let mut row = vec![
            "flow".to_string(),
            f.flow_id.to_string(),
            f.class.to_string(),
            f.generated.to_string(),
            f.delivered.to_string(),
            num(f.delivery_ratio),
            num(f.mean_delay_ms),
            num(f.max_delay_ms),
            num(f.deadline_miss_rate),
            num(f.loss_rate),
        ];
        row.resize(width, String::new());
        w.write_record(&row)?;
    }
    for s in &report.stations {
        let mut row = vec![String::from("station")];
        row.resize(1 + FLOW_COLUMNS.len(), String::new());
        row.extend([
            s.station_id.to_string(),
            s.tx_slots.to_string(),
            s.rx_slots.to_string(),
            s.idle_slots.to_string(),
            s.sleep_slots.to_string(),
            num(s.duty_cycle),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(out: &SimOutput, dir: &Path, trace: bool) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_metrics(&out.report, &dir.join("metrics.csv"))?;
    if trace {
        let p = dir.join("trace.jsonl");
        fs::write(&p, out.trace.to_jsonl()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn lemmas_passed(out: &SimOutput) -> bool {
    out.report.lemmas.as_ref().is_none_or(|l| l.all_passed())
}

fn cmd_run(a: &RunArgs) -> Result<ExitCode> {
    let mut s = load(&a.scenario)?;
    apply(&mut s, a.overrides.literal_progress, a.overrides.faults.as_deref())?;
    let seed = a.overrides.seed.unwrap_or(s.seed);
    let (_, out) = scenario::run_scenario(&s, seed)?;
    write_outputs(&out, &a.out, a.trace)?;
    print!("{}", out.report);
    if a.trace {
        println!("trace digest {}", out.trace.digest());
    }
    Ok(if lemmas_passed(&out) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn route_dump(net: &Network, s: &Scenario, src: StationId, dst: StationId) -> Result<()> {
    let entry = match net.station(src)?.kind {
        StationKind::SensorNode => match net.attachment(src)? {
            Some(ch) => {
                println!("sensor {src} attaches to cluster head {ch}");
                ch
            }
            None => {
                println!("sensor {src} has no cluster head in range\n0 paths found");
                return Ok(());
            }
        },
        _ => src,
    };
    let (scores, best) = best_route(net, entry, dst, &s.routing.options())?;
    println!("{} paths found", scores.len());
    for sc in &scores {
        let mark = if best.as_ref() == Some(&sc.path) { "*" } else { " " };
        let hops: Vec<String> = sc.path.hops().iter().map(|h| h.to_string()).collect();
        println!(
            "{mark} {} d_path {:.6}{}",
            hops.join(" -> "),
            sc.d_path,
            if mark == "*" { " (selected)" } else { "" }
        );
    }
    Ok(())
}

fn cmd_route(a: &RouteArgs) -> Result<ExitCode> {
    let mut s = load(&a.scenario)?;
    apply(&mut s, a.literal_progress, None)?;
    let net = s.network()?;
    let pairs: Vec<(Option<u32>, u32, u32)> = match (a.src, a.dst) {
        (Some(src), Some(dst)) => vec![(None, src, dst)],
        _ => s.flows.iter().map(|f| (Some(f.id), f.src, f.dst)).collect(),
    };
    if pairs.is_empty() {
        bail!("scenario has no flows; pass --src and --dst");
    }
    for (flow, src, dst) in pairs {
        match flow {
            Some(id) => println!("flow {id}: {src} -> {dst}"),
            None => println!("{src} -> {dst}"),
        }
        route_dump(&net, &s, StationId(src), StationId(dst))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: &SweepArgs) -> Result<ExitCode> {
    let mut jobs = Vec::new();
    for path in &a.scenario {
        let mut s = load(path)?;
        apply(&mut s, a.literal_progress, a.faults.as_deref())?;
        let stem = path
            .file_stem()
            .map(|x| x.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        for &seed in &a.seed {
            jobs.push((stem.clone(), s.clone(), seed));
        }
    }
    let results: Vec<Result<bool>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(stem, s, seed)| {
                scope.spawn(move || -> Result<bool> {
                    let (_, out) = scenario::run_scenario(s, *seed)?;
                    write_outputs(&out, &a.out.join(format!("{stem}-seed{seed}")), a.trace)?;
                    Ok(lemmas_passed(&out))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("worker panicked"))))
            .collect()
    });
    let mut violations = false;
    let mut failed = false;
    for ((stem, _, seed), r) in jobs.iter().zip(results) {
        match r {
            Ok(true) => println!("{stem} seed {seed}: ok"),
            Ok(false) => {
                violations = true;
                println!("{stem} seed {seed}: lemma audit failed");
            }
            Err(e) => {
                failed = true;
                println!("{stem} seed {seed}: error: {e:#}");
            }
        }
    }
    Ok(if failed {
        ExitCode::FAILURE
    } else if violations {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_validate(a: &ScenarioArgs) -> Result<ExitCode> {
    let s = load(&a.scenario)?;
    s.network()?;
    println!(
        "{}: ok ({} stations, {} flows, {} faults)",
        a.scenario.display(),
        s.stations.len(),
        s.flows.len(),
        s.faults.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Route(a) => cmd_route(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
