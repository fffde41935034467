use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use stage_lookup::engine::{EngineConfig, Strategy};
use stage_lookup::epoch::ReclaimMode;
use stage_lookup::path::VfsPath;
use stage_lookup::pivot::{DEFAULT_COMPONENTS, DEFAULT_POOL_SIZE};
use stage_lookup::workload::{
    self, bench_depth, gen_tree, read_trace, render_table, replay, synth_trace, to_csv, write_trace,
    BenchConfig, Event, Model, Op, ReplayConfig, Replayer, Run, StressConfig, SynthParams,
    TickMode, TreeSpec, WorkloadError,
};
use stage_lookup::Tree;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Invariant(_) => 4,
        }
    }

    fn workload(path: &Path, e: WorkloadError) -> Self {
        match e {
            WorkloadError::Io(source) => CliError::Io {
                path: path.to_owned(),
                source,
            },
            other => CliError::Config(format!("{}: {other}", path.display())),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Path lookup model: component-wise walk, full-path cache and pivot-based
/// two-stage lookup, driven by generated trees and traces.
#[derive(Debug, Parser)]
#[command(name = "stagelookup", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a tree spec (JSON) and the canonical dump of the tree it produces.
    GenTree(GenTreeArgs),
    /// Synthesize a JSON Lines trace against a generated tree.
    Synth(SynthArgs),
    /// Replay a trace with one strategy; prints a table and writes CSV.
    Replay(ReplayArgs),
    /// Replay the same trace with several strategies side by side.
    Compare(CompareArgs),
    /// Sweep Stage Two length against pool size on depth-8 paths.
    BenchDepth(BenchArgs),
}

#[derive(Debug, Args)]
struct GenTreeArgs {
    /// Directory fanout per level, comma separated. Defaults to the 4-level
    /// fanout-10 preset below a single top-level directory.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    files_per_dir: usize,
    #[arg(long, default_value_t = 4096)]
    file_size_min: u64,
    #[arg(long, default_value_t = 4096)]
    file_size_max: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the tree spec JSON.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the tree dump. Defaults to `<out>.dump`.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TreeArg {
    /// Tree spec JSON. Defaults to the 10,000+ node preset.
    #[arg(long)]
    tree: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    tree: TreeArg,
    /// uniform, hotdir-zipf or replay-like.
    #[arg(long, default_value = "hotdir-zipf")]
    model: String,
    #[arg(long, default_value_t = 10_000)]
    events: usize,
    #[arg(long, default_value_t = 0.0)]
    rename_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    chmod_fraction: f64,
    #[arg(long, default_value_t = 8)]
    hot_dirs: usize,
    #[arg(long, default_value_t = 1.0)]
    zipf_exponent: f64,
    #[arg(long, default_value_t = 0.5)]
    open_fraction: f64,
    /// Events per burst for replay-like traces.
    #[arg(long, default_value_t = 256)]
    burst_len: usize,
    #[arg(long, default_value_t = 4000)]
    gap_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output trace (JSON Lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EngineArgs {
    /// Number of pivots per pool.
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pool_size: usize,
    /// Components per pivot head block.
    #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
    components: usize,
    /// Heat margin a newcomer needs over the least popular candidate.
    #[arg(long, default_value_t = 4)]
    heat_threshold: u64,
    /// Candidate set capacity.
    #[arg(long, default_value_t = 64)]
    heat_capacity: usize,
    /// Pool update period, applied to trace timestamps.
    #[arg(long, default_value_t = 2000)]
    period_ms: u64,
    /// Rebuild pools after every N events instead of by timestamp.
    #[arg(long)]
    manual_tick: Option<usize>,
    /// Resolve every path once and build a pool before replaying.
    #[arg(long)]
    warm: bool,
}

impl EngineArgs {
    fn engine_config(&self, strategy: Strategy) -> Result<EngineConfig, CliError> {
        if self.components == 0 {
            return Err(CliError::Config("--components must be at least 1".into()));
        }
        if self.period_ms == 0 {
            return Err(CliError::Config("--period-ms must be positive".into()));
        }
        if self.heat_capacity == 0 {
            return Err(CliError::Config("--heat-capacity must be at least 1".into()));
        }
        if self.manual_tick == Some(0) {
            return Err(CliError::Config("--manual-tick must be positive".into()));
        }
        let mut c = EngineConfig::new(strategy);
        c.pool_size = self.pool_size;
        c.components = self.components;
        c.heat_threshold = self.heat_threshold;
        c.heat_capacity = self.heat_capacity;
        c.period = Duration::from_millis(self.period_ms);
        Ok(c)
    }

    fn replay_config(&self, strategy: Strategy) -> Result<ReplayConfig, CliError> {
        let mut r = ReplayConfig::new(self.engine_config(strategy)?);
        r.ticks = match self.manual_tick {
            Some(n) => TickMode::Every(n),
            None => TickMode::Timestamps,
        };
        Ok(r)
    }
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[command(flatten)]
    tree: TreeArg,
    /// Trace file (JSON Lines).
    #[arg(long)]
    trace: PathBuf,
    /// original, fullpath or stage.
    #[arg(long, default_value = "stage")]
    strategy: String,
    #[command(flatten)]
    engine: EngineArgs,
    /// Metrics CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the concurrent soak instead: N lookup workers over the trace's
    /// paths, a pool manager and a renaming mutator.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Pool updates to run in soak mode.
    #[arg(long, default_value_t = 1000)]
    ticks: usize,
    /// Cadence of soak pool updates.
    #[arg(long, default_value_t = 1)]
    tick_interval_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    tree: TreeArg,
    #[arg(long)]
    trace: PathBuf,
    /// Strategies to run, comma separated; the first is the ratio baseline.
    #[arg(long, value_delimiter = ',', default_value = "original,fullpath,stage")]
    strategy: Vec<String>,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Pool sizes to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pool_size: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
    components: usize,
    /// Path depth of the lookup target.
    #[arg(long, default_value_t = 8)]
    depth: usize,
    /// Timed repetitions per cell.
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTree(a) => cmd_gen_tree(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Compare(a) => cmd_compare(a),
        Command::BenchDepth(a) => cmd_bench_depth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stagelookup: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    s.parse().map_err(|e| CliError::Config(format!("{e}")))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn load_spec(arg: &TreeArg) -> Result<TreeSpec, CliError> {
    match &arg.tree {
        None => Ok(TreeSpec::preset()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }
}

fn load_tree(arg: &TreeArg) -> Result<Tree, CliError> {
    let spec = load_spec(arg)?;
    gen_tree(&spec).map_err(|e| CliError::Config(e.to_string()))
}

fn load_trace(path: &Path) -> Result<Vec<Event>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_trace(BufReader::new(file)).map_err(|e| CliError::workload(path, e))
}

fn cmd_gen_tree(a: GenTreeArgs) -> Result<(), CliError> {
    let spec = TreeSpec {
        levels: a.levels.unwrap_or_else(|| TreeSpec::preset().levels),
        files_per_dir: a.files_per_dir,
        file_size_range: (a.file_size_min, a.file_size_max),
        seed: a.seed,
    };
    let tree = gen_tree(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    let json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    write_file(&a.out, &(json + "\n"))?;
    let dump = a.dump.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".dump");
        p.into()
    });
    write_file(&dump, &tree.dump())?;
    println!("{} dentries, spec {}, dump {}", tree.len(), a.out.display(), dump.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let model: Model = a.model.parse().map_err(CliError::Config)?;
    for (name, f) in [
        ("--rename-fraction", a.rename_fraction),
        ("--chmod-fraction", a.chmod_fraction),
        ("--open-fraction", a.open_fraction),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Config(format!("{name} must be within [0, 1]")));
        }
    }
    if a.rename_fraction + a.chmod_fraction > 1.0 {
        return Err(CliError::Config("mutation fractions exceed 1".into()));
    }
    if a.hot_dirs == 0 || a.zipf_exponent <= 0.0 {
        return Err(CliError::Config("--hot-dirs and --zipf-exponent must be positive".into()));
    }
    let tree = load_tree(&a.tree)?;
    let params = SynthParams {
        model,
        events: a.events,
        rename_fraction: a.rename_fraction,
        chmod_fraction: a.chmod_fraction,
        hot_dirs: a.hot_dirs,
        zipf_exponent: a.zipf_exponent,
        open_fraction: a.open_fraction,
        step_ms: 1,
        burst_len: a.burst_len.max(1),
        gap_ms: a.gap_ms,
    };
    let events = synth_trace(&tree, &params, a.seed);
    let file = File::create(&a.out).map_err(io_err(&a.out))?;
    let mut w = BufWriter::new(file);
    write_trace(&mut w, &events).map_err(|e| CliError::workload(&a.out, e))?;
    w.flush().map_err(io_err(&a.out))?;
    println!("{} events, model {model}, trace {}", events.len(), a.out.display());
    Ok(())
}

fn run_one(tree: Tree, events: &[Event], engine: &EngineArgs, strategy: Strategy) -> Result<Run, CliError> {
    let config = engine.replay_config(strategy)?;
    let outcome = if engine.warm {
        let mut r = Replayer::new(tree, config);
        r.warm();
        r.run(events);
        r.finish()
    } else {
        replay(tree, events, config)
    };
    let m = &outcome.metrics;
    eprintln!(
        "{strategy}: wall lookup {:?}, mutation {:?}, manager {:?}",
        m.wall.lookup, m.wall.mutation, m.wall.manager
    );
    Ok(Run::new(strategy.as_str(), m.snapshot()))
}

fn emit(runs: &[Run], out: Option<&Path>) -> Result<(), CliError> {
    print!("{}", render_table(runs));
    if let Some(path) = out {
        write_file(path, &to_csv(runs))?;
    }
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<(), CliError> {
    let strategy = parse_strategy(&a.strategy)?;
    a.engine.engine_config(strategy)?;
    let events = load_trace(&a.trace)?;
    let tree = load_tree(&a.tree)?;
    if a.workers > 0 {
        return soak(tree, &events, &a);
    }
    let run = run_one(tree, &events, &a.engine, strategy)?;
    emit(&[run], a.out.as_deref())
}

fn soak(tree: Tree, events: &[Event], a: &ReplayArgs) -> Result<(), CliError> {
    let mut targets: Vec<VfsPath> = events
        .iter()
        .filter(|e| matches!(e.op, Op::Stat | Op::Open))
        .map(|e| e.path.clone())
        .collect();
    targets.sort();
    targets.dedup();
    let mut dirs: Vec<VfsPath> = targets
        .iter()
        .flat_map(|p| {
            let mut ancestors = Vec::new();
            let mut cur = p.parent();
            while let Some(d) = cur.filter(|d| !d.is_root()) {
                cur = d.parent();
                ancestors.push(d);
            }
            ancestors
        })
        .collect();
    dirs.sort();
    dirs.dedup();

    let mut engine = a.engine.engine_config(Strategy::Stage)?;
    engine.reclaim = ReclaimMode::Quarantine;
    engine.audit = true;
    let config = StressConfig {
        readers: a.workers,
        ticks: a.ticks,
        tick_interval: Duration::from_millis(a.tick_interval_ms),
        seed: a.seed,
        engine,
        ..StressConfig::default()
    };
    let report = workload::run_stress(tree, &targets, &dirs, &config);
    println!(
        "ticks {} (published {}, suppressed {}), lookups {}, pivot hits {}, selections audited {}, \
         pool checks {}, renames {}, pools reclaimed {}, elapsed {:?}",
        report.ticks,
        report.published,
        report.suppressed,
        report.lookups,
        report.pivot_hits,
        report.selections_audited,
        report.pool_verifications,
        report.mutations,
        report.reclaimed,
        report.elapsed
    );
    if report.is_clean() {
        Ok(())
    } else {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        Err(CliError::Invariant(format!(
            "{} violations in soak",
            report.violations.len()
        )))
    }
}

fn cmd_compare(a: CompareArgs) -> Result<(), CliError> {
    let strategies = a
        .strategy
        .iter()
        .map(|s| parse_strategy(s))
        .collect::<Result<Vec<_>, _>>()?;
    if strategies.is_empty() {
        return Err(CliError::Config("no strategies given".into()));
    }
    let events = load_trace(&a.trace)?;
    let spec = load_spec(&a.tree)?;
    let mut runs = Vec::new();
    for s in strategies {
        let tree = gen_tree(&spec).map_err(|e| CliError::Config(e.to_string()))?;
        runs.push(run_one(tree, &events, &a.engine, s)?);
    }
    emit(&runs, a.out.as_deref())
}

fn cmd_bench_depth(a: BenchArgs) -> Result<(), CliError> {
    if a.components == 0 || a.depth == 0 {
        return Err(CliError::Config("--components and --depth must be at least 1".into()));
    }
    let grid = bench_depth(&BenchConfig {
        depth: a.depth,
        pool_sizes: a.pool_size,
        components: a.components,
        reps: a.reps,
    });
    for c in &grid.cells {
        if c.pool_size > 0 && c.walked != c.stage_two {
            return Err(CliError::Invariant(format!(
                "pool {} stage-two {}: walked {}",
                c.pool_size, c.stage_two, c.walked
            )));
        }
    }
    print!("{}", grid.render_table());
    if let Some(path) = &a.out {
        write_file(path, &grid.to_csv())?;
    }
    Ok(())
}
