use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use distsa::harness::{self, ConfigDocument, ExperimentResults, PlotAxis};
use distsa::network::{build_topology, TopologyKind, WeightRule};
use distsa::rates::{self, PlannerReport, RoundsPolicy, SystemRates};
use distsa::{fmt_sig17, Error};

const EXIT_RUNTIME: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;

/// Distributed stochastic approximation simulator and rate planner.
#[derive(Debug, Parser)]
#[command(name = "distsa", version)]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate the rate model over a range of mini-batch sizes.
    Plan(PlanArgs),
    /// Run one experiment config.
    Run(RunArgs),
    /// Run a config once per value of one parameter and merge the curves.
    Sweep(SweepArgs),
    /// Render an SVG from a results CSV.
    Plot(PlotArgs),
    /// Build a topology and report its spectral quantities.
    Topo(TopoArgs),
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Read rates and N from a config's [rates] and [topology] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Streaming rate R_s (samples/s).
    #[arg(long)]
    streaming: Option<f64>,
    /// Per-node processing rate R_p (samples/s).
    #[arg(long)]
    processing: Option<f64>,
    /// Messaging rate R_c (rounds/s).
    #[arg(long)]
    messaging: Option<f64>,
    /// Number of nodes N.
    #[arg(long)]
    nodes: Option<usize>,
    /// Mini-batch sizes to tabulate; default is a log grid of multiples of N.
    #[arg(long, value_delimiter = ',')]
    minibatch: Vec<usize>,
    /// Fix R instead of using the largest feasible round count.
    #[arg(long)]
    rounds: Option<usize>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Override a config value, e.g. `--set algorithms.dmb.B=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Apply the named `[scales.*]` overrides before `--set`.
    #[arg(long)]
    scale: Option<String>,
    /// Worker threads for trials; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for default file names.
    #[arg(long, env = "DISTSA_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// CSV path; default `<out-dir>/<name>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-trial values to this CSV.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Also render an SVG to `<out-dir>/<name>.svg`.
    #[arg(long)]
    svg: bool,
    /// SVG path; implies `--svg`.
    #[arg(long)]
    svg_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// `B`, `mu`, `N`, `R`, `c` (stepsize constant) or a dotted config key.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum XAxis {
    TPrime,
    T,
    SimSeconds,
}

impl From<XAxis> for PlotAxis {
    fn from(x: XAxis) -> Self {
        match x {
            XAxis::TPrime => PlotAxis::TPrime,
            XAxis::T => PlotAxis::T,
            XAxis::SimSeconds => PlotAxis::SimSeconds,
        }
    }
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Aggregated results CSV.
    csv: PathBuf,
    /// Metric to plot; default is the first one in the CSV.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long, value_enum, default_value = "t-prime")]
    x: XAxis,
    #[arg(long)]
    title: Option<String>,
    /// SVG path; default is the CSV path with an `.svg` extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TopoKindArg {
    Star,
    Ring,
    Complete,
    KRegular,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightArg {
    Metropolis,
    Uniform,
}

#[derive(Debug, Args)]
struct TopoArgs {
    #[arg(long, value_enum)]
    kind: TopoKindArg,
    #[arg(long)]
    nodes: usize,
    /// Degree for k-regular graphs.
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "metropolis")]
    weights: WeightArg,
    /// Write the mixing matrix as CSV.
    #[arg(long)]
    matrix: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Infeasible(_) => EXIT_DATA,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let quiet = cli.quiet;
    let result = match cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Run(args) => cmd_run(args, quiet),
        Command::Sweep(args) => cmd_sweep(args, quiet),
        Command::Plot(args) => cmd_plot(args),
        Command::Topo(args) => cmd_topo(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_plan(args: PlanArgs) -> Result<u8, Failure> {
    let (mut rs, mut rp, mut rc, mut n) = (None, None, None, None);
    if let Some(path) = &args.config {
        let cfg = ConfigDocument::load(path)?.build()?;
        rs = Some(cfg.rates.streaming);
        rp = Some(cfg.rates.processing);
        n = cfg.topology.as_ref().map(|t| t.nodes);
        rc = args.nodes.or(n).map(|n| cfg.rates.messaging_rate(n));
    }
    let rs = args.streaming.or(rs).ok_or_else(|| Failure::usage("--streaming is required"))?;
    let rp = args.processing.or(rp).ok_or_else(|| Failure::usage("--processing is required"))?;
    let rc = args.messaging.or(rc).ok_or_else(|| Failure::usage("--messaging is required"))?;
    let n = args.nodes.or(n).ok_or_else(|| Failure::usage("--nodes is required"))?;
    let template = SystemRates::new(rs, rp, rc, n, n, 1).map_err(|e| Failure::usage(e.to_string()))?;
    let grid = if args.minibatch.is_empty() {
        rates::default_minibatch_grid(n)
    } else {
        args.minibatch.clone()
    };
    let policy = args.rounds.map_or(RoundsPolicy::MaxRounds, RoundsPolicy::Fixed);
    let rows = rates::rate_ratio_sweep(&template, &grid, policy).map_err(|e| Failure::usage(e.to_string()))?;

    println!("N = {n}, R_s = {rs}, R_p = {rp}, R_c = {rc}, rho = {:.6}", template.mismatch());
    println!(
        "{:>8} {:>6} {:>6} {:>14} {:>12} {:>8} {:>9}",
        "B", "R", "R_max", "R_e", "R_s/R_e", "mu", "feasible"
    );
    for r in &rows {
        println!(
            "{:>8} {:>6} {:>6} {:>14.4} {:>12.4} {:>8} {:>9}",
            r.minibatch, r.rounds, r.max_rounds, r.effective_rate, r.rate_ratio, r.discarded, r.feasible
        );
    }
    if let Some(path) = &args.csv {
        write_plan_csv(&rows, path)?;
    }
    Ok(if rows.iter().any(|r| r.feasible) { 0 } else { EXIT_INFEASIBLE })
}

fn write_plan_csv(rows: &[PlannerReport], path: &Path) -> Result<(), Failure> {
    let mut text = PlannerReport::CSV_HEADER.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_record().join(","));
        text.push('\n');
    }
    Ok(harness::write_atomic(path, text.as_bytes())?)
}

fn load_document(args: &ExperimentArgs) -> Result<ConfigDocument, Failure> {
    let mut doc = ConfigDocument::load(&args.config).map_err(|e| match e {
        Error::Io { .. } => Failure::usage(e.to_string()),
        other => other.into(),
    })?;
    if let Some(scale) = &args.scale {
        doc.apply_scale(scale)?;
    }
    for o in &args.overrides {
        doc.set_assignment(o)?;
    }
    Ok(doc)
}

fn write_outputs(args: &ExperimentArgs, doc: &ConfigDocument, results: &ExperimentResults, quiet: bool) -> Result<(), Failure> {
    let name = &results.experiment;
    let csv_path = args.out.clone().unwrap_or_else(|| args.out_dir.join(format!("{name}.csv")));
    if let Some(dir) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure {
            code: EXIT_RUNTIME,
            message: format!("{}: {e}", dir.display()),
        })?;
    }
    harness::write_csv(results, &csv_path)?;
    if !quiet {
        eprintln!("wrote {}", csv_path.display());
    }
    if let Some(raw) = &args.raw {
        harness::write_raw_csv(results, raw)?;
    }
    if args.svg || args.svg_out.is_some() {
        let svg_path = args.svg_out.clone().unwrap_or_else(|| args.out_dir.join(format!("{name}.svg")));
        let plot = doc.build()?.plot;
        let metric = plot.as_ref().map_or_else(|| results.metrics[0].clone(), |p| p.metric.clone());
        let axis = plot.as_ref().map_or(PlotAxis::TPrime, |p| p.x);
        let title = plot.as_ref().and_then(|p| p.title.clone());
        harness::write_svg(results, &metric, axis, title.as_deref(), &svg_path)?;
        if !quiet {
            eprintln!("wrote {}", svg_path.display());
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs, quiet: bool) -> Result<u8, Failure> {
    let doc = load_document(&args.exp)?;
    let config = doc.build()?;
    if !quiet {
        eprintln!(
            "running {} ({} trials, {} algorithms)",
            config.name,
            config.trials,
            config.algorithms.len()
        );
    }
    let results = harness::run_experiment(config, args.exp.workers)?;
    write_outputs(&args.exp, &doc, &results, quiet)?;
    Ok(0)
}

fn cmd_sweep(args: SweepArgs, quiet: bool) -> Result<u8, Failure> {
    let doc = load_document(&args.exp)?;
    doc.build()?;
    let values: Vec<_> = args.values.iter().map(|v| harness::parse_value(v.trim())).collect();
    if !quiet {
        eprintln!("sweeping {} over {} values", args.axis, values.len());
    }
    let results = harness::run_sweep(&doc, &args.axis, &values, args.exp.workers)?;
    write_outputs(&args.exp, &doc, &results, quiet)?;
    if !quiet {
        for (id, value, mean) in harness::best_by_axis(&results, &results.metrics[0])? {
            eprintln!("best {} for {id}: {value} (final mean {})", args.axis, fmt_sig17(mean));
        }
    }
    Ok(0)
}

fn cmd_plot(args: PlotArgs) -> Result<u8, Failure> {
    let results = harness::read_results_csv(&args.csv)?;
    let metric = args.metric.unwrap_or_else(|| results.metrics[0].clone());
    let out = args.out.unwrap_or_else(|| args.csv.with_extension("svg"));
    harness::write_svg(&results, &metric, args.x.into(), args.title.as_deref(), out)?;
    Ok(0)
}

fn cmd_topo(args: TopoArgs) -> Result<u8, Failure> {
    let kind = match args.kind {
        TopoKindArg::Star => TopologyKind::Star,
        TopoKindArg::Ring => TopologyKind::Ring,
        TopoKindArg::Complete => TopologyKind::Complete,
        TopoKindArg::KRegular => TopologyKind::KRegularRandom,
    };
    let rule = match args.weights {
        WeightArg::Metropolis => WeightRule::Metropolis,
        WeightArg::Uniform => WeightRule::Uniform,
    };
    let net = build_topology(kind, args.nodes, args.degree, args.seed, rule).map_err(|e| match e {
        Error::InvalidParameter(_) => Failure::usage(e.to_string()),
        other => other.into(),
    })?;
    println!("nodes {}", net.nodes());
    println!("edges {}", net.edges().len());
    println!("lambda2 {}", fmt_sig17(net.lambda2()));
    if let Some(path) = &args.matrix {
        harness::write_atomic(path, net.weights_csv().as_bytes())?;
    }
    Ok(0)
}
