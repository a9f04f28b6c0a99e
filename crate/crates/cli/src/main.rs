use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use zomd::config::{ConfigError, RunConfig, DEFAULT_HORIZON};
use zomd::engine::{self, correlation, multi_seed, sublinearity_points, EngineError, MultiSeedReport};
use zomd::estimator::{log_log_slope, measure_bias};
use zomd::graph::{mixing_constants, validate_weight_matrix, GraphDocument, GraphSchedule};
use zomd::kernels::{check_moments, Kernel};
use zomd::problems::{FnProblem, NoiseModel};
use zomd::report::{self, Table};

#[derive(Parser)]
#[command(name = "zomd", version, about = "Online distributed zeroth-order mirror descent simulator")]
struct Cli {
    /// Seed for every random draw; overrides the config's `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for CSV files.
    #[arg(long, global = true, env = "ZOMD_OUT", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment and write metrics.csv and benchmark.csv.
    Run(RunArgs),
    /// The six-sensor tracking experiment: one seeded run plus a multi-seed quantile pass.
    ReproducePaper {
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: usize,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Certify a kernel's moment conditions.
    CheckKernel {
        /// `k3`, `legendre-<ell>` or comma-separated monomial coefficients.
        #[arg(long, default_value = "k3")]
        kernel: String,
        #[arg(long, default_value_t = 4.0)]
        eps: f64,
    },
    /// Monte-Carlo bias of the estimator for `f(x) = x^power`; writes bias.csv.
    BiasSweep {
        #[arg(long, default_value_t = 5)]
        power: i32,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        at: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1")]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value = "k3")]
        kernel: String,
        /// Oracle noise as JSON, e.g. `{"kind":"fisher-f","d1":3,"d2":5}`.
        #[arg(long)]
        noise: Option<String>,
    },
    /// Validate a graph schedule and print its mixing constants.
    CheckGraph {
        /// A run config or a bare graph document.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Lower bound on positive weights; overrides the document's `l`.
        #[arg(long)]
        l: Option<f64>,
    },
    /// Multi-seed quantiles of worst-agent average regret; writes quantiles.csv.
    Quantiles {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// `section.key=value`; the value is parsed as JSON, else taken as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Validate and print the resolved config without running.
    #[arg(long)]
    dry_run: bool,
}

enum Failure {
    Numeric(String),
    Config(String),
    Violation(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Numeric(_) | Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Violation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Numeric(m) | Failure::Config(m) | Failure::Violation(m) | Failure::Check(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Engine(e) => e.into(),
            e => Failure::Config(e.to_string()),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::ScheduleViolation { .. } => Failure::Violation(e.to_string()),
            EngineError::Config(_) => Failure::Config(e.to_string()),
            e => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<report::ReportError> for Failure {
    fn from(e: report::ReportError) -> Self {
        Failure::Numeric(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run(args) => run(cli, args),
        Command::ReproducePaper { horizon, seeds } => reproduce_paper(cli, *horizon, *seeds),
        Command::CheckKernel { kernel, eps } => check_kernel(kernel, *eps),
        Command::BiasSweep { power, at, gammas, samples, kernel, noise } => {
            bias_sweep(cli, *power, *at, gammas, *samples, kernel, noise.as_deref())
        }
        Command::CheckGraph { config, preset, l } => check_graph(config.as_deref(), preset.as_deref(), *l),
        Command::Quantiles { config, seeds } => quantiles(cli, config, *seeds),
    }
}

fn load_config(cli: &Cli, args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut config = RunConfig::from_json(&text, &args.overrides)?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Numeric(format!("cannot create {}: {e}", cli.out.display())))?;
    Ok(&cli.out)
}

fn write(dir: &Path, name: &str, table: &Table) -> Result<(), Failure> {
    table.write_file(&dir.join(name))?;
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

fn run(cli: &Cli, args: &RunArgs) -> Result<(), Failure> {
    let config = load_config(cli, &args.config)?;
    let built = config.build()?;
    if args.dry_run {
        let g = built.setup.gradient_bound();
        if let Some((t, alpha)) = built.setup.schedules.first_violation(g, config.run.horizon) {
            println!("note: alpha_t = {alpha} < 2G = {} from round {t}", 2.0 * g);
        }
        println!("{}", config.to_json_pretty());
        return Ok(());
    }
    let metrics = engine::run(&built.setup)?;
    let dir = out_dir(cli)?;
    write(dir, "metrics.csv", &report::metrics_table(&metrics))?;
    write(dir, "benchmark.csv", &report::benchmark_table(&metrics))?;
    if let Some(p) = &built.tracking {
        write(dir, "noise.csv", &report::noise_audit_table(p))?;
    }
    let t = metrics.horizon;
    println!(
        "T = {t}: worst R/T = {:.6e}, path variation = {:.6e}, clip rate = {:.4}",
        metrics.worst_regret_avg(t),
        metrics.path_variation(),
        metrics.clip_active.iter().flatten().filter(|c| **c).count() as f64
            / (t * metrics.agents) as f64
    );
    Ok(())
}

fn seed_list(base: u64, count: u64) -> Vec<u64> {
    (base..base + count).collect()
}

fn run_seeds(config: &RunConfig, seeds: &[u64]) -> Result<MultiSeedReport, Failure> {
    let report = multi_seed(
        |s| {
            config.build_with_seed(s).map(|b| b.setup).map_err(|e| match e {
                ConfigError::Engine(e) => e,
                e => EngineError::Config(e.to_string()),
            })
        },
        seeds,
    )?;
    Ok(report)
}

fn print_curve(report: &MultiSeedReport) {
    println!("checkpoint  q0.90  q0.95  q0.99");
    for (k, t) in report.checkpoints.iter().enumerate() {
        let q: Vec<f64> = engine::DELTAS.iter().map(|d| report.curve(*d)[k]).collect();
        println!("{t:>10}  {:.4e}  {:.4e}  {:.4e}", q[0], q[1], q[2]);
    }
}

fn reproduce_paper(cli: &Cli, horizon: usize, seeds: u64) -> Result<(), Failure> {
    let mut config = RunConfig::reproduce_paper(horizon);
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    let seeds = seed_list(config.run.seed, seeds);
    let report = run_seeds(&config, &seeds)?;
    let built = config.build()?;
    let tracking = built.tracking.as_ref().expect("sensor problem tracks a target");
    let metrics = &report.runs[0];

    let dir = out_dir(cli)?;
    write(dir, "trajectory.csv", &report::trajectory_table(metrics, tracking))?;
    write(dir, "regret_over_t.csv", &report::regret_over_t_table(metrics))?;
    write(dir, "metrics.csv", &report::metrics_table(metrics))?;
    write(dir, "benchmark.csv", &report::benchmark_table(metrics))?;
    write(dir, "noise.csv", &report::noise_audit_table(tracking))?;
    write(dir, "quantiles.csv", &report::quantiles_table(&report))?;
    print_curve(&report);

    let half = horizon / 2;
    let z: Vec<f64> = (half.max(1)..=horizon).map(|t| tracking.target(t)[0]).collect();
    let xbar: Vec<f64> = (half.max(1)..=horizon).map(|t| metrics.mean_state(t)[0]).collect();
    println!("tracking correlation over [T/2, T]: {:.4}", correlation(&z, &xbar));

    let points = sublinearity_points(horizon);
    let ok = report.runs.iter().filter(|r| r.regret_avg_decreasing_every_agent(&points)).count();
    let needed = (0.95 * report.runs.len() as f64).ceil() as usize;
    println!("sublinearity at {points:?}: {ok}/{} seeds decreasing for every agent", report.runs.len());
    if ok < needed {
        return Err(Failure::Check(format!("sublinearity holds for {ok} seeds, need {needed}")));
    }
    Ok(())
}

fn check_kernel(spec: &str, eps: f64) -> Result<(), Failure> {
    let kernel = Kernel::parse(spec).map_err(|e| Failure::Config(e.to_string()))?;
    let report = check_moments(&kernel, eps).map_err(|e| Failure::Check(e.to_string()))?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!("kernel {spec} violates its moment conditions")))
    }
}

fn bias_sweep(
    cli: &Cli,
    power: i32,
    at: f64,
    gammas: &[f64],
    samples: usize,
    kernel: &str,
    noise: Option<&str>,
) -> Result<(), Failure> {
    if power < 1 {
        return Err(Failure::Config(format!("power must be at least 1, got {power}")));
    }
    let kernel = Kernel::parse(kernel).map_err(|e| Failure::Config(e.to_string()))?;
    let noise: NoiseModel = match noise {
        Some(text) => serde_json::from_str(text).map_err(|e| Failure::Config(format!("bad noise: {e}")))?,
        None => NoiseModel::None,
    };
    let problem = FnProblem::monomial(power);
    let rows = measure_bias(&problem, &[at], gammas, &kernel, &noise, samples, cli.seed.unwrap_or(0))
        .map_err(|e| Failure::Config(e.to_string()))?;
    let dir = out_dir(cli)?;
    write(dir, "bias.csv", &report::bias_table(&rows))?;
    for r in &rows {
        println!(
            "gamma {:.4e}: bias {:+.6e} (stderr {:.3e})",
            r.gamma,
            r.bias()[0],
            r.stderr
        );
    }
    if rows.len() >= 2 {
        println!("log-log slope {:.4}", log_log_slope(&rows));
    }
    Ok(())
}

fn load_graph(config: Option<&Path>, preset: Option<&str>) -> Result<GraphDocument, Failure> {
    if let Some(path) = config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        if let Ok(doc) = serde_json::from_str::<GraphDocument>(&text) {
            return Ok(doc);
        }
        return Ok(RunConfig::from_json(&text, &[])?.graph);
    }
    match preset.unwrap_or("fig1") {
        "fig1" => Ok(GraphDocument::from_schedule(&GraphSchedule::fig1())),
        other => Err(Failure::Config(format!("unknown graph preset {other:?}; known: fig1"))),
    }
}

fn check_graph(config: Option<&Path>, preset: Option<&str>, l: Option<f64>) -> Result<(), Failure> {
    let schedule = load_graph(config, preset)?
        .into_schedule(l)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let mut failed = false;
    for (k, a) in schedule.matrices().iter().enumerate() {
        let violations = validate_weight_matrix(a);
        if violations.is_empty() {
            println!("matrix {k}: ok");
        }
        for v in violations {
            println!("matrix {k}: {v}");
            failed = true;
        }
    }
    let conn = schedule.check_uniform_connectivity();
    match conn.first_failing_window {
        None => println!("uniformly strongly connected with U = {}", schedule.window()),
        Some(k) => {
            println!("window starting at index {k} is not strongly connected (U = {})", schedule.window());
            failed = true;
        }
    }
    let mix = mixing_constants(schedule.n(), schedule.window(), schedule.l_bound())
        .map_err(|e| Failure::Config(e.to_string()))?;
    println!(
        "n = {}, U = {}, l = {}: C = {:.16e}, lambda = {:.16e}, ln lambda = {:.16e}",
        schedule.n(),
        schedule.window(),
        schedule.l_bound(),
        mix.c,
        mix.lambda,
        mix.ln_lambda
    );
    if failed {
        Err(Failure::Check("graph schedule is invalid".into()))
    } else {
        Ok(())
    }
}

fn quantiles(cli: &Cli, args: &ConfigArgs, seeds: u64) -> Result<(), Failure> {
    let config = load_config(cli, args)?;
    let report = run_seeds(&config, &seed_list(config.run.seed, seeds))?;
    let dir = out_dir(cli)?;
    write(dir, "quantiles.csv", &report::quantiles_table(&report))?;
    print_curve(&report);
    Ok(())
}
