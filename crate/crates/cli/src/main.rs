use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use jumpdcaa::backtest::{backtest_periods, k_star_sweep, BacktestOptions, CalibrationPolicy, SweepRow};
use jumpdcaa::bound::{bound_coefficients, linearized_cvar_of_negative, lower_bound_mean};
use jumpdcaa::calibration::calibrate;
use jumpdcaa::checks::{additivity_battery, convex_order_battery, reference_market, CheckOutcome};
use jumpdcaa::config::{CalibrationTiming, RunConfig};
use jumpdcaa::io::{create_file, load_prices, write_json, write_json_file, write_ledger_csv, write_summary_csv};
use jumpdcaa::model::{MarketSpec, ModelParams};
use jumpdcaa::optimizer::{solve_with, C9Convention, SolverOptions};
use jumpdcaa::panel::PricePanel;
use jumpdcaa::risk::{clvar, cvar, var, EmpiricalSample};
use jumpdcaa::simulator::sample_terminal_wealth;
use jumpdcaa::stats::mean_and_std_error;
use jumpdcaa::{Error, Result};

const OUT_DIR_ENV: &str = "DCAA_OUT_DIR";

/// Dynamic allocation under a Merton jump-diffusion with a CLVaR floor.
///
/// Settings come from built-in defaults, then the --config file, then flags.
/// Output files go to --out-dir, else the config's out_dir, else $DCAA_OUT_DIR,
/// else the current directory.
#[derive(Parser, Debug)]
#[command(name = "jumpdcaa", version, arg_required_else_help = true)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate model parameters from a price file and print them as JSON.
    Calibrate(CalibrateArgs),
    /// Solve for the allocation at the current period and print the report.
    Optimize(OptimizeArgs),
    /// Simulate terminal wealth under a fixed allocation.
    Simulate(SimulateArgs),
    /// Replay the strategy on a price file for each stop-loss rate.
    Backtest(BacktestArgs),
    /// Run the convex-order and additivity batteries.
    BoundCheck(BoundCheckArgs),
}

#[derive(Args, Debug, Default)]
struct SourceArgs {
    /// Model parameters (JSON, as printed by `calibrate`).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Daily prices (CSV); calibrated unless --model is given.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Jump threshold multiplier for calibration.
    #[arg(long)]
    kappa: Option<f64>,
    /// Trailing trading days used for calibration.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct PlanArgs {
    #[arg(long)]
    tau: Option<usize>,
    /// Endowments, comma separated.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    p: Option<f64>,
    /// Stop-loss rates, comma separated.
    #[arg(long, value_delimiter = ',')]
    k_star: Option<Vec<f64>>,
    #[arg(long)]
    c0: Option<f64>,
    /// Risk-free rate per period.
    #[arg(long)]
    r: Option<f64>,
    /// Current period (1-based).
    #[arg(long)]
    l: Option<usize>,
    /// Wealth at the start of the current period.
    #[arg(long)]
    w_prev: Option<f64>,
    #[arg(long, value_enum)]
    c9: Option<C9Arg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum C9Arg {
    Derived,
    NoFutureSpan,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    r: Option<f64>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long, required = true)]
    seed: u64,
    #[arg(long)]
    paths: Option<usize>,
    /// Allocation, comma separated; defaults to the solver's answer.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct BacktestArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    plan: PlanArgs,
    /// First day of the first period (YYYY-MM-DD); defaults to the start of
    /// the last `tau` months in the file.
    #[arg(long)]
    start: Option<chrono::NaiveDate>,
    /// Earn interest on the cash position.
    #[arg(long)]
    cash_interest: bool,
    /// Re-calibrate at every period instead of once.
    #[arg(long)]
    rolling: bool,
}

#[derive(Args, Debug)]
struct BoundCheckArgs {
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

fn print_error(kind: &str, message: String) {
    let report = ErrorReport { error: ErrorBody { kind, message } };
    let _ = writeln!(std::io::stderr(), "{}", serde_json::to_string(&report).unwrap_or_default());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    ExitCode::from(2)
                }
                _ => {
                    print_error("usage", e.render().to_string().trim().to_string());
                    ExitCode::from(2)
                }
            };
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            print_error("config", e.to_string());
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            print_error(e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.out_dir {
        config.out_dir = Some(d.clone());
    }
    let out_dir = config
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    match cli.command {
        Command::Calibrate(args) => {
            if args.source.model.is_some() {
                return Err(Error::Config("calibrate estimates a model; --model does not apply".into()));
            }
            apply_source(&mut config, &args.source)?;
            if let Some(r) = args.r {
                config.calibration.get_or_insert_with(Default::default).r = r;
            }
            if config.calibration.is_none() {
                config.calibration = Some(Default::default());
            }
            config.model = None;
            config.validate()?;
            let panel = load_prices(config.prices.as_ref().expect("validated"))?;
            let params = calibrate(&panel, config.calibration.as_ref().expect("validated"))?;
            write_json(std::io::stdout().lock(), &MarketSpec::from(params))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Optimize(args) => {
            apply_source(&mut config, &args.source)?;
            apply_plan(&mut config, &args.plan);
            let params = resolve_params(&mut config)?;
            let plan = config.plan.plan(params.r())?;
            let report = solve_with(&params, &plan, solver_options(&config))?;
            write_json(std::io::stdout().lock(), &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(args) => {
            apply_source(&mut config, &args.source)?;
            apply_plan(&mut config, &args.plan);
            config.simulation.seed = Some(args.seed);
            if let Some(n) = args.paths {
                config.simulation.paths = n;
            }
            if let Some(x) = args.x {
                config.simulation.x = Some(x);
            }
            let params = resolve_params(&mut config)?;
            simulate(&config, &params, args.seed, &out_dir)
        }
        Command::Backtest(args) => {
            apply_source(&mut config, &args.source)?;
            apply_plan(&mut config, &args.plan);
            if args.start.is_some() {
                config.backtest.start = args.start;
            }
            config.backtest.cash_interest |= args.cash_interest;
            if args.rolling {
                config.backtest.calibration_timing = CalibrationTiming::Rolling;
            }
            backtest(&config, &out_dir)
        }
        Command::BoundCheck(args) => bound_check(args),
    }
}

fn apply_source(config: &mut RunConfig, source: &SourceArgs) -> Result<()> {
    if let Some(m) = &source.model {
        config.model = Some(read_model(m)?);
        config.calibration = None;
    }
    if let Some(p) = &source.prices {
        config.prices = Some(p.clone());
    }
    if source.kappa.is_some() || source.window.is_some() {
        let c = config.calibration.get_or_insert_with(Default::default);
        if let Some(k) = source.kappa {
            c.jump_threshold_multiplier = k;
        }
        if source.window.is_some() {
            c.window = source.window;
        }
    }
    Ok(())
}

fn apply_plan(config: &mut RunConfig, a: &PlanArgs) {
    let plan = &mut config.plan;
    if let Some(t) = a.tau {
        plan.tau = t;
    }
    if let Some(v) = &a.alpha {
        plan.alpha = Some(v.clone());
    }
    if let Some(p) = a.p {
        plan.p = p;
    }
    if let Some(k) = &a.k_star {
        plan.k_star = k.clone();
    }
    if let Some(c) = a.c0 {
        plan.c0 = c;
    }
    if a.r.is_some() {
        plan.r = a.r;
    }
    if let Some(l) = a.l {
        plan.l = l;
    }
    if a.w_prev.is_some() {
        plan.w_prev = a.w_prev;
    }
    if let Some(c) = a.c9 {
        plan.c9 = match c {
            C9Arg::Derived => C9Convention::Derived,
            C9Arg::NoFutureSpan => C9Convention::NoFutureSpan,
        };
    }
}

fn solver_options(config: &RunConfig) -> SolverOptions {
    SolverOptions { c9: config.plan.c9 }
}

/// Model from --model, the config's model, or a calibration of the price file.
fn resolve_params(config: &mut RunConfig) -> Result<ModelParams> {
    if config.model.is_none() && config.calibration.is_none() && config.prices.is_some() {
        config.calibration = Some(Default::default());
    }
    config.validate()?;
    let params = match (&config.model, &config.calibration) {
        (Some(spec), _) => ModelParams::new(spec.clone())?,
        (None, Some(cal)) => calibrate(&load_prices(config.prices.as_ref().expect("validated"))?, cal)?,
        (None, None) => unreachable!("validated"),
    };
    match config.plan.r {
        Some(r) => params.with_rate(r),
        None => Ok(params),
    }
}

fn read_model(path: &Path) -> Result<MarketSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SimulationSummary {
    paths: usize,
    seed: u64,
    x: Vec<f64>,
    mean_terminal_wealth: f64,
    std_error: f64,
    lower_bound_mean: f64,
    ruined_paths: usize,
    paths_csv: PathBuf,
    risk_csv: PathBuf,
}

fn simulate(config: &RunConfig, params: &ModelParams, seed: u64, out_dir: &Path) -> Result<ExitCode> {
    let plan = config.plan.plan(params.r())?;
    let x = match &config.simulation.x {
        Some(x) => x.clone(),
        None => solve_with(params, &plan, solver_options(config))?.allocation.x,
    };
    let n = config.simulation.paths;
    if n == 0 {
        return Err(Error::Config("paths must be positive".into()));
    }
    let paths = sample_terminal_wealth(params, &plan, &x, n, seed)?;
    std::fs::create_dir_all(out_dir)?;

    let paths_csv = out_dir.join("paths.csv");
    let mut w = csv_writer(&paths_csv)?;
    let mut header = vec!["path".to_string(), "terminal_wealth".into(), "lambda_std".into(), "ruined".into()];
    header.extend((plan.l..=plan.tau).map(|t| format!("y_{t}")));
    w.write_record(&header).map_err(Error::from)?;
    for (i, p) in paths.iter().enumerate() {
        let mut rec = vec![i.to_string(), p.terminal_wealth.to_string(), p.lambda_std.to_string(), p.ruined.to_string()];
        rec.extend(p.y.iter().map(|y| y.to_string()));
        w.write_record(&rec).map_err(Error::from)?;
    }
    w.flush()?;

    let wealth: Vec<f64> = paths.iter().map(|p| p.terminal_wealth).collect();
    let (mean, se) = mean_and_std_error(&wealth);
    let sample = EmpiricalSample::new(wealth)?;
    let coeffs = bound_coefficients(params, &plan, &x)?;
    let risk_csv = out_dir.join("risk.csv");
    let mut w = csv_writer(&risk_csv)?;
    w.write_record(["measure", "p", "value"]).map_err(Error::from)?;
    let p = plan.p;
    let rows: Vec<(&str, f64, Result<f64>)> = vec![
        ("mean", f64::NAN, Ok(mean)),
        ("std_error", f64::NAN, Ok(se)),
        ("var", p, var(&sample, p)),
        ("clvar", p, clvar(&sample, p)),
        ("cvar_of_negative", 1.0 - p, cvar(&sample.negated(), 1.0 - p)),
        ("lower_bound_mean", f64::NAN, Ok(lower_bound_mean(&coeffs))),
        ("linearized_bound_cvar_of_negative", 1.0 - p, Ok(linearized_cvar_of_negative(&coeffs))),
    ];
    for (name, level, value) in rows {
        let level = if level.is_nan() { String::new() } else { level.to_string() };
        let value = match value {
            Ok(v) => v.to_string(),
            Err(_) => String::new(),
        };
        w.write_record([name.to_string(), level, value]).map_err(Error::from)?;
    }
    w.flush()?;

    let summary = SimulationSummary {
        paths: n,
        seed,
        x,
        mean_terminal_wealth: mean,
        std_error: se,
        lower_bound_mean: lower_bound_mean(&coeffs),
        ruined_paths: paths.iter().filter(|p| p.ruined).count(),
        paths_csv,
        risk_csv,
    };
    write_json(std::io::stdout().lock(), &summary)?;
    Ok(ExitCode::SUCCESS)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_writer(create_file(path)?))
}

/// Start of the last `tau` calendar months in the panel.
fn default_start(panel: &PricePanel, tau: usize) -> Option<chrono::NaiveDate> {
    let months = panel.monthly_periods();
    months.len().checked_sub(tau).map(|i| months[i].first_date)
}

#[derive(Serialize)]
struct BacktestSummary {
    tickers: Vec<String>,
    start: Option<chrono::NaiveDate>,
    rows: Vec<SweepRow>,
}

fn backtest(config: &RunConfig, out_dir: &Path) -> Result<ExitCode> {
    if config.model.is_some() && config.calibration.is_some() {
        return Err(Error::Config("give either model or calibration, not both".into()));
    }
    let fixed = config.model.clone().map(ModelParams::new).transpose()?;
    let prices = config
        .prices
        .clone()
        .ok_or_else(|| Error::Config("backtest needs a prices file".into()))?;
    let panel = load_prices(&prices)?;
    let tau = config.plan.tau;
    let start = config.backtest.start.or_else(|| default_start(&panel, tau));
    backtest_periods(&panel, start, tau)?;

    let policy = match fixed {
        Some(p) => {
            let p = match config.plan.r {
                Some(r) => p.with_rate(r)?,
                None => p,
            };
            CalibrationPolicy::Fixed(p)
        }
        None => {
            let mut cal = config.calibration.clone().unwrap_or_default();
            if let Some(r) = config.plan.r {
                cal.r = r;
            }
            cal.validate()?;
            match config.backtest.calibration_timing {
                CalibrationTiming::Fixed => CalibrationPolicy::FixedWindow(cal),
                CalibrationTiming::Rolling => CalibrationPolicy::Rolling(cal),
            }
        }
    };
    let r = match &policy {
        CalibrationPolicy::Fixed(p) => p.r(),
        CalibrationPolicy::FixedWindow(c) | CalibrationPolicy::Rolling(c) => c.r,
    };
    let plan = config.plan.plan_for(0.0, r)?;
    let options = BacktestOptions {
        start,
        cash_interest: config.backtest.cash_interest,
        solver: solver_options(config),
    };
    let ledgers = k_star_sweep(&panel, &policy, &plan, r, &config.plan.k_star, &options)?;

    std::fs::create_dir_all(out_dir)?;
    for ledger in &ledgers {
        let stem = format!("ledger_k{}", ledger.k_star);
        write_ledger_csv(create_file(out_dir.join(format!("{stem}.csv")))?, ledger)?;
        write_json_file(out_dir.join(format!("{stem}.json")), ledger)?;
    }
    let rows: Vec<SweepRow> = ledgers.iter().map(SweepRow::from).collect();
    write_summary_csv(create_file(out_dir.join("summary.csv"))?, &rows, tau)?;
    let summary = BacktestSummary { tickers: panel.tickers().to_vec(), start, rows };
    write_json_file(out_dir.join("summary.json"), &summary)?;
    write_summary_csv(std::io::stdout().lock(), &summary.rows, tau)?;
    Ok(ExitCode::SUCCESS)
}

fn bound_check(args: BoundCheckArgs) -> Result<ExitCode> {
    let params = reference_market(0.3, 0.2)?;
    let plan = jumpdcaa::bound::InvestmentPlan::new(6, vec![1.0; 6], 0.05, 1.0)?;
    let convex = convex_order_battery(&params, &plan, &[0.5, 0.3], args.paths, args.seed, 11)?;
    let additive = additivity_battery(10_000, &[0.05, 0.5, 0.95], 1e-9)?;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "convex order: mc mean {} (se {}), bound mean {}",
        convex.mc_mean, convex.mc_std_error, convex.bound_mean
    )?;
    let all: Vec<&CheckOutcome> = convex.outcomes.iter().chain(&additive).collect();
    for o in &all {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{verdict} {} statistic={} tolerance={}", o.name, o.statistic, o.tolerance)?;
    }
    let failed = all.iter().filter(|o| !o.passed).count();
    writeln!(out, "{} checks, {failed} failed", all.len())?;
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
