//! The `tcdual` command line.
//!
//! Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 an
//! infeasibility verdict (no consistent price system, wealth below `x₀`,
//! frictionless arbitrage in a shadow market).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cps::{check_cps, CpsVerdict, PriceSystem};
use crate::duality::{compute_x0, solve_dual, solve_report, SolveConfig, SolveReport};
use crate::engine::SolverOptions;
use crate::error::{Error, Result};
use crate::generator::{generate_instance, InstanceGenerator};
use crate::pricing::{price, PriceReport, Route};
use crate::shadow::{analyze_shadow, write_shadow_csv, ShadowAnalysis};
use crate::trading::write_strategy_csv;
use crate::tree::{load_market, MarketSpec};
use crate::utility::UtilitySpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "FD_SEED";

#[derive(Debug, Parser)]
#[command(name = "tcdual", version, about = "Utility maximization with proportional transaction costs on event trees")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// Format of the summary written to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Barrier duality-gap tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Newton step cap per solve.
    #[arg(long, global = true)]
    pub max_newton: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct MarketArgs {
    /// Market JSON file.
    #[arg(long)]
    pub market: PathBuf,
    /// Drop the random endowment.
    #[arg(long)]
    pub no_endowment: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide whether a strictly consistent price system exists.
    CheckCps {
        #[arg(long)]
        market: PathBuf,
        /// Spreads to check instead of the market's own λ.
        #[arg(long, value_delimiter = ',')]
        mu_grid: Vec<f64>,
        /// Witness CSV, or certificate CSV when none exists.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Solve primal and dual and verify the identities linking them.
    Solve {
        #[command(flatten)]
        market: MarketArgs,
        #[arg(long)]
        utility: UtilitySpec,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        /// Skip the finite-difference identity checks.
        #[arg(long)]
        no_identities: bool,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Optimal strategy CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate the dual value function at one `y`.
    Dual {
        #[command(flatten)]
        market: MarketArgs,
        #[arg(long)]
        utility: UtilitySpec,
        #[arg(long)]
        y: f64,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Minimizing price system CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Construct and verify the shadow price of the optimal solution.
    Shadow {
        #[command(flatten)]
        market: MarketArgs,
        #[arg(long)]
        utility: UtilitySpec,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Per-node shadow price CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Exponential indifference price of the endowment.
    Price {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, value_delimiter = ',', default_value = "primal,dual,shadow")]
        routes: Vec<String>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Wealth threshold `x₀` for utilities on `(0, ∞)`.
    Xmin {
        #[command(flatten)]
        market: MarketArgs,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate random markets.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub min_periods: usize,
    #[arg(long, default_value_t = 4)]
    pub max_periods: usize,
    #[arg(long, default_value_t = 2)]
    pub min_branching: usize,
    #[arg(long, default_value_t = 3)]
    pub max_branching: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 0.2)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub vol_min: f64,
    #[arg(long, default_value_t = 0.3)]
    pub vol_max: f64,
    #[arg(long, default_value_t = 0.0)]
    pub endowment_min: f64,
    #[arg(long, default_value_t = 5.0)]
    pub endowment_max: f64,
    /// Keep draws without a consistent price system.
    #[arg(long)]
    pub keep_infeasible: bool,
    /// Output file for one market, directory for several; stdout if absent
    /// and `--count 1`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl GenArgs {
    pub fn generator(&self, seed: u64) -> InstanceGenerator {
        InstanceGenerator {
            seed,
            periods: (self.min_periods, self.max_periods),
            branching: (self.min_branching, self.max_branching),
            volatility: (self.vol_min, self.vol_max),
            lambda: (self.lambda_min, self.lambda_max),
            endowment: (self.endowment_min, self.endowment_max),
            discard_infeasible: !self.keep_infeasible,
            ..InstanceGenerator::default()
        }
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Domain(_)
        | Error::Unsupported(_) => EXIT_VALIDATION,
        Error::Engine(_) | Error::Bracketing(_) | Error::UndefinedShadow(_) => EXIT_SOLVER,
        Error::NoConsistentPrice { .. } | Error::BelowThreshold { .. } | Error::FrictionlessArbitrage(_) => {
            EXIT_INFEASIBLE
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                writeln!(err, "{}", text.lines().next().unwrap_or("error: invalid arguments"))
            };
            return code;
        }
    };
    match execute(&config, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", single_line(&e.to_string()));
            exit_code(&e)
        }
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn options(config: &RunConfig) -> Result<SolverOptions> {
    let mut o = SolverOptions::default();
    if let Some(t) = config.tol {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!("--tol must lie in (0, 1), got {t}")));
        }
        o.tol = t;
    }
    if let Some(n) = config.max_newton {
        if n == 0 {
            return Err(Error::Domain("--max-newton must be positive".into()));
        }
        o.max_newton = n;
    }
    Ok(o)
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("--{name} must be finite, got {v}")))
    }
}

fn load(args: &MarketArgs) -> Result<MarketSpec> {
    let m = load_market(&args.market)?;
    Ok(if args.no_endowment { m.without_endowment() } else { m })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn execute(config: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let opts = options(config)?;
    match &config.command {
        Command::CheckCps { market, mu_grid, csv, json } => {
            let m = load_market(market)?;
            let mus = if mu_grid.is_empty() { vec![m.lambda()] } else { mu_grid.clone() };
            let mut verdicts = Vec::new();
            for &mu in &mus {
                let v = check_cps(&m, mu)?;
                if config.format == Format::Table {
                    let word = if v.exists() { "exists" } else { "does not exist" };
                    writeln!(out, "lambda={mu} verdict: {word} (slack {:.6e})", v.slack())?;
                }
                verdicts.push((mu, v));
            }
            let (_, last) = verdicts.last().expect("at least one spread");
            if let Some(path) = csv {
                let mm = m.with_lambda(mus[mus.len() - 1])?;
                write_verdict_csv(&mm, last, File::create(path)?)?;
            }
            if config.format == Format::Csv {
                let mm = m.with_lambda(mus[mus.len() - 1])?;
                write_verdict_csv(&mm, last, &mut *out)?;
            }
            let records: Vec<_> = verdicts.iter().map(|(mu, v)| CpsRecord { lambda: *mu, verdict: v }).collect();
            if let Some(path) = json {
                write_json(path, &records)?;
            }
            if config.format == Format::Json {
                emit_json(out, &records)?;
            }
            Ok(if verdicts.iter().all(|(_, v)| v.exists()) { EXIT_OK } else { EXIT_INFEASIBLE })
        }
        Command::Solve { market, utility, x, no_identities, json, csv } => {
            let m = load(market)?;
            let cfg = SolveConfig {
                options: opts,
                identities: !no_identities,
                include_endowment: !market.no_endowment,
                ..SolveConfig::default()
            };
            let report = solve_report(&m, utility, finite("x", *x)?, &cfg)?;
            if let Some(path) = json {
                write_json(path, &report)?;
            }
            if let Some(path) = csv {
                write_strategy_csv(&m, &report.strategy, File::create(path)?)?;
            }
            match config.format {
                Format::Table => print_solve(out, &report)?,
                Format::Json => emit_json(out, &report)?,
                Format::Csv => write_strategy_csv(&m, &report.strategy, &mut *out)?,
            }
            Ok(EXIT_OK)
        }
        Command::Dual { market, utility, y, json, csv } => {
            let m = load(market)?;
            let d = solve_dual(&m, utility, finite("y", *y)?, &opts)?;
            if let Some(path) = json {
                write_json(path, &d)?;
            }
            if let Some(path) = csv {
                write_price_system_csv(&d.price_system, File::create(path)?)?;
            }
            match config.format {
                Format::Table => {
                    writeln!(out, "utility   {utility}")?;
                    writeln!(out, "y         {}", d.y)?;
                    writeln!(out, "v(y)      {:.12e}", d.v)?;
                    writeln!(out, "v'(y)     {:.12e}", d.v_prime)?;
                    print_diagnostics(out, "dual", &d.diagnostics)?;
                }
                Format::Json => emit_json(out, &d)?,
                Format::Csv => write_price_system_csv(&d.price_system, &mut *out)?,
            }
            Ok(EXIT_OK)
        }
        Command::Shadow { market, utility, x, json, csv } => {
            let m = load(market)?;
            let cfg = SolveConfig {
                options: opts,
                identities: false,
                include_endowment: !market.no_endowment,
                ..SolveConfig::default()
            };
            let report = solve_report(&m, utility, finite("x", *x)?, &cfg)?;
            let analysis = analyze_shadow(&m, utility, &report, &opts)?;
            let record = ShadowRecord { u: report.u, y_hat: report.y_hat, v_hat: report.v_hat, analysis: &analysis };
            if let Some(path) = json {
                write_json(path, &record)?;
            }
            if let Some(path) = csv {
                write_shadow_csv(&m, &report, &analysis, File::create(path)?)?;
            }
            match config.format {
                Format::Table => print_shadow(out, &report, &analysis)?,
                Format::Json => emit_json(out, &record)?,
                Format::Csv => write_shadow_csv(&m, &report, &analysis, &mut *out)?,
            }
            Ok(EXIT_OK)
        }
        Command::Price { market, gamma, x, routes, json } => {
            let m = load_market(market)?;
            let routes = routes.iter().map(|r| Route::parse(r)).collect::<Result<Vec<_>>>()?;
            if routes.is_empty() {
                return Err(Error::Domain("--routes must name at least one route".into()));
            }
            let report = price(&m, finite("gamma", *gamma)?, finite("x", *x)?, &routes, &opts)?;
            if let Some(path) = json {
                write_json(path, &report)?;
            }
            match config.format {
                Format::Table => print_price(out, &report)?,
                Format::Json => emit_json(out, &report)?,
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(&mut *out);
                    w.write_record(["route", "p"])?;
                    for (r, p) in [(Route::Primal, report.p_primal), (Route::Dual, report.p_dual), (Route::Shadow, report.p_shadow)] {
                        if let Some(p) = p {
                            w.write_record([r.as_str().to_string(), p.to_string()])?;
                        }
                    }
                    w.flush()?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Xmin { market, json } => {
            let m = load(market)?;
            let x0 = compute_x0(&m)?;
            let record = XminRecord { x0 };
            if let Some(path) = json {
                write_json(path, &record)?;
            }
            match config.format {
                Format::Json => emit_json(out, &record)?,
                _ => writeln!(out, "x0 {x0}")?,
            }
            Ok(EXIT_OK)
        }
        Command::Gen(args) => generate(args, out),
    }
}

#[derive(Serialize)]
struct CpsRecord<'a> {
    lambda: f64,
    #[serde(flatten)]
    verdict: &'a CpsVerdict,
}

#[derive(Serialize)]
struct ShadowRecord<'a> {
    u: f64,
    y_hat: f64,
    v_hat: f64,
    #[serde(flatten)]
    analysis: &'a ShadowAnalysis,
}

#[derive(Serialize)]
struct XminRecord {
    x0: f64,
}

/// `node_id,Z0,Z1,Stilde`.
pub fn write_price_system_csv<W: Write>(z: &PriceSystem, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "Z0", "Z1", "Stilde"])?;
    for v in 0..z.z0.len() {
        let s = z.stilde(v).map(|s| s.to_string()).unwrap_or_default();
        w.write_record([v.to_string(), z.z0[v].to_string(), z.z1[v].to_string(), s])?;
    }
    w.flush()?;
    Ok(())
}

/// Witness CSV when a price system exists, else `node_id,buy,sell,claim`
/// for the arbitrage certificate (claim only on leaves).
pub fn write_verdict_csv<W: Write>(market: &MarketSpec, verdict: &CpsVerdict, out: W) -> Result<()> {
    match verdict {
        CpsVerdict::Exists { witness, .. } => write_price_system_csv(witness, out),
        CpsVerdict::NotExist { certificate, .. } => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["node_id", "buy", "sell", "claim"])?;
            if let Some(c) = certificate {
                let tree = market.tree();
                for v in 0..tree.len() {
                    let claim = tree.leaf_index(v).map(|k| c.claim[k].to_string()).unwrap_or_default();
                    w.write_record([v.to_string(), c.trades[v].buy.to_string(), c.trades[v].sell.to_string(), claim])?;
                }
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn print_diagnostics(out: &mut dyn Write, label: &str, d: &crate::engine::SolveDiagnostics) -> Result<()> {
    writeln!(
        out,
        "{label:<9} newton {} (phase I {}), stages {}, kkt {:.2e}",
        d.newton_steps,
        d.phase1_steps,
        d.barrier_path.len(),
        d.kkt.max()
    )?;
    Ok(())
}

fn print_solve(out: &mut dyn Write, r: &SolveReport) -> Result<()> {
    writeln!(out, "utility        {}", r.utility)?;
    writeln!(out, "x              {}", r.x)?;
    writeln!(out, "lambda         {}", r.lambda)?;
    writeln!(out, "u(x)           {:.12e}", r.u)?;
    writeln!(out, "y_hat          {:.12e}", r.y_hat)?;
    writeln!(out, "v(y_hat)       {:.12e}", r.v_hat)?;
    writeln!(out, "gap            {:.3e} (relative {:.3e})", r.gap, r.relative_gap)?;
    if let (Some(v), Some(y)) = (r.joint_value, r.joint_y) {
        writeln!(out, "joint          value {v:.12e}, y {y:.12e}")?;
    }
    writeln!(out, "v'(y)+x        {:.3e} after {} evaluations", r.derivative_residual, r.y_evaluations)?;
    writeln!(
        out,
        "admissible     {} (worst liquidation value {:.6e} at node {})",
        r.admissibility.admissible, r.admissibility.worst_value, r.admissibility.worst_node
    )?;
    if let Some(t) = &r.identities {
        writeln!(out, "identity (b)   max per-leaf wealth residual {:.3e} (scaled)", t.max_scaled_wealth_residual)?;
        writeln!(out, "               leaves off support {:?}", t.off_support)?;
        writeln!(out, "identity (c)   {:.3e}", t.marginal_utility)?;
        writeln!(out, "identity (d)   {:.3e}", t.wealth_weighted_marginal)?;
        writeln!(out, "u'(x) fd       {:.12e} (|u' - y_hat| {:.3e})", t.u_prime, t.u_prime_vs_y)?;
    }
    print_diagnostics(out, "primal", &r.primal_diagnostics)?;
    print_diagnostics(out, "dual", &r.dual_diagnostics)?;
    Ok(())
}

fn print_shadow(out: &mut dyn Write, r: &SolveReport, a: &ShadowAnalysis) -> Result<()> {
    let v = &a.verification;
    writeln!(out, "u(x)                 {:.12e}", r.u)?;
    writeln!(out, "u(x; Shat)           {:.12e}", a.frictionless.u)?;
    writeln!(out, "value gap            {:.3e}", v.value_gap)?;
    writeln!(out, "dual gap             {:.3e}", v.dual_gap)?;
    writeln!(out, "direction violations {}", v.direction_violations.len())?;
    writeln!(out, "unchecked nodes      {:?}", v.unchecked_nodes)?;
    match (&v.strategy_gap, &v.strategy_check_skipped) {
        (Some(g), _) => writeln!(out, "strategy gap         {g:.3e}")?,
        (None, Some(why)) => writeln!(out, "strategy gap         skipped: {why}")?,
        _ => {}
    }
    writeln!(out, "roundtrip            {:.3e} (polytope violation {:.3e})", a.roundtrip.difference, a.roundtrip.polytope_violation)?;
    writeln!(out, "sandwich violation   {:.3e}", v.sandwich_violation)?;
    Ok(())
}

fn print_price(out: &mut dyn Write, r: &PriceReport) -> Result<()> {
    writeln!(out, "gamma        {}", r.gamma)?;
    writeln!(out, "x            {}", r.x)?;
    for (name, p) in [("p_primal", r.p_primal), ("p_dual", r.p_dual), ("p_shadow", r.p_shadow)] {
        if let Some(p) = p {
            writeln!(out, "{name:<12} {p:.12e}")?;
        }
    }
    for res in &r.residuals {
        writeln!(out, "|{} - {}| {:.3e}", res.a.as_str(), res.b.as_str(), res.difference)?;
    }
    if let Some(t) = r.translation_residual {
        writeln!(out, "shift x+7    {t:.3e}")?;
    }
    if let Some(d) = &r.dual {
        writeln!(out, "E[Z ln Z]    endowed {:.6e}, plain {:.6e}", d.entropy_endowed, d.entropy_plain)?;
    }
    writeln!(out, "bounds       [{:.6e}, {:.6e}] within {}", r.lower_bound, r.upper_bound, r.within_bounds)?;
    Ok(())
}

fn generate(args: &GenArgs, out: &mut dyn Write) -> Result<i32> {
    let seed = match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse::<u64>().map_err(|_| Error::Domain(format!("{SEED_ENV} must be an integer, got '{s}'")))?,
        Err(_) => args.seed,
    };
    if args.count == 0 || args.jobs == 0 {
        return Err(Error::Domain("--count and --jobs must be positive".into()));
    }
    args.generator(seed).validate()?;
    let seeds: Vec<u64> = (0..args.count as u64).map(|i| seed.wrapping_add(i)).collect();
    let markets = generate_parallel(args, &seeds)?;
    match (&args.out, args.count) {
        (None, 1) => write!(out, "{}", markets[0].to_json())?,
        (None, _) => return Err(Error::Domain("--out DIR is required with --count > 1".into())),
        (Some(path), 1) if path.extension().is_some_and(|e| e == "json") => markets[0].save(path)?,
        (Some(dir), _) => {
            std::fs::create_dir_all(dir)?;
            for (s, m) in seeds.iter().zip(&markets) {
                m.save(dir.join(format!("market_{s}.json")))?;
            }
            writeln!(out, "wrote {} markets to {}", markets.len(), dir.display())?;
        }
    }
    Ok(EXIT_OK)
}

/// Generation split over `jobs` threads; results keep seed order.
fn generate_parallel(args: &GenArgs, seeds: &[u64]) -> Result<Vec<MarketSpec>> {
    let jobs = args.jobs.min(seeds.len());
    let chunk = seeds.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&s| generate_instance(&args.generator(s))).collect::<Vec<_>>()))
            .collect();
        let mut all = Vec::with_capacity(seeds.len());
        for h in handles {
            for r in h.join().expect("generator thread panicked") {
                all.push(r?);
            }
        }
        Ok(all)
    })
}
