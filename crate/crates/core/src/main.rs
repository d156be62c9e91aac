//! Command-line surface. Every command is a thin adapter: parse flags, call
//! the library, render the result. No numeric logic lives here.
//!
//! Exit codes: 0 success, 1 parse error, 2 infeasible or otherwise unusable
//! design, 3 blinding violation, 4 runtime or search failure.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ancova_sizer::ancova::{fit_ancova, read_trial_csv, test_superiority};
use ancova_sizer::design::{
    check_feasibility, r_squared_from_covariance, Allocation, CovarianceInput, DesignSpec,
};
use ancova_sizer::mc::{figure_row, read_batch, run_batch, write_batch_csv, write_figure_csv};
use ancova_sizer::recalc::{read_interim_csv, run_recalc, RecalcConfig};
use ancova_sizer::sizing::plan_all;
use ancova_sizer::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ancova-sizer",
    version,
    about = "Sample-size planning for two-arm superiority trials analyzed by ANCOVA",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check whether a covariance specification can back a trial design.
    Check(CheckArgs),
    /// Compute the four sizing formulas for a fixed design.
    Plan(PlanArgs),
    /// Run the covariate-adjusted analysis on trial data.
    Analyze(AnalyzeArgs),
    /// Blinded sample-size recalculation from interim data.
    Recalc(RecalcArgs),
    /// Run a batch of Monte Carlo scenarios.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Args)]
struct CheckArgs {
    /// Covariance specification file (JSON; explicit blocks or {"cs": ...}).
    #[arg(long, value_name = "FILE")]
    cov: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct PlanArgs {
    /// Clinically relevant difference of adjusted means.
    #[arg(long, allow_negative_numbers = true)]
    delta: f64,
    /// Two-sided significance level.
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    alpha: f64,
    /// Target power 1 - beta.
    #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
    power: f64,
    /// Allocation ratio n2:n1.
    #[arg(long, default_value = "1:1")]
    gamma: String,
    /// Covariance specification file; supplies sigma2, R², and c.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["sigma2", "r2", "covariates"])]
    cov: Option<PathBuf>,
    /// Outcome variance (with --r2 and -c instead of --cov).
    #[arg(long, requires = "r2", allow_negative_numbers = true)]
    sigma2: Option<f64>,
    /// Squared multiple correlation between outcome and covariates.
    #[arg(long, requires = "sigma2", allow_negative_numbers = true)]
    r2: Option<f64>,
    /// Number of covariates.
    #[arg(short = 'c', long = "covariates", default_value_t = 0)]
    covariates: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trial data CSV with header group,y,z1,...,zc.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Two-sided significance level.
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct RecalcArgs {
    /// Interim data CSV with header y,z1,...,zc (no group column).
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Clinically relevant difference of adjusted means.
    #[arg(long, allow_negative_numbers = true)]
    delta: f64,
    /// Two-sided significance level.
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    alpha: f64,
    /// Target power 1 - beta.
    #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
    power: f64,
    /// Allocation ratio n2:n1.
    #[arg(long, default_value = "1:1")]
    gamma: String,
    /// Interim fraction of the initial size.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    tau: f64,
    /// Bound factor: final size never exceeds k times the initial size.
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    k: f64,
    /// Planning covariance file; supplies the planning variance and R².
    #[arg(long, value_name = "FILE", conflicts_with_all = ["planning_sigma2", "planning_r2"])]
    planning_cov: Option<PathBuf>,
    /// Planning outcome variance (with --planning-r2 instead of --planning-cov).
    #[arg(long, requires = "planning_r2", allow_negative_numbers = true)]
    planning_sigma2: Option<f64>,
    /// Planning R².
    #[arg(long, requires = "planning_sigma2", allow_negative_numbers = true)]
    planning_r2: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    /// Batch file: a JSON array of scenario records.
    #[arg(long, value_name = "FILE")]
    batch: PathBuf,
    /// Output CSV path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical CPUs.
    #[arg(long)]
    threads: Option<usize>,
    /// Emit per-scenario (label, recalc power, oracle power, target) rows
    /// instead of raw scenario results.
    #[arg(long)]
    figure_data: bool,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_) => 1,
        Error::Domain(_) | Error::Infeasible(_) | Error::Degenerate(_) | Error::Undersized(_) => 2,
        Error::Blinding(_) => 3,
        Error::Search(_) | Error::Io(_) => 4,
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Check(args) => cmd_check(args),
        Command::Plan(args) => cmd_plan(args).map(|_| 0),
        Command::Analyze(args) => cmd_analyze(args).map(|_| 0),
        Command::Recalc(args) => cmd_recalc(args).map(|_| 0),
        Command::Simulate(args) => cmd_simulate(args).map(|_| 0),
    }
}

fn read_to_string(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot read {}: {e}", path.display()),
        ))
    })
}

fn load_covariance(path: &PathBuf) -> Result<CovarianceInput> {
    CovarianceInput::from_json(&read_to_string(path)?)
}

fn cmd_check(args: CheckArgs) -> Result<i32> {
    let input = load_covariance(&args.cov)?;
    let cov = input.resolve();
    let report = check_feasibility(&cov);
    let feasible = report.is_feasible();

    // Closed-form diagnostic for compound-symmetry inputs: the pattern is
    // positive semidefinite exactly when rho >= -1/c.
    let cs_rule = input.cs().and_then(|cs| {
        let c = cs.c() + 1; // rule applies to the full (c+1)-dimensional matrix
        let rho_min = -1.0 / (c as f64 - 1.0);
        (cs.rho() < rho_min).then(|| {
            format!(
                "compound symmetry with {} variables is positive semidefinite \
                 only for rho >= -1/c = {rho_min:.4}; got rho = {}",
                c,
                cs.rho()
            )
        })
    });

    match args.format {
        Format::Json => {
            let doc = serde_json::json!({
                "c": cov.c(),
                "report": report,
                "cs_rule_violation": cs_rule,
                "feasible": feasible,
            });
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
        }
        _ => {
            println!("covariates:            {}", cov.c());
            let eigs: Vec<String> = report.eigenvalues.iter().map(|v| format!("{v:.6}")).collect();
            println!("eigenvalues ascending: {}", eigs.join(", "));
            println!(
                "positive semidefinite: {}",
                if report.is_psd { "yes" } else { "no" }
            );
            match report.r_squared {
                Some(r) => println!("R² = {r:.3}"),
                None => println!("R² = undefined (singular covariate block)"),
            }
            if let Some(cs) = input.cs() {
                let [(l1, m1), (l2, m2)] = cs.eigenvalues();
                println!(
                    "compound symmetry spectrum: {l1:.6} (x{m1}), {l2:.6} (x{m2})"
                );
            }
            if let Some(rule) = &cs_rule {
                println!("{rule}");
            }
            for msg in &report.messages {
                println!("problem: {msg}");
            }
            println!("feasible: {}", if feasible { "yes" } else { "no" });
        }
    }
    Ok(if feasible { 0 } else { 2 })
}

fn parse_design(
    delta: f64,
    alpha: f64,
    power: f64,
    gamma: &str,
    c: usize,
) -> Result<DesignSpec> {
    if !power.is_finite() || power <= 0.0 || power >= 1.0 {
        return Err(Error::Domain(format!(
            "power must lie strictly inside (0, 1), got {power}"
        )));
    }
    DesignSpec::new(delta, Allocation::parse(gamma)?, alpha, 1.0 - power, c)
}

fn cmd_plan(args: PlanArgs) -> Result<()> {
    let (sigma2, r2, c) = match (&args.cov, args.sigma2, args.r2) {
        (Some(path), _, _) => {
            let cov = load_covariance(path)?.resolve();
            let r2 = r_squared_from_covariance(&cov)?;
            (cov.sigma_y_sq(), r2, cov.c())
        }
        (None, Some(s), Some(r)) => (s, r, args.covariates),
        _ => {
            return Err(Error::Parse(
                "either --cov FILE or both --sigma2 and --r2 are required".into(),
            ))
        }
    };
    let design = parse_design(args.delta, args.alpha, args.power, &args.gamma, c)?;
    let plans = plan_all(&design, sigma2, r2)?;

    match args.format {
        Format::Json => {
            println!(
                "{}",
                serde_json::to_string_pretty(&plans).expect("serializable")
            );
        }
        Format::Csv => {
            println!("method,n_raw,n_total,n1,n2");
            for p in &plans {
                println!(
                    "{},{:.6},{},{},{}",
                    p.method, p.n_raw, p.n_total, p.n1, p.n2
                );
            }
        }
        Format::Table => {
            println!(
                "inputs: delta = {}, alpha = {}, power = {}, gamma = {}, sigma2 = {}, R² = {:.4}, c = {}",
                design.delta(),
                design.alpha(),
                args.power,
                design.gamma(),
                sigma2,
                r2,
                c
            );
            println!("{:<8} {:>12} {:>8} {:>6} {:>6}", "method", "n_raw", "total", "n1", "n2");
            for p in &plans {
                println!(
                    "{:<8} {:>12.4} {:>8} {:>6} {:>6}",
                    p.method.to_string(),
                    p.n_raw,
                    p.n_total,
                    p.n1,
                    p.n2
                );
            }
        }
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let text = read_to_string(&args.data)?;
    let data = read_trial_csv(text.as_bytes())?;
    let fit = fit_ancova(&data)?;
    let test = test_superiority(&fit, args.alpha)?;

    match args.format {
        Format::Json => {
            let doc = serde_json::json!({ "fit": fit, "test": test });
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
        }
        _ => {
            let (n1, n2) = data.group_sizes();
            println!("subjects:        {} (n1 = {n1}, n2 = {n2}, c = {})", data.len(), data.c());
            println!("delta_hat:       {:.6}", fit.delta_hat);
            println!("mu1_hat:         {:.6}", fit.mu1_hat);
            println!("mu2_hat:         {:.6}", fit.mu2_hat);
            let betas: Vec<String> = fit.beta_hat.iter().map(|b| format!("{b:.6}")).collect();
            println!("beta_hat:        [{}]", betas.join(", "));
            println!("sigma_y_sq_hat:  {:.6}", fit.sigma_y_sq_hat);
            println!("r_sq_hat:        {:.6}", fit.r_sq_hat);
            println!("q_z:             {:.6}", fit.q_z);
            println!("var(delta_hat):  {:.6}", fit.var_delta_hat);
            println!("t:               {:.6}", fit.t_stat);
            println!("df:              {}", fit.df);
            println!("p (one-sided):   {:.6}", fit.p_one_sided);
            println!(
                "superiority at alpha = {} (one-sided {}): {} (critical t = {:.6})",
                args.alpha,
                args.alpha / 2.0,
                if test.reject { "reject H0" } else { "fail to reject H0" },
                test.t_crit
            );
        }
    }
    Ok(())
}

fn cmd_recalc(args: RecalcArgs) -> Result<()> {
    let text = read_to_string(&args.data)?;
    let interim = read_interim_csv(text.as_bytes())?;

    let (sigma2, r2) = match (&args.planning_cov, args.planning_sigma2, args.planning_r2) {
        (Some(path), _, _) => {
            let cov = load_covariance(path)?.resolve();
            if cov.c() != interim.c() {
                return Err(Error::Domain(format!(
                    "planning covariance has {} covariates, interim data has {}",
                    cov.c(),
                    interim.c()
                )));
            }
            let r2 = r_squared_from_covariance(&cov)?;
            (cov.sigma_y_sq(), r2)
        }
        (None, Some(s), Some(r)) => (s, r),
        _ => {
            return Err(Error::Parse(
                "either --planning-cov FILE or both --planning-sigma2 and \
                 --planning-r2 are required"
                    .into(),
            ))
        }
    };
    let design = parse_design(args.delta, args.alpha, args.power, &args.gamma, interim.c())?;
    let cfg = RecalcConfig::new(design, sigma2, r2, args.tau, args.k)?;
    let result = run_recalc(&cfg, &interim)?;

    match args.format {
        Format::Json => {
            println!(
                "{}",
                serde_json::to_string_pretty(&result).expect("serializable")
            );
        }
        _ => {
            println!("blinded sample-size recalculation");
            for (step, value) in &result.audit {
                if step == "sigma_tau_sq" || step == "n_rec_raw" {
                    println!("{step:<14} {value:.6}");
                } else {
                    println!("{step:<14} {value:.0}");
                }
            }
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(Error::Domain("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Search(format!("thread pool: {e}")))?;
    }
    let specs = read_batch(&read_to_string(&args.batch)?)?;

    let bytes = if args.figure_data {
        let rows: Result<Vec<_>> = specs.iter().map(figure_row).collect();
        write_figure_csv(&rows?, Vec::new())?
    } else {
        write_batch_csv(&run_batch(&specs), Vec::new())?
    };
    match &args.out {
        Some(path) => {
            fs::write(path, &bytes)?;
        }
        None => {
            std::io::stdout().write_all(&bytes)?;
        }
    }
    Ok(())
}
