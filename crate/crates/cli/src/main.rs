mod paper;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use zoloto_core::inequalities::{
    check_bounds, classify_lower_equality, classify_upper_equality, evaluate_case, write_csv, FamilySpec, ScanRow,
    EQ_TOL,
};
use zoloto_core::plans::{
    certify_z2, three_plan_cost, validate_three_plan, verify_optimality_conditions, CertifiedZ2, ThreePlan,
};
use zoloto_core::wasserstein::solve_w2;
use zoloto_core::zolotarev::{common_barycentre, magic_formula_value};
use zoloto_core::{DiscreteMeasure, Error};

/// Exact Z2 and W2 between discrete measures, with certificates.
#[derive(Parser, Debug)]
#[command(name = "zoloto", version)]
struct Cli {
    /// Worker threads for `scan` (1 gives the reference ordering and timing).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quadratic Wasserstein distance.
    W2 {
        #[command(flatten)]
        pair: PairArgs,
        /// Write the optimal coupling as JSON.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Certified Z2 bracket.
    Z2 {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Full certificate: bracket, field, 3-plan and optimality residuals.
    Certify {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Write the certificate (field and plan) as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check a candidate 3-plan against the certified bracket.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Lower and upper bounds relating Z2 and W2.
    Bounds {
        #[command(flatten)]
        pair: PairArgs,
        /// Equality tolerance on slacks.
        #[arg(long, default_value_t = EQ_TOL)]
        tol: f64,
    },
    /// Reproduce a worked example against its closed forms.
    Paper {
        #[command(subcommand)]
        example: paper::Example,
        #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
        format: Format,
    },
    /// Sweep a family of pairs and write one CSV row per pair.
    Scan {
        #[command(subcommand)]
        family: Family,
        #[arg(long, default_value_t = 0, global = true)]
        seed: u64,
        /// CSV destination (stdout when omitted).
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct PairArgs {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Family {
    /// Reflected two-atom pairs with `a` fixed and `b` on a grid.
    TwoAtom {
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long)]
        b_from: f64,
        #[arg(long)]
        b_to: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Quantile-discretised centred Gaussians.
    Gaussian {
        #[arg(long, default_value_t = 1.0)]
        sigma_mu: f64,
        #[arg(long)]
        sigma_from: f64,
        #[arg(long)]
        sigma_to: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 200)]
        atoms: usize,
    },
    /// Symmetric two-point measure against its dilations.
    Dilation {
        #[arg(long)]
        lambda_from: f64,
        #[arg(long)]
        lambda_to: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Random centred pairs.
    Random {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        atoms: usize,
        #[arg(long, default_value_t = 20)]
        n: usize,
    },
    /// Symmetric two-point measure against slightly wider copies.
    Noreverse {
        #[arg(long, default_value_t = 1)]
        n_from: usize,
        #[arg(long, default_value_t = 100)]
        n_to: usize,
    },
}

/// Input that parsed but is unusable (exit 2).
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ZOLOTO_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 input error, 3 dimension or format error, 4 not certified.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::DimensionMismatch { .. } => 3,
                Error::NotCertified(_) => 4,
                _ => 2,
            };
        }
        if cause.is::<paper::Mismatch>() {
            return 4;
        }
    }
    2
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::W2 { pair, plan } => cmd_w2(&pair, plan.as_deref()),
        Command::Z2 { pair, tol } => cmd_z2(&pair, tol),
        Command::Certify { pair, tol, out, plan } => cmd_certify(&pair, tol, out.as_deref(), plan.as_deref()),
        Command::Bounds { pair, tol } => cmd_bounds(&pair, tol),
        Command::Paper { example, format } => paper::run(&example, format == Format::Csv),
        Command::Scan { family, seed, out } => cmd_scan(&family, seed, out.as_deref(), cli.threads),
    }
}

fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m = DiscreteMeasure::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(m)
}

fn read_pair(pair: &PairArgs) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let mu = read_measure(&pair.mu)?;
    let nu = read_measure(&pair.nu)?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { left: mu.dim(), right: nu.dim() })
            .with_context(|| format!("{} and {}", pair.mu.display(), pair.nu.display()));
    }
    Ok((mu, nu))
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= 1e-2) {
        bail!(InputError(format!("--tol must lie in (0, 1e-2], got {tol}")));
    }
    Ok(())
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_w2(pair: &PairArgs, plan: Option<&Path>) -> Result<u8> {
    let (mu, nu) = read_pair(pair)?;
    let sol = solve_w2(&mu, &nu)?;
    if let Some(path) = plan {
        write_json(path, &sol.plan)?;
    }
    print_json(&json!({ "w2": sol.w2, "w2_squared": sol.w2 * sol.w2 }))?;
    Ok(0)
}

fn bracket_json(c: &CertifiedZ2, certified: bool) -> serde_json::Value {
    json!({
        "z2": c.midpoint(),
        "z2_lower": c.lower,
        "z2_upper": c.upper,
        "gap": c.gap,
        "certified": certified,
    })
}

fn mismatch_json(distance: f64) -> serde_json::Value {
    json!({ "z2": "inf", "reason": "barycentre mismatch", "distance": distance })
}

fn cmd_z2(pair: &PairArgs, tol: f64) -> Result<u8> {
    check_tol(tol)?;
    let (mu, nu) = read_pair(pair)?;
    match certify_z2(&mu, &nu, tol) {
        Ok(c) => {
            print_json(&bracket_json(&c, true))?;
            Ok(0)
        }
        Err(Error::NotCertified(c)) => {
            print_json(&bracket_json(&c, false))?;
            eprintln!("not certified: gap {:e} exceeds {tol:e}", c.gap);
            Ok(4)
        }
        Err(Error::BarycentreMismatch { distance }) => {
            print_json(&mismatch_json(distance))?;
            Ok(0)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_certify(pair: &PairArgs, tol: f64, out: Option<&Path>, candidate: Option<&Path>) -> Result<u8> {
    check_tol(tol)?;
    let (mu, nu) = read_pair(pair)?;
    let (cert, certified) = match certify_z2(&mu, &nu, tol) {
        Ok(c) => (c, true),
        Err(Error::NotCertified(c)) => (*c, false),
        Err(Error::BarycentreMismatch { distance }) => {
            print_json(&mismatch_json(distance))?;
            return Ok(0);
        }
        Err(e) => return Err(e.into()),
    };
    let validation = validate_three_plan(&cert.primal, &mu, &nu);
    let optimality = verify_optimality_conditions(&cert.dual, &cert.primal, 1e-5)?;
    // Magic formula in coordinates centred at the common barycentre.
    let c = common_barycentre(&mu, &nu)?;
    let shift: Vec<f64> = c.iter().map(|v| -v).collect();
    let mut field = cert.dual.field.clone();
    for p in &mut field.points {
        for (x, s) in p.iter_mut().zip(&shift) {
            *x += s;
        }
    }
    let magic = magic_formula_value(&field, &mu.translate(&shift), &nu.translate(&shift))?;
    let mut summary = bracket_json(&cert, certified);
    summary["lp_lower"] = json!(cert.lp_lower);
    summary["rounds"] = json!(cert.rounds);
    summary["support_size"] = json!(cert.support_size);
    summary["field_max_violation"] = json!(cert.dual.max_violation);
    summary["plan_validation"] = serde_json::to_value(&validation)?;
    summary["optimality"] = serde_json::to_value(&optimality)?;
    summary["magic_formula"] = json!(magic);
    if let Some(path) = candidate {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let plan = ThreePlan::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        let check = validate_three_plan(&plan, &mu, &nu);
        let cost = three_plan_cost(&plan);
        summary["candidate"] = json!({
            "valid": check.valid,
            "max_residual": check.max_residual(),
            "cost": cost,
            "excess_over_lower": cost - cert.lower,
            "optimal": check.valid && cost - cert.lower <= tol,
        });
    }
    if let Some(path) = out {
        write_json(path, &cert)?;
    }
    print_json(&summary)?;
    Ok(if certified { 0 } else { 4 })
}

fn cmd_bounds(pair: &PairArgs, tol: f64) -> Result<u8> {
    check_tol(tol)?;
    let (mu, nu) = read_pair(pair)?;
    let report = check_bounds(&mu, &nu, tol)?;
    let lower_equality = classify_lower_equality(&mu, &nu, &report, 1e-9);
    let (is_dilation, lambda) = classify_upper_equality(&mu, &nu, 1e-9);
    let mut v = serde_json::to_value(&report)?;
    v["ratio_sq"] = json!(report.ratio_sq());
    v["ratio_lin"] = json!(report.ratio_lin());
    v["measures_equal"] = json!(lower_equality);
    v["is_dilation"] = json!(is_dilation);
    v["dilation_factor"] = json!(lambda.filter(|_| is_dilation));
    if report.barycentre_mismatch {
        v["z2"] = json!("inf");
    }
    print_json(&v)?;
    Ok(if report.certified || report.barycentre_mismatch { 0 } else { 4 })
}

fn grid(from: f64, to: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !from.is_finite() || !to.is_finite() {
        bail!(InputError("grid needs finite endpoints and --steps >= 1".into()));
    }
    if steps == 1 {
        return Ok(vec![from]);
    }
    Ok((0..steps).map(|k| from + (to - from) * k as f64 / (steps - 1) as f64).collect())
}

fn family_spec(family: &Family) -> Result<FamilySpec> {
    Ok(match *family {
        Family::TwoAtom { a, b_from, b_to, steps } => {
            if !(a > 0.0 && b_from > 0.0 && b_to > 0.0) || steps == 0 {
                bail!(InputError("two-atom needs positive --a, --b-from, --b-to and --steps".into()));
            }
            FamilySpec::TwoAtom { a, b_from, b_to, steps }
        }
        Family::Gaussian { sigma_mu, sigma_from, sigma_to, steps, atoms } => {
            if !(sigma_mu >= 0.0 && sigma_from >= 0.0 && sigma_to >= 0.0) || atoms == 0 {
                bail!(InputError("gaussian needs non-negative sigmas and --atoms >= 1".into()));
            }
            FamilySpec::Gaussian1d { sigma_mu, sigmas: grid(sigma_from, sigma_to, steps)?, n_atoms: atoms }
        }
        Family::Dilation { lambda_from, lambda_to, steps } => {
            if !(lambda_from > 0.0 && lambda_to > 0.0) {
                bail!(InputError("dilation factors must be positive".into()));
            }
            FamilySpec::Dilation { lambdas: grid(lambda_from, lambda_to, steps)? }
        }
        Family::Random { dim, atoms, n } => {
            if dim == 0 || dim > 3 || atoms == 0 || atoms > 100 {
                bail!(InputError("random needs 1 <= --dim <= 3 and 1 <= --atoms <= 100".into()));
            }
            FamilySpec::Random { dim, atoms, n }
        }
        Family::Noreverse { n_from, n_to } => {
            if n_from == 0 || n_to < n_from {
                bail!(InputError("noreverse needs 1 <= --n-from <= --n-to".into()));
            }
            FamilySpec::NoReverse { ks: (n_from..=n_to).collect() }
        }
    })
}

fn cmd_scan(family: &Family, seed: u64, out: Option<&Path>, threads: Option<usize>) -> Result<u8> {
    let spec = family_spec(family)?;
    let cases = spec.cases(seed).map_err(|e| InputError(e.to_string()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            bail!(InputError("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build()?;
    let rows: Vec<ScanRow> =
        pool.install(|| cases.par_iter().map(evaluate_case).collect::<zoloto_core::Result<Vec<_>>>())?;
    match out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(&rows, io::BufWriter::new(file))?;
        }
        None => write_csv(&rows, io::stdout().lock())?,
    }
    log::info!("scan: {} rows", rows.len());
    Ok(0)
}
