use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pexprk::harness::{format_csv, run_convergence_study, HarnessError, PartialConfig};
use pexprk::tableaux::{
    check_order_conditions_with, dump_tableau, dump_transformed, tableau, transform,
    ConditionForm,
};

/// Partitioned exponential Runge–Kutta experiments.
#[derive(Parser)]
#[command(name = "pexprk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study and write CSV.
    Run(RunArgs),
    /// Print stiff order condition residuals on random matrices.
    CheckOrder(CheckOrderArgs),
    /// Print the coefficients of a catalog method.
    DumpTableau(DumpArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with any of the options below (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// gray-scott or oracle.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    /// none, species, space, physics or imex.
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    order: Option<u32>,
    /// orig, tran or part.
    #[arg(long)]
    form: Option<String>,
    /// full or block.
    #[arg(long)]
    jacobian: Option<String>,
    /// T0:TF
    #[arg(long)]
    tspan: Option<String>,
    /// J0:J1, steps h = (TF - T0)·2^-j.
    #[arg(long)]
    steps_pow2: Option<String>,
    /// Explicit comma-separated step sizes.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<f64>>,
    #[arg(long)]
    krylov_tol: Option<f64>,
    #[arg(long)]
    m_max: Option<usize>,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the 300×300 grid.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Write 0 in the wall_ms column so output is reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct CheckOrderArgs {
    #[arg(long)]
    order: u32,
    #[arg(long, default_value_t = 6)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use b_j(0) and φ_k(0) in place of b_j(L) and φ_k(L).
    #[arg(long)]
    weakened: bool,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    order: u32,
    #[arg(long)]
    transformed: bool,
}

const CONDITION_TOL: f64 = 1e-10;

fn run(args: RunArgs) -> Result<(), HarnessError> {
    let file = match &args.config {
        Some(p) => PartialConfig::from_json_file(p)?,
        None => PartialConfig::default(),
    };
    let flags = PartialConfig {
        problem: args.problem,
        grid: args.grid,
        partition: args.partition,
        order: args.order,
        form: args.form,
        jacobian: args.jacobian,
        tspan: args.tspan,
        steps_pow2: args.steps_pow2,
        steps: args.steps,
        krylov_tol: args.krylov_tol,
        m_max: args.m_max,
        out: args.out,
        paper_scale: args.paper_scale.then_some(true),
        seed: args.seed,
        timing: args.no_timing.then_some(false),
    };
    let cfg = file.merged(flags).resolve()?;
    let study = run_convergence_study(&cfg)?;
    let text = format_csv(&study.rows, &study.metadata());
    match &cfg.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    for r in &study.rows {
        if let Some(f) = &r.failure {
            eprintln!("h = {:e}: {f}", r.h);
        }
    }
    match study.tail_order(3) {
        Some(p) => eprintln!("{}: mean of last three observed orders {p:.3}", cfg.run_name()),
        None => eprintln!("{}: fewer than three observed orders", cfg.run_name()),
    }
    Ok(())
}

fn check_order(args: CheckOrderArgs) -> Result<(), HarnessError> {
    let t = tableau(args.order)?;
    if args.size == 0 {
        return Err(HarnessError::Config("size must be positive".into()));
    }
    let form = if args.weakened {
        ConditionForm::Weakened
    } else {
        ConditionForm::Strong
    };
    let rs = check_order_conditions_with(&t, 4, args.size, args.seed, form)?;
    println!("# {} size={} seed={} form={form:?}", t.name, args.size, args.seed);
    for r in rs {
        let status = if r.order > t.design_order {
            "beyond design order"
        } else if r.residual <= CONDITION_TOL {
            "ok"
        } else {
            "VIOLATED"
        };
        println!("{:>3} order {} residual {:.3e} {status}", r.label, r.order, r.residual);
    }
    Ok(())
}

fn dump(args: DumpArgs) -> Result<(), HarnessError> {
    let t = tableau(args.order)?;
    if args.transformed {
        print!("{}", dump_transformed(&transform(&t)?));
    } else {
        print!("{}", dump_tableau(&t));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::CheckOrder(a) => check_order(a),
        Command::DumpTableau(a) => dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
