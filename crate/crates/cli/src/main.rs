mod eval;
mod images;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cma_core::gradcheck;
use cma_core::AblationVariant;

#[derive(Parser)]
#[command(
    name = "cma",
    version,
    about = "Cascaded mutual attention: saliency evaluation, toy training and gradient checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a directory of saliency maps against ground-truth masks.
    Eval(EvalOpts),
    /// Same as `eval --curves`.
    Curves(EvalOpts),
    /// Train the toy network on synthetic RGB-D scenes.
    Train(TrainOpts),
    /// Compare every analytic gradient with central finite differences.
    Gradcheck(GradcheckOpts),
}

#[derive(Args)]
struct EvalOpts {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Per-image and mean metrics CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail on size-mismatched pairs instead of resampling.
    #[arg(long)]
    strict: bool,
    /// Also write 256-threshold F and E curves next to `--out`.
    #[arg(long)]
    curves: bool,
}

#[derive(Args)]
struct TrainOpts {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "cma")]
    variant: AblationVariant,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Train all five variants and print a comparison table.
    #[arg(long)]
    ablate_all: bool,
}

#[derive(Args)]
struct GradcheckOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_SEEDS)]
    seeds: usize,
    /// Scale one operation's analytic gradient to prove failures are caught.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Check(String),
    Contract(String),
    Io(String),
    SizeMismatch(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Contract(_) => 2,
            CliError::Io(_) => 3,
            CliError::SizeMismatch(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Check(m) | CliError::Contract(m) | CliError::Io(m) | CliError::SizeMismatch(m) => f.write_str(m),
        }
    }
}

impl From<cma_core::Error> for CliError {
    fn from(e: cma_core::Error) -> Self {
        match e {
            cma_core::Error::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Contract(e.to_string()),
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("CMA_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Contract(format!("CMA_THREADS must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Contract(e.to_string()))
}

fn run_gradcheck(opts: &GradcheckOpts) -> Result<(), CliError> {
    if let Some(op) = &opts.inject_fault {
        if !gradcheck::cases().iter().any(|c| c.name == op) {
            return Err(CliError::Contract(format!("unknown operation `{op}`")));
        }
    }
    let rows = gradcheck::run_suite(opts.seeds, opts.seed, opts.inject_fault.as_deref())?;
    println!("{:<20} {:>12} {:>10}  status", "op", "worst", "tolerance");
    for r in &rows {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<20} {:>12.3e} {:>10.0e}  {status}", r.op, r.worst, r.tolerance);
    }
    let failed: Vec<String> =
        rows.iter().filter(|r| !r.passed()).map(|r| format!("{} ({:.3e})", r.op, r.worst)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Eval(o) => eval_cmd(&o, o.curves),
        Command::Curves(o) => eval_cmd(&o, true),
        Command::Train(o) => train::run(&train::TrainArgs {
            config: o.config.as_deref(),
            variant: o.variant,
            seed: o.seed,
            out: &o.out,
            ablate_all: o.ablate_all,
        }),
        Command::Gradcheck(o) => run_gradcheck(&o),
    }
}

fn eval_cmd(o: &EvalOpts, curves: bool) -> Result<(), CliError> {
    let args = eval::EvalArgs { pred: &o.pred, gt: &o.gt, out: o.out.as_deref(), strict: o.strict, curves };
    thread_pool()?.install(|| eval::run(&args)).map(|_| ())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
